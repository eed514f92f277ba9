"""
TIC Stage
Optional total-ion-count normalization of every spectrum.
"""

import logging

from multipfa.data import tic_normalize
from multipfa.errors import DatasetError
from multipfa.states import ErrorKind, PipelineState, RunPhase

logger = logging.getLogger(__name__)


def tic_stage(state: dict) -> dict:
    run: PipelineState = state["run"]
    logger.info("=== TIC NORMALIZATION ===")

    try:
        dataset = tic_normalize(state["dataset"])
    except DatasetError as e:
        logger.error("TIC normalization failed: %s", e)
        run.mark_failed(str(e), ErrorKind.VALIDATION)
        return {**state, "run": run}

    run.log(RunPhase.NORMALIZING, "tic", "Rows divided by their total ion count")
    return {**state, "run": run, "dataset": dataset}
