"""
Inference Stage
Joint covariance, Z-statistics and raw p-values per baseline-category pair.
"""

import logging

from multipfa.mmm import infer_all
from multipfa.states import Dataset, ErrorKind, PipelineState, RunPhase

logger = logging.getLogger(__name__)


def infer_stage(state: dict) -> dict:
    run: PipelineState = state["run"]
    dataset: Dataset = state["dataset"]
    fits = state["fits"]

    logger.info("=== JOINT INFERENCE ===")

    if not any(f.ok for f in fits):
        run.mark_failed("no marginal fit converged; nothing to test", ErrorKind.VALIDATION)
        return {**state, "run": run}

    try:
        inferences = infer_all(fits, dataset.q)
    except ValueError as e:
        logger.error("Inference failed: %s", e)
        run.mark_failed(str(e))
        return {**state, "run": run}

    for inference in inferences:
        run.log(
            RunPhase.INFERRING,
            "infer",
            f"{dataset.pair_label(inference.category)}: {len(inference.z)} features tested",
        )
    return {**state, "run": run, "inferences": inferences}
