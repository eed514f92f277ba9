"""
Load Stage
Reads the input CSV into a validated Dataset.
"""

import logging

from multipfa.data import load_dataset, validate
from multipfa.errors import DatasetError, InputOutputError
from multipfa.states import AnalyzeOptions, ErrorKind, PipelineState, RunPhase

logger = logging.getLogger(__name__)


def load_stage(state: dict) -> dict:
    """
    Load Stage: input CSV -> Dataset. Validation failures mark the run FAILED
    with kind 'validation', unreadable files with kind 'io'.
    """
    options: AnalyzeOptions = state["options"]
    run: PipelineState = state["run"]

    logger.info("=== LOADING ===")
    run.log(RunPhase.LOADING, "load", f"Reading {options.input}")

    try:
        dataset = load_dataset(options.input, options.label, options.baseline)
    except DatasetError as e:
        logger.error("Invalid input: %s", e)
        run.mark_failed(str(e), ErrorKind.VALIDATION)
        return {**state, "run": run}
    except InputOutputError as e:
        logger.error("Cannot read input: %s", e)
        run.mark_failed(str(e), ErrorKind.IO)
        return {**state, "run": run}

    constant = validate(dataset).constant_columns
    if constant:
        logger.warning(
            "%d constant feature columns will be masked: %s",
            len(constant),
            [dataset.feature_names[j] for j in constant[:10]],
        )

    run.log(
        RunPhase.LOADING,
        "load",
        f"Loaded n={dataset.n}, p={dataset.p}, q={dataset.q}",
        baseline=dataset.categories[dataset.baseline - 1],
        constant_columns=len(constant),
    )
    return {**state, "run": run, "dataset": dataset}
