"""
Factor Stage
Principal factor approximation and FDP curve per baseline-category pair.
"""

import logging

from multipfa.pfa import run_pfa
from multipfa.states import (
    AnalyzeOptions,
    Dataset,
    ErrorKind,
    PipelineState,
    RunPhase,
)

logger = logging.getLogger(__name__)


def factor_stage(state: dict) -> dict:
    """
    Factor Stage: one (FactorModel, adjusted p-values, FdpReport) per pair.
    An explicit k larger than the number of tested features is a
    validation failure.
    """
    options: AnalyzeOptions = state["options"]
    run: PipelineState = state["run"]
    dataset: Dataset = state["dataset"]

    logger.info("=== PRINCIPAL FACTOR APPROXIMATION ===")

    results = []
    for inference in state["inferences"]:
        label = dataset.pair_label(inference.category)
        try:
            model, p_adjusted, report = run_pfa(inference, options.pfa)
        except ValueError as e:
            logger.error("%s: %s", label, e)
            run.mark_failed(f"{label}: {e}", ErrorKind.VALIDATION)
            return {**state, "run": run}

        t_alpha = report.t_alpha
        run.log(
            RunPhase.FACTORING,
            "factor",
            f"{label}: k={model.k}, t_alpha={'none' if t_alpha is None else f'{t_alpha:.3g}'}",
        )
        results.append(
            {
                "inference": inference,
                "model": model,
                "p_adjusted": p_adjusted,
                "report": report,
            }
        )

    return {**state, "run": run, "results": results}
