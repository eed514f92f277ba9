"""
Fit Stage
One marginal baseline-category logit model per feature.
"""

import logging
from collections import Counter

from multipfa.multinomial import fit_marginals
from multipfa.settings import get_n_jobs
from multipfa.states import AnalyzeOptions, Dataset, PipelineState, RunPhase

logger = logging.getLogger(__name__)


def fit_stage(state: dict) -> dict:
    """
    Fit Stage: Dataset -> list of MarginalFit in feature order. Individual
    fit failures are counted, never fatal.
    """
    options: AnalyzeOptions = state["options"]
    run: PipelineState = state["run"]
    dataset: Dataset = state["dataset"]

    logger.info("=== FITTING %d MARGINAL MODELS ===", dataset.p)
    run.log(RunPhase.FITTING, "fit", f"Fitting {dataset.p} features")

    try:
        fits = fit_marginals(
            dataset.features,
            dataset.model_response(),
            dataset.q,
            options.fit,
            n_jobs=get_n_jobs(options.n_jobs),
        )
    except Exception as e:
        logger.exception("Marginal fitting crashed")
        run.mark_failed(f"fitting failed: {e}")
        return {**state, "run": run}

    failures = Counter(f.reason.value for f in fits if not f.ok)
    run.log(
        RunPhase.FITTING,
        "fit",
        f"{len(fits) - sum(failures.values())} of {len(fits)} fits converged",
        failures=dict(failures),
    )
    return {**state, "run": run, "fits": fits}
