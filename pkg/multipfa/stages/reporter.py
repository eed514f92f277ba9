"""
Report Stage
Writes every per-pair output file once all computation has succeeded.
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Any

import numpy as np

from multipfa.errors import InputOutputError
from multipfa.mmm import feature_table
from multipfa.pfa import fdp_table
from multipfa.states import (
    AnalyzeOptions,
    Dataset,
    ErrorKind,
    FactorModel,
    FdpReport,
    PipelineState,
    RunPhase,
)
from multipfa.tools import (
    init_output_dir,
    safe_output_path,
    write_array_atomic,
    write_frame_atomic,
    write_json_atomic,
    write_jsonl,
)

logger = logging.getLogger(__name__)

# Leading eigenvalues listed in each summary.
SPECTRUM_HEAD = 20


def _finite(value: float) -> float | None:
    return float(value) if np.isfinite(value) else None


def top_features(
    dataset: Dataset, result: dict[str, Any], count: int
) -> list[dict[str, Any]]:
    """The `count` tested features with the largest |Z|, ties broken by feature order."""
    inference = result["inference"]
    order = np.lexsort((inference.index, -np.abs(inference.z)))[:count]
    return [
        {
            "feature": dataset.feature_names[inference.index[i]],
            "z": float(inference.z[i]),
            "p_raw": float(inference.p_raw[i]),
            "p_adjusted": float(result["p_adjusted"][i]),
        }
        for i in order
    ]


def summary_payload(
    dataset: Dataset,
    result: dict[str, Any],
    failures: dict[str, int],
    options: AnalyzeOptions,
) -> dict[str, Any]:
    model: FactorModel = result["model"]
    report: FdpReport = result["report"]
    inference = result["inference"]
    z = inference.z

    return {
        "category": inference.category,
        "pair": dataset.pair_label(inference.category),
        "alpha": report.alpha,
        "t_alpha": report.t_alpha,
        "pvalue_kind": report.pvalue_kind.value,
        "k": model.k,
        "estimator": model.estimator.value,
        "eigenvalues": [float(v) for v in model.eigenvalues[:SPECTRUM_HEAD]],
        "eigen_clamped_mass": model.eigen_clamped_mass,
        "a_clamp_count": model.a_clamp_count,
        "factor_degenerate": model.degenerate,
        "factor_converged": model.converged,
        "n": inference.n,
        "features_total": dataset.p,
        "features_tested": int(len(z)),
        "failed_fits": failures,
        "z_mean": _finite(np.mean(z)) if len(z) else None,
        "z_sd": _finite(np.std(z, ddof=1)) if len(z) > 1 else None,
        "top_features": top_features(dataset, result, options.top),
    }


def report_stage(state: dict) -> dict:
    """
    Report Stage: features_c.csv, fdp_c.csv and summary_c.json per pair,
    optional correlation dumps and fit diagnostics. Adds the written paths
    (relative to the output directory) to state['outputs'].
    """
    options: AnalyzeOptions = state["options"]
    run: PipelineState = state["run"]
    dataset: Dataset = state["dataset"]
    fits = state["fits"]

    logger.info("=== WRITING REPORTS ===")
    run.log(RunPhase.REPORTING, "report", f"Writing to {options.out}")

    failures = dict(sorted(Counter(f.reason.value for f in fits if not f.ok).items()))
    outputs: list[str] = list(state.get("outputs", []))

    try:
        root = init_output_dir(Path(options.out))

        def emit(name: str, writer, payload) -> None:
            writer(safe_output_path(root, name), payload)
            outputs.append(name)

        for result in state["results"]:
            c = result["inference"].category
            emit(
                f"features_{c}.csv",
                write_frame_atomic,
                feature_table(result["inference"], dataset.feature_names, result["p_adjusted"]),
            )
            emit(f"fdp_{c}.csv", write_frame_atomic, fdp_table(result["report"]))
            emit(
                f"summary_{c}.json",
                write_json_atomic,
                summary_payload(dataset, result, failures, options),
            )
            if options.dump_corr:
                emit(f"corr_{c}.{options.dump_corr}", write_array_atomic, result["inference"].corr_hat)

        if options.diagnostics:
            records = [
                fit.diagnostics(j, dataset.feature_names[j]) for j, fit in enumerate(fits)
            ]
            emit(options.diagnostics, write_jsonl, records)

    except InputOutputError as e:
        logger.error("%s", e)
        run.mark_failed(str(e), ErrorKind.IO)
        return {**state, "run": run, "outputs": outputs}

    run.log(RunPhase.REPORTING, "report", f"Wrote {len(outputs)} files")
    run.mark_complete()
    return {**state, "run": run, "outputs": outputs}
