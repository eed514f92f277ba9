"""
Monte Carlo study of the full pipeline under two dependency scenarios.

Scenario 1: all features i.i.d. N(0, 1).
Scenario 2: the first p1 (active) features i.i.d. N(0, 1), the remaining p0
features equi-correlated with correlation rho, the two blocks independent.

Every repetition owns a PCG64 stream spawned from SeedSequence(seed), so the
result does not depend on execution order or worker count.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from joblib import Parallel, delayed
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from multipfa.errors import ConfigError, InputOutputError
from multipfa.mmm import infer_all
from multipfa.multinomial import fit_marginals, probability_matrix
from multipfa.pfa import empirical_counts, fdp_estimate, run_pfa
from multipfa.states import (
    FitOptions,
    KPolicy,
    PValueKind,
    RepetitionRecord,
    SimConfig,
    SummaryRow,
    SummaryTable,
)

logger = logging.getLogger(__name__)

# Extra entropy word that separates the bootstrap stream from the repetition streams.
BOOTSTRAP_STREAM = 0xB007


def load_sim_config(path: Optional[str | Path] = None, **overrides) -> SimConfig:
    """
    Build a SimConfig from a KEY=VALUE file (keys are field names, any case)
    with keyword overrides on top. None-valued overrides are ignored.
    """
    values: dict[str, object] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InputOutputError(f"config file not found: {path}")
        values.update({k.lower(): v for k, v in dotenv_values(path).items() if v is not None})
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid simulation config: {e}") from e


# ============== Data generation ==============


def gen_features_scenario1(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, p))


def gen_features_scenario2(
    n: int, p: int, p1: int, rho: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Active block i.i.d. N(0, 1); inactive block equi-correlated. For rho >= 0
    the inactive block is sqrt(rho) G 1^T + sqrt(1 - rho) E; for negative rho
    it is sqrt(1 - rho) (E + d * rowmean(E) 1^T) with
    d = sqrt(1 + rho p0 / (1 - rho)) - 1. Both are exact and O(n p0).
    """
    p0 = p - p1
    if p1 >= p:
        raise ValueError(f"p1={p1} leaves no inactive features (p={p})")
    if not rho < 1 or (p0 > 1 and rho <= -1.0 / (p0 - 1)):
        raise ValueError(f"rho={rho} is not a valid equi-correlation for p0={p0}")

    active = rng.standard_normal((n, p1))
    if rho >= 0:
        common = rng.standard_normal(n)
        noise = rng.standard_normal((n, p0))
        inactive = np.sqrt(rho) * common[:, None] + np.sqrt(1.0 - rho) * noise
    else:
        noise = rng.standard_normal((n, p0))
        shift = np.sqrt(1.0 + rho * p0 / (1.0 - rho)) - 1.0
        inactive = np.sqrt(1.0 - rho) * (noise + shift * noise.mean(axis=1, keepdims=True))
    return np.hstack([active, inactive])


def gen_response(
    x: np.ndarray, p1: int, beta_active: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Three-category response with zero intercepts and the same slope
    beta_active on each of the first p1 features for both non-baseline
    categories.
    """
    eta = beta_active * x[:, :p1].sum(axis=1)
    probs = probability_matrix(np.column_stack([eta, eta]))
    u = rng.random(x.shape[0])
    cumulative = np.cumsum(probs, axis=1)
    return 1 + (u[:, None] > cumulative[:, :2]).sum(axis=1)


def generate(cfg: SimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.scenario == 1:
        x = gen_features_scenario1(cfg.n, cfg.p, rng)
    else:
        x = gen_features_scenario2(cfg.n, cfg.p, cfg.p1, cfg.rho, rng)
    return x, gen_response(x, cfg.p1, cfg.beta_active, rng)


# ============== Repetitions ==============


def run_repetition(
    cfg: SimConfig, seed: np.random.SeedSequence, rep: int
) -> list[RepetitionRecord]:
    """One repetition: generate, fit, infer, factor, and count against the truth."""
    with threadpool_limits(limits=1):
        rng = np.random.Generator(np.random.PCG64(seed))
        x, y = generate(cfg, rng)
        fits = fit_marginals(x, y, 3, FitOptions(), n_jobs=1)
        failed = sum(not f.ok for f in fits)
        options = cfg.pfa_options()
        is_null = np.arange(cfg.p) >= cfg.p1

        records = []
        for inference in infer_all(fits, 3):
            pair_options = options
            if len(inference.z) < cfg.k:
                logger.warning("rep %d: only %d features tested, k lowered", rep, len(inference.z))
                pair_options = options.model_copy(
                    update={"k_policy": KPolicy.explicit(len(inference.z))}
                )
            model, p_adjusted, report = run_pfa(inference, pair_options)
            counted = (
                p_adjusted if options.count_kind == PValueKind.ADJUSTED else inference.p_raw
            )
            null = is_null[inference.index]

            at_t = empirical_counts(counted, cfg.t_fixed, null)
            _, fdp_hat = fdp_estimate(
                inference.z, model.loadings, model.a, model.w_hat, cfg.t_fixed, at_t.R
            )
            s_alpha = 0
            if report.t_alpha is not None:
                s_alpha = empirical_counts(counted, report.t_alpha, null).S

            if at_t.R != at_t.V + at_t.S or at_t.S > cfg.p1 or at_t.V > cfg.p - cfg.p1:
                raise RuntimeError(
                    f"rep {rep}: inconsistent counts R={at_t.R} V={at_t.V} S={at_t.S}"
                )

            records.append(
                RepetitionRecord(
                    rep=rep,
                    category=inference.category,
                    fdp_hat=fdp_hat,
                    R=at_t.R,
                    V=at_t.V,
                    S=at_t.S,
                    t_alpha=report.t_alpha,
                    S_alpha=s_alpha,
                    k=model.k,
                    failed_fits=failed,
                )
            )
    return records


def run_monte_carlo(
    cfg: SimConfig, n_jobs: int = 1
) -> tuple[SummaryTable, list[RepetitionRecord]]:
    """
    Run cfg.reps repetitions and summarize them per category. Records are
    merged in repetition order.
    """
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    logger.info(
        "Monte Carlo: scenario %d, n=%d, p=%d, p1=%d, reps=%d",
        cfg.scenario, cfg.n, cfg.p, cfg.p1, cfg.reps,
    )

    if n_jobs == 1:
        batches = [run_repetition(cfg, s, i) for i, s in enumerate(streams)]
    else:
        batches = Parallel(n_jobs=n_jobs)(
            delayed(run_repetition)(cfg, s, i) for i, s in enumerate(streams)
        )

    records = [r for batch in batches for r in batch]
    return aggregate_records(records, cfg), records


# ============== Aggregation ==============


def _spread(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _bootstrap_median_se(values: np.ndarray, resamples: int, rng: np.random.Generator) -> float:
    if len(values) < 2:
        return 0.0
    draws = rng.integers(0, len(values), size=(resamples, len(values)))
    return _spread(np.median(values[draws], axis=1))


def aggregate_records(
    records: Sequence[RepetitionRecord], cfg: SimConfig
) -> SummaryTable:
    """Across-repetition summary per category; usable on reloaded records.csv rows."""
    frame = records_table(records)
    rows = []
    for category, group in frame.groupby("category", sort=True):
        group = group.sort_values("rep")
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([cfg.seed, BOOTSTRAP_STREAM, int(category)]))
        )
        fdp = group["fdp_hat"].to_numpy(dtype=float)
        t_alpha = group["t_alpha"].to_numpy(dtype=float)
        found = t_alpha[np.isfinite(t_alpha)]
        rows.append(
            SummaryRow(
                category=int(category),
                median_fdp=float(np.median(fdp)),
                se_fdp=_bootstrap_median_se(fdp, cfg.bootstrap, rng),
                mean_R=float(group["R"].mean()),
                se_R=_spread(group["R"].to_numpy(dtype=float)),
                mean_S=float(group["S"].mean()),
                se_S=_spread(group["S"].to_numpy(dtype=float)),
                median_t_alpha=float(np.median(found)) if found.size else None,
                mean_S_alpha=float(group["S_alpha"].mean()),
            )
        )
    return SummaryTable(alpha=cfg.alpha, t_fixed=cfg.t_fixed, reps=cfg.reps, rows=rows)


def records_table(records: Sequence[RepetitionRecord]) -> pd.DataFrame:
    columns = list(RepetitionRecord.model_fields)
    return pd.DataFrame([r.model_dump() for r in records], columns=columns)


def read_records(path: str | Path) -> list[RepetitionRecord]:
    """Reload records.csv for re-aggregation."""
    frame = pd.read_csv(path)
    frame["t_alpha"] = frame["t_alpha"].astype(object).where(frame["t_alpha"].notna(), None)
    return [RepetitionRecord.model_validate(row) for row in frame.to_dict("records")]


def summary_table(table: SummaryTable) -> pd.DataFrame:
    """Summary in the column layout of the published simulation tables."""
    a = f"{table.alpha:g}"
    return pd.DataFrame(
        [
            {
                "c": row.category,
                "Median of FDP_hat(t)": row.median_fdp,
                "Std. Error of FDP_hat(t)": row.se_fdp,
                "Mean of R(t)": row.mean_R,
                "Std. Error of R(t)": row.se_R,
                "Mean of S(t)": row.mean_S,
                "Std. Error of S(t)": row.se_S,
                f"Median of t_{a}": row.median_t_alpha,
                f"Mean S(t_{a})": row.mean_S_alpha,
            }
            for row in table.rows
        ]
    )
