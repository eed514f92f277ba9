"""
Principal factor approximation of the false discovery proportion.

The correlation matrix of the Z-statistics is split into k principal factors
plus a residual; the realized factors are estimated from the Z-vector and
used to estimate the number of false rejections at a threshold t.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import eigh
from scipy.special import ndtr, ndtri

from multipfa.mmm import raw_pvalues
from multipfa.states import (
    CategoryInference,
    Counts,
    FactorEstimator,
    FactorModel,
    FdpReport,
    KPolicy,
    PFAOptions,
    PValueKind,
    Spectrum,
)

logger = logging.getLogger(__name__)


# ============== Spectral step ==============


def spectral_decompose(corr: np.ndarray, sym_tol: float = 1e-8) -> Spectrum:
    """
    Full eigendecomposition, eigenvalues non-increasing and clamped at zero.

    Eigenvector signs are fixed so that the largest-magnitude entry of each
    vector is positive.
    """
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {corr.shape}")
    asymmetry = float(np.max(np.abs(corr - corr.T))) if corr.size else 0.0
    if asymmetry > sym_tol:
        raise ValueError(f"matrix is not symmetric (max deviation {asymmetry:.3g})")
    if corr.size == 0:
        return Spectrum(values=np.empty(0), vectors=np.empty((0, 0)))

    values, vectors = eigh(0.5 * (corr + corr.T))
    values, vectors = values[::-1], vectors[:, ::-1]

    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    vectors = vectors * np.where(signs == 0, 1.0, signs)

    negative = values < 0
    clamped = float(-values[negative].sum())
    if clamped > 0:
        logger.warning(
            "Clamped %d negative eigenvalues (total mass %.3g)", int(negative.sum()), clamped
        )
    return Spectrum(
        values=np.where(negative, 0.0, values), vectors=vectors, clamped_mass=clamped
    )


def choose_k(eigenvalues: np.ndarray, policy: KPolicy) -> int:
    """
    Explicit k is returned as given; otherwise the smallest k such that the
    (k+1)-th eigenvalue carries less than tau of the total.
    """
    p = len(eigenvalues)
    if policy.k is not None:
        if not 0 <= policy.k <= p:
            raise ValueError(f"k={policy.k} outside [0, {p}]")
        return policy.k

    total = float(np.sum(eigenvalues))
    if total <= 0:
        return 0
    shares = np.asarray(eigenvalues) / total
    below = np.flatnonzero(shares < policy.tau)
    return int(below[0]) if below.size else p


def factor_loadings(
    eigenvalues: np.ndarray, eigenvectors: np.ndarray, k: int, eps: float = 1e-6
) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Loadings b (p' x k, column h = sqrt(lambda_h) gamma_h), scale factors
    a_j = max(1 - |b_j|^2, eps)^(-1/2), and the number of clamped a_j.
    """
    p = eigenvectors.shape[0]
    if not 0 <= k <= p:
        raise ValueError(f"k={k} outside [0, {p}]")

    b = eigenvectors[:, :k] * np.sqrt(np.maximum(eigenvalues[:k], 0.0))[None, :]
    residual = 1.0 - np.sum(b**2, axis=1)
    clamped = residual < eps
    if clamped.any():
        logger.warning("Clamped scale factor for %d features", int(clamped.sum()))
    a = 1.0 / np.sqrt(np.maximum(residual, eps))
    return b, a, int(clamped.sum())


# ============== Factor estimation ==============


def l2_subset(z: np.ndarray, keep_fraction: float = 0.95) -> np.ndarray:
    """
    Indices of the floor(keep_fraction * p') smallest |z|, ties broken by
    feature index.
    """
    z = np.asarray(z, dtype=float)
    keep = math.floor(keep_fraction * len(z) + 1e-9)
    order = np.lexsort((np.arange(len(z)), np.abs(z)))
    return order[:keep]


def estimate_factors_l2(
    z: np.ndarray, b: np.ndarray, keep_fraction: float = 0.95
) -> tuple[np.ndarray, bool]:
    """
    Least-squares factors over the trimmed subset of small |z|.

    Returns:
        (w_hat, degenerate) where degenerate flags a rank-deficient design;
        the minimum-norm solution is returned in that case
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    k = b.shape[1]
    if k < 1:
        raise ValueError("factor estimation needs k >= 1")
    if b.shape[0] < k:
        raise ValueError(f"need at least k={k} features, got {b.shape[0]}")

    kept = l2_subset(z, keep_fraction)
    w_hat, _, rank, _ = np.linalg.lstsq(b[kept], np.asarray(z)[kept], rcond=None)
    degenerate = rank < k
    if degenerate:
        logger.warning("L2 factor design has rank %d < k=%d", rank, k)
    return w_hat, bool(degenerate)


def _l1_objective(z: np.ndarray, b: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(np.abs(z - b @ w)))


def _lad_vertex(
    z: np.ndarray, b: np.ndarray, w: np.ndarray, tol: float = 1e-9
) -> tuple[np.ndarray, bool]:
    """
    Snap w to the basic solution through the k smallest residuals and test
    the subgradient condition there.

    Returns:
        (w_vertex, optimal); w is returned unchanged when the k rows are
        rank-deficient
    """
    k = b.shape[1]
    basis = np.argsort(np.abs(z - b @ w), kind="stable")[:k]
    w_vertex, _, rank, _ = np.linalg.lstsq(b[basis], z[basis], rcond=None)
    if rank < k:
        return w, False

    rest = np.ones(len(z), dtype=bool)
    rest[basis] = False
    signs = np.sign(z[rest] - b[rest] @ w_vertex)
    # optimal iff some s in [-1, 1]^k balances the signed non-basic rows
    s = np.linalg.solve(b[basis].T, -(b[rest].T @ signs))
    return w_vertex, bool(np.all(np.abs(s) <= 1.0 + tol))


def estimate_factors_l1(
    z: np.ndarray,
    b: np.ndarray,
    eps: float = 1e-8,
    max_iter: int = 200,
    tol: float = 1e-8,
    rtol: float = 1e-10,
) -> tuple[np.ndarray, bool]:
    """
    Least-absolute-deviation factors over all features by iteratively
    reweighted least squares on the smoothed objective sum sqrt(r^2 + eps^2),
    finished by snapping to the nearest basic solution when that does not
    raise the objective.

    IRLS stops when the step is at most `tol` or the smoothed objective
    changes by at most `rtol` relative. The estimate also counts as converged
    when the snapped solution satisfies the LAD optimality condition.

    Returns:
        (w_hat, converged)
    """
    z = np.asarray(z, dtype=float)
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[1] < 1:
        raise ValueError("factor estimation needs k >= 1")

    w, *_ = np.linalg.lstsq(b, z, rcond=None)
    smoothed = np.sum(np.sqrt((z - b @ w) ** 2 + eps**2))
    converged = False

    for _ in range(max_iter):
        weights = 1.0 / np.sqrt((z - b @ w) ** 2 + eps**2)
        weighted = b * weights[:, None]
        w_new, *_ = np.linalg.lstsq(b.T @ weighted, weighted.T @ z, rcond=None)

        new_smoothed = np.sum(np.sqrt((z - b @ w_new) ** 2 + eps**2))
        if new_smoothed > smoothed * (1 + rtol):
            logger.debug("L1 objective increased; stopping at the previous iterate")
            break

        step = float(np.max(np.abs(w_new - w)))
        change = (smoothed - new_smoothed) / smoothed
        w, smoothed = w_new, new_smoothed
        if step <= tol or change <= rtol:
            converged = True
            break

    if b.shape[0] >= b.shape[1]:
        w_vertex, optimal = _lad_vertex(z, b, w)
        if _l1_objective(z, b, w_vertex) <= _l1_objective(z, b, w):
            w = w_vertex
            converged = converged or optimal

    if not converged:
        logger.warning(
            "L1 factor estimate did not converge (objective %.6g)", _l1_objective(z, b, w)
        )
    return w, converged


# ============== FDP estimation ==============


def _check_threshold(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold t={t} outside [0, 1]")


def fdp_estimate(
    z: np.ndarray,
    b: np.ndarray,
    a: np.ndarray,
    w_hat: np.ndarray,
    t: float,
    r_t: int,
) -> tuple[float, float]:
    """
    Estimated false rejections V_hat(t), summed over all p' features, and
    FDP_hat(t) = min(V_hat, R(t)) / R(t), zero when nothing is rejected.
    """
    _check_threshold(t)
    if r_t < 0:
        raise ValueError("rejection count must be non-negative")

    eta = _common_component(b, w_hat, len(z))
    quantile = ndtri(t / 2.0)
    v_hat = float(np.sum(ndtr(a * (quantile + eta)) + ndtr(a * (quantile - eta))))
    fdp_hat = min(v_hat, r_t) / r_t if r_t > 0 else 0.0
    return v_hat, fdp_hat


def _common_component(b: np.ndarray, w_hat: np.ndarray, p: int) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if p == 0 or b.size == 0:
        return np.zeros(p)
    b = b.reshape(p, -1)
    return b @ np.asarray(w_hat, dtype=float)


def adjusted_pvalues(
    z: np.ndarray, b: np.ndarray, a: np.ndarray, w_hat: np.ndarray
) -> np.ndarray:
    """Dependency-adjusted p-values 2 * Phi(-|a_j (z_j - b_j W_hat)|)."""
    z = np.asarray(z, dtype=float)
    return raw_pvalues(a * (z - _common_component(b, w_hat, len(z))))


def empirical_counts(
    pvalues: np.ndarray, t: float, truth: Optional[np.ndarray] = None
) -> Counts:
    """
    R(t) = #{p_j <= t}; with a null indicator also V(t) (true nulls rejected)
    and S(t) (false nulls rejected).
    """
    _check_threshold(t)
    rejected = np.asarray(pvalues) <= t
    if truth is None:
        return Counts(R=int(rejected.sum()))
    null = np.asarray(truth, dtype=bool)
    return Counts(
        R=int(rejected.sum()),
        V=int(np.sum(rejected & null)),
        S=int(np.sum(rejected & ~null)),
    )


def threshold_search(
    z: np.ndarray,
    b: np.ndarray,
    a: np.ndarray,
    w_hat: np.ndarray,
    pvalues: np.ndarray,
    alpha: float,
    grid: Sequence[float],
    pvalue_kind: PValueKind = PValueKind.ADJUSTED,
) -> tuple[Optional[float], FdpReport]:
    """
    FDP_hat over the grid; t_alpha is the largest grid point with
    FDP_hat(t) <= alpha, or None when no grid point qualifies.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("grid must be non-empty with entries in (0, 1)")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha={alpha} outside (0, 1)")

    sorted_p = np.sort(np.asarray(pvalues, dtype=float))
    rejections = np.searchsorted(sorted_p, grid, side="right")

    v_hat, fdp_hat = [], []
    for t, r in zip(grid, rejections):
        v, f = fdp_estimate(z, b, a, w_hat, float(t), int(r))
        v_hat.append(v)
        fdp_hat.append(f)

    passing = [t for t, f in zip(grid, fdp_hat) if f <= alpha]
    t_alpha = float(max(passing)) if passing else None

    report = FdpReport(
        grid=grid.tolist(),
        rejections=[int(r) for r in rejections],
        v_hat=v_hat,
        fdp_hat=fdp_hat,
        t_alpha=t_alpha,
        alpha=alpha,
        pvalue_kind=pvalue_kind,
    )
    return t_alpha, report


def fdp_table(report: FdpReport) -> pd.DataFrame:
    """The FDP curve in plot-ready columns."""
    grid = np.asarray(report.grid)
    return pd.DataFrame(
        {
            "t": grid,
            "R": report.rejections,
            "V_hat": report.v_hat,
            "FDP_hat": report.fdp_hat,
            "neg_log10_t": -np.log10(grid),
        }
    )


# ============== Orchestration ==============


def fit_factor_model(
    corr: np.ndarray,
    z: np.ndarray,
    policy: KPolicy,
    estimator: FactorEstimator = FactorEstimator.L1,
    keep_fraction: float = 0.95,
    a_eps: float = 1e-6,
) -> FactorModel:
    spectrum = spectral_decompose(corr)
    k = choose_k(spectrum.values, policy)
    b, a, a_clamped = factor_loadings(spectrum.values, spectrum.vectors, k, a_eps)

    degenerate, converged = False, True
    if k == 0:
        w_hat = np.empty(0)
    elif estimator == FactorEstimator.L2:
        w_hat, degenerate = estimate_factors_l2(z, b, keep_fraction)
    else:
        w_hat, converged = estimate_factors_l1(z, b)

    return FactorModel(
        eigenvalues=spectrum.values,
        eigenvectors=spectrum.vectors,
        k=k,
        loadings=b,
        a=a,
        w_hat=w_hat,
        eta_hat=_common_component(b, w_hat, len(z)),
        estimator=estimator,
        eigen_clamped_mass=spectrum.clamped_mass,
        a_clamp_count=a_clamped,
        degenerate=degenerate,
        converged=converged,
    )


def run_pfa(
    inference: CategoryInference, options: PFAOptions
) -> tuple[FactorModel, np.ndarray, FdpReport]:
    """
    Factor model, adjusted p-values and FDP curve for one baseline-category
    pair. R(t) counts adjusted or raw p-values per options.count_kind.
    """
    model = fit_factor_model(
        inference.corr_hat,
        inference.z,
        options.k_policy,
        options.estimator,
        options.keep_fraction,
        options.a_eps,
    )
    p_adjusted = adjusted_pvalues(inference.z, model.loadings, model.a, model.w_hat)
    counted = p_adjusted if options.count_kind == PValueKind.ADJUSTED else inference.p_raw

    _, report = threshold_search(
        inference.z,
        model.loadings,
        model.a,
        model.w_hat,
        counted,
        options.alpha,
        options.grid(),
        options.count_kind,
    )
    return model, p_adjusted, report
