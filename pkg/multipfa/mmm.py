"""
Multiple marginal models: joint covariance of the slope estimators.

For each baseline-category pair the per-unit influence columns of all
successful marginal fits are stacked side by side; their empirical second
moment estimates the covariance of sqrt(n) * (beta_hat - beta).
"""

import logging
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import ndtr

from multipfa.states import CategoryInference, MarginalFit

logger = logging.getLogger(__name__)

P_FLOOR = 1e-300


def stack_influence(
    fits: Sequence[MarginalFit], category: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    n x p' matrix of slope influence contributions for pair `category`
    (1-based), one column per successful fit in feature order, plus the
    length-p mask of successful fits.
    """
    mask = np.array([f.ok for f in fits], dtype=bool)
    columns = [f.influence[:, category - 1] for f in fits if f.ok]
    if not columns:
        return np.empty((0, 0)), mask

    lengths = {len(c) for c in columns}
    if len(lengths) != 1:
        raise ValueError(f"fits disagree on n: {sorted(lengths)}")
    return np.column_stack(columns), mask


def covariance_estimate(psi: np.ndarray) -> np.ndarray:
    """(1/n) * psi^T psi, divided by n with no degrees-of-freedom correction."""
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    if n < 2:
        raise ValueError("covariance needs at least two observational units")
    sigma = psi.T @ psi / n
    return 0.5 * (sigma + sigma.T)


def z_statistics(beta_hat: np.ndarray, sigma_hat: np.ndarray, n: int) -> np.ndarray:
    """
    beta_hat_j * sqrt(n) / sqrt(sigma_jj). Features with a non-positive
    variance get NaN; callers drop them.
    """
    variances = np.diag(sigma_hat)
    z = np.full(len(beta_hat), np.nan)
    ok = variances > 0
    if not ok.all():
        logger.warning(
            "Non-positive variance for features %s; masking them",
            np.flatnonzero(~ok).tolist(),
        )
    z[ok] = np.asarray(beta_hat)[ok] * np.sqrt(n) / np.sqrt(variances[ok])
    return z


def correlation_matrix(sigma_hat: np.ndarray) -> np.ndarray:
    """D^{-1/2} sigma D^{-1/2}, unit diagonal, entries clamped to [-1, 1]."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    variances = np.diag(sigma_hat)
    if np.any(variances <= 0):
        bad = np.flatnonzero(variances <= 0).tolist()
        raise ValueError(f"non-positive variance on the diagonal at {bad}")

    inv_sd = 1.0 / np.sqrt(variances)
    corr = sigma_hat * np.outer(inv_sd, inv_sd)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def raw_pvalues(z: np.ndarray) -> np.ndarray:
    """Two-sided p-values 2 * Phi(-|z|), floored at 1e-300."""
    return np.maximum(2.0 * ndtr(-np.abs(np.asarray(z, dtype=float))), P_FLOOR)


def infer_category(
    fits: Sequence[MarginalFit], category: int, n_units: int | None = None
) -> CategoryInference:
    """Assemble the joint inference for one baseline-category pair."""
    psi, mask = stack_influence(fits, category)
    index = np.flatnonzero(mask)
    n = psi.shape[0] if psi.size else int(n_units or 0)
    beta_hat = np.array([fits[j].params.beta[category - 1] for j in index])

    if index.size == 0:
        empty = np.empty(0)
        return CategoryInference(
            category=category,
            index=index,
            active_mask=mask,
            n=n,
            beta_hat=empty,
            sigma_hat=np.empty((0, 0)),
            corr_hat=np.empty((0, 0)),
            z=empty,
            p_raw=empty,
        )

    sigma_hat = covariance_estimate(psi)
    z = z_statistics(beta_hat, sigma_hat, n)

    usable = np.isfinite(z)
    if not usable.all():
        mask = mask.copy()
        mask[index[~usable]] = False
        index, beta_hat, z = index[usable], beta_hat[usable], z[usable]
        sigma_hat = sigma_hat[np.ix_(usable, usable)]

    return CategoryInference(
        category=category,
        index=index,
        active_mask=mask,
        n=n,
        beta_hat=beta_hat,
        sigma_hat=sigma_hat,
        corr_hat=correlation_matrix(sigma_hat),
        z=z,
        p_raw=raw_pvalues(z),
    )


def infer_all(fits: Sequence[MarginalFit], q: int) -> list[CategoryInference]:
    """One CategoryInference per pair c = 1..q-1, from a single pass over the fits."""
    return [infer_category(fits, c) for c in range(1, q)]


def feature_table(
    inference: CategoryInference,
    feature_names: Sequence[str],
    p_adjusted: np.ndarray | None = None,
) -> pd.DataFrame:
    """Per-feature results over all p features; masked features are left empty."""
    frame = pd.DataFrame(
        {
            "feature": list(feature_names),
            "beta_hat": inference.expand(inference.beta_hat),
            "se": inference.expand(inference.se),
            "z": inference.expand(inference.z),
            "p_raw": inference.expand(inference.p_raw),
        }
    )
    if p_adjusted is not None:
        frame["p_adjusted"] = inference.expand(p_adjusted)
    return frame
