"""
Marginal baseline-category logit models.

One feature at a time: log(pi_c / pi_q) = alpha_c + beta_c * x for c < q.
Parameters are stacked as (alpha_1, beta_1, ..., alpha_{q-1}, beta_{q-1}).
"""

import logging
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp

from multipfa.states import (
    FailReason,
    FitOptions,
    FitStatus,
    MarginalFit,
    MarginalParams,
)

logger = logging.getLogger(__name__)

# Conditioning limit for the correlation-scaled information matrix.
MAX_CONDITION = 1e12


def _check_inputs(xs: np.ndarray, ys: np.ndarray, q: int) -> None:
    if xs.shape != ys.shape:
        raise ValueError(f"length mismatch: {xs.shape[0]} features vs {ys.shape[0]} labels")
    if ys.size and (ys.min() < 1 or ys.max() > q):
        raise ValueError(f"categories must lie in 1..{q}")


def _linear_predictor(params: MarginalParams, xs: np.ndarray) -> np.ndarray:
    return params.alpha[None, :] + np.outer(xs, params.beta)


def probability_matrix(eta: np.ndarray) -> np.ndarray:
    """n x q category probabilities from n x (q-1) logits, baseline last."""
    shift = np.maximum(eta.max(axis=1), 0.0)
    expo = np.exp(eta - shift[:, None])
    base = np.exp(-shift)
    denom = base + expo.sum(axis=1)
    return np.column_stack([expo / denom[:, None], base / denom])


def category_probs(params: MarginalParams, x: float, q: int) -> np.ndarray:
    """(pi_1, ..., pi_{q-1}, pi_q) at a single feature value."""
    if params.q != q:
        raise ValueError(f"params describe q={params.q}, got q={q}")
    return probability_matrix(_linear_predictor(params, np.array([float(x)])))[0]


def log_likelihood(
    params: MarginalParams, xs: np.ndarray, ys: np.ndarray, q: int
) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=np.int64)
    _check_inputs(xs, ys, q)

    eta = _linear_predictor(params, xs)
    log_norm = logsumexp(np.column_stack([np.zeros(len(xs)), eta]), axis=1)
    observed = np.where(
        ys < q, eta[np.arange(len(xs)), np.minimum(ys, q - 1) - 1], 0.0
    )
    return float(np.sum(observed) - np.sum(log_norm))


def _indicators(ys: np.ndarray, q: int) -> np.ndarray:
    return (ys[:, None] == np.arange(1, q)[None, :]).astype(float)


def _design(xs: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones_like(xs), xs])


def _unit_scores(params: MarginalParams, xs, ys, q) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit scores (n x 2(q-1)) and the fitted probabilities."""
    pi = probability_matrix(_linear_predictor(params, xs))
    resid = _indicators(ys, q) - pi[:, : q - 1]
    scores = (resid[:, :, None] * _design(xs)[:, None, :]).reshape(len(xs), -1)
    return scores, pi


def score_and_fisher(
    params: MarginalParams, xs: np.ndarray, ys: np.ndarray, q: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Gradient of the log-likelihood and the average Fisher information.

    Returns:
        gradient of length 2(q-1) and a 2(q-1) x 2(q-1) matrix equal to the
        per-unit information averaged over units
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=np.int64)
    _check_inputs(xs, ys, q)

    scores, pi = _unit_scores(params, xs, ys, q)
    probs = pi[:, : q - 1]
    weights = probs[:, :, None] * (np.eye(q - 1)[None, :, :] - probs[:, None, :])
    design = _design(xs)
    dim = 2 * (q - 1)
    fisher = np.einsum("imk,ia,ib->makb", weights, design, design).reshape(dim, dim)
    fisher = fisher / len(xs)
    return scores.sum(axis=0), 0.5 * (fisher + fisher.T)


def _information_solve(matrix: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """
    Solve matrix @ x = rhs for a symmetric information matrix, ridged by
    1e-10 * trace / dim. Returns None when the matrix is too ill-conditioned.
    """
    dim = matrix.shape[0]
    ridged = matrix + (1e-10 * np.trace(matrix) / dim) * np.eye(dim)
    scale = np.sqrt(np.diag(ridged))
    if not np.all(np.isfinite(scale)) or np.any(scale <= 0):
        return None
    scaled = ridged / np.outer(scale, scale)
    try:
        if np.linalg.cond(scaled) > MAX_CONDITION:
            return None
        factor = cho_factor(scaled)
    except LinAlgError:
        return None
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim == 1:
        return cho_solve(factor, rhs / scale) / scale
    return cho_solve(factor, rhs / scale[:, None]) / scale[:, None]


def _failed(reason: FailReason, iterations: int = 0, **kwargs) -> MarginalFit:
    return MarginalFit(status=FitStatus.FAILED, reason=reason, iterations=iterations, **kwargs)


def _reparametrization(center: float, spread: float, q: int) -> np.ndarray:
    """
    Jacobian of the standardized parameters with respect to the raw ones.

    With u = (x - center) / spread, alpha' = alpha + beta * center and
    beta' = beta * spread for every non-baseline category.
    """
    block = np.array([[1.0, center], [0.0, spread]])
    return np.kron(np.eye(q - 1), block)


def _to_raw_scale(params: MarginalParams, center: float, spread: float) -> MarginalParams:
    beta = params.beta / spread
    return MarginalParams(alpha=params.alpha - beta * center, beta=beta)


def fit_marginal(
    xs: np.ndarray, ys: np.ndarray, q: int, opts: Optional[FitOptions] = None
) -> MarginalFit:
    """
    Maximum likelihood fit of one marginal model by Newton-Raphson with
    step-halving. Failures are returned in the fit status, never raised.

    Iterations run on the standardized feature (x - mean) / sd so that the
    gradient tolerance does not depend on the feature's units; parameters,
    Fisher information and influence rows are reported on the raw scale.
    grad_norm is the sup-norm of the standardized gradient.
    """
    opts = opts or FitOptions()
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=np.int64)

    if xs.shape != ys.shape or not np.all(np.isfinite(xs)):
        return _failed(FailReason.INVALID_INPUT)
    if ys.size == 0 or ys.min() < 1 or ys.max() > q:
        return _failed(FailReason.INVALID_INPUT)
    counts = np.bincount(ys, minlength=q + 1)[1:]
    if np.any(counts == 0):
        return _failed(FailReason.INVALID_INPUT)

    center = float(xs.mean())
    spread = float(xs.std())
    if spread == 0.0 or not np.isfinite(spread):
        return _failed(FailReason.SINGULAR_INFORMATION)
    us = (xs - center) / spread

    n = len(us)
    theta = np.zeros(2 * (q - 1))
    theta[0::2] = np.log(counts[:-1] / counts[-1])
    params = MarginalParams.from_stacked(theta)
    loglik = log_likelihood(params, us, ys, q)
    path = [loglik]

    converged = False
    reason: Optional[FailReason] = None
    grad_norm = float("inf")
    tiny_steps = 0
    iterations = 0

    for _ in range(opts.max_iter + 1):
        gradient, fisher = score_and_fisher(params, us, ys, q)
        grad_norm = float(np.max(np.abs(gradient)))

        if grad_norm <= opts.grad_tol or tiny_steps >= 2:
            converged = True
            break
        # slopes here are per standard deviation of the feature
        if np.max(np.abs(params.beta)) > opts.sep_bound:
            reason = FailReason.SEPARATION
            break
        if iterations == opts.max_iter:
            reason = FailReason.MAX_ITERATIONS
            break

        step = _information_solve(n * fisher, gradient)
        if step is None:
            reason = FailReason.SINGULAR_INFORMATION
            break

        accepted = False
        length = 1.0
        for _ in range(opts.max_halvings + 1):
            candidate = MarginalParams.from_stacked(theta + length * step)
            cand_loglik = log_likelihood(candidate, us, ys, q)
            if cand_loglik >= loglik:
                accepted = True
                break
            length *= 0.5
        if not accepted:
            reason = FailReason.STALLED
            break

        assert cand_loglik >= loglik, "log-likelihood decreased on an accepted step"
        change = (cand_loglik - loglik) / max(abs(loglik), np.finfo(float).tiny)
        theta = theta + length * step
        params, loglik = candidate, cand_loglik
        path.append(loglik)
        iterations += 1
        if change > opts.loglik_rtol:
            tiny_steps = 0
        elif length < 1.0:
            reason = FailReason.STALLED
            break
        else:
            tiny_steps += 1

    raw_params = _to_raw_scale(params, center, spread)
    if not converged:
        return _failed(
            reason or FailReason.MAX_ITERATIONS,
            iterations=iterations,
            params=raw_params,
            grad_norm=grad_norm,
            loglik=loglik,
            loglik_path=path,
        )

    scores, _ = _unit_scores(params, us, ys, q)
    _, fisher = score_and_fisher(params, us, ys, q)
    standardized = _information_solve(fisher, scores.T)
    if standardized is None:
        return _failed(
            FailReason.SINGULAR_INFORMATION,
            iterations=iterations,
            params=raw_params,
            grad_norm=grad_norm,
            loglik=loglik,
            loglik_path=path,
        )

    jacobian = _reparametrization(center, spread, q)
    raw_fisher = jacobian.T @ fisher @ jacobian
    return MarginalFit(
        params=raw_params,
        converged=True,
        iterations=iterations,
        grad_norm=grad_norm,
        loglik=loglik,
        loglik_path=path,
        fisher=0.5 * (raw_fisher + raw_fisher.T),
        influence=standardized.T[:, 1::2] / spread,
        status=FitStatus.OK,
    )


def _fit_block(
    block: np.ndarray, ys: np.ndarray, q: int, opts: FitOptions
) -> list[MarginalFit]:
    return [fit_marginal(block[:, j], ys, q, opts) for j in range(block.shape[1])]


def fit_marginals(
    x: np.ndarray,
    ys: np.ndarray,
    q: int,
    opts: Optional[FitOptions] = None,
    n_jobs: int = 1,
    block_size: int = 64,
) -> list[MarginalFit]:
    """
    Fit every column of x. Blocks of columns run in parallel; the result list
    is in feature-index order whatever the scheduling.
    """
    opts = opts or FitOptions()
    x = np.asarray(x, dtype=float)
    starts = range(0, x.shape[1], block_size)

    if n_jobs == 1 or x.shape[1] <= block_size:
        blocks = [_fit_block(x[:, s : s + block_size], ys, q, opts) for s in starts]
    else:
        blocks = Parallel(n_jobs=n_jobs)(
            delayed(_fit_block)(x[:, s : s + block_size], ys, q, opts) for s in starts
        )

    fits = [fit for block in blocks for fit in block]
    failed = sum(not f.ok for f in fits)
    if failed:
        logger.info("%d of %d marginal fits failed", failed, len(fits))
    for j, fit in enumerate(fits):
        if not fit.ok:
            logger.debug("feature %d: fit failed (%s)", j, fit.reason.value)
    return fits
