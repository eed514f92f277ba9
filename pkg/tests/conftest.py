"""Shared fixtures for the Multi-PFA test suite."""

import numpy as np
import pandas as pd
import pytest


def baseline_logit_sample(n, alpha, beta, rng, x=None):
    """Draw (x, y) from a single-feature baseline-category logit model, baseline last."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x is None:
        x = rng.standard_normal(n)
    eta = np.column_stack([np.zeros(n), alpha[None, :] + np.outer(x, beta)])
    eta = np.roll(eta, -1, axis=1)
    probs = np.exp(eta - eta.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.random(n)
    y = 1 + (u[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
    return x, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def labelled_csv(tmp_path):
    """
    Three tissue classes over eight features; the first two features shift
    with the class, the rest are correlated noise.
    """
    rng = np.random.default_rng(7)
    n, p = 150, 8
    labels = np.array(["ADC", "Pancreatic", "Other"])[np.arange(n) % 3]
    common = rng.standard_normal(n)
    x = 0.5 * common[:, None] + rng.standard_normal((n, p))
    x[:, 0] += 1.5 * (labels == "Pancreatic")
    x[:, 1] -= 1.0 * (labels == "ADC")

    frame = pd.DataFrame(x, columns=[f"mz_{700 + 3 * j}" for j in range(p)])
    frame.insert(3, "tissue", labels)
    path = tmp_path / "spectra.csv"
    frame.to_csv(path, index=False)
    return path
