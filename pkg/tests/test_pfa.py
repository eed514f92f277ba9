"""Tests for the principal factor approximation and the threshold search."""

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import norm

from multipfa.mmm import raw_pvalues
from multipfa.pfa import (
    adjusted_pvalues,
    choose_k,
    empirical_counts,
    estimate_factors_l1,
    estimate_factors_l2,
    factor_loadings,
    fdp_estimate,
    fdp_table,
    fit_factor_model,
    l2_subset,
    run_pfa,
    spectral_decompose,
    threshold_search,
)
from multipfa.states import (
    CategoryInference,
    FactorEstimator,
    KPolicy,
    PFAOptions,
    PValueKind,
)


def equicorrelation(p, rho):
    return (1 - rho) * np.eye(p) + rho * np.ones((p, p))


def inference_from(z, corr):
    p = len(z)
    return CategoryInference(
        category=1,
        index=np.arange(p),
        active_mask=np.ones(p, dtype=bool),
        n=100,
        beta_hat=np.asarray(z) / 10.0,
        sigma_hat=corr,
        corr_hat=corr,
        z=np.asarray(z, dtype=float),
        p_raw=raw_pvalues(z),
    )


class TestSpectrum:
    @pytest.mark.parametrize("p, rho", [(5, 0.3), (40, 0.5), (100, 0.9)])
    def test_equicorrelation_closed_form(self, p, rho):
        spectrum = spectral_decompose(equicorrelation(p, rho))

        assert spectrum.values[0] == pytest.approx(1 + (p - 1) * rho, abs=1e-8)
        np.testing.assert_allclose(spectrum.values[1:], 1 - rho, atol=1e-8)
        np.testing.assert_allclose(spectrum.vectors[:, 0], 1 / np.sqrt(p), atol=1e-8)

    def test_values_sorted_and_vectors_orthonormal(self, rng):
        m = rng.standard_normal((30, 8))
        corr = np.corrcoef(m, rowvar=False)
        spectrum = spectral_decompose(corr)

        assert np.all(np.diff(spectrum.values) <= 1e-12)
        np.testing.assert_allclose(spectrum.vectors.T @ spectrum.vectors, np.eye(8), atol=1e-10)
        pivots = np.argmax(np.abs(spectrum.vectors), axis=0)
        assert np.all(spectrum.vectors[pivots, np.arange(8)] > 0)

    def test_negative_eigenvalues_clamped(self):
        corr = np.array([[1.0, 0.99, 0.0], [0.99, 1.0, 0.99], [0.0, 0.99, 1.0]])
        spectrum = spectral_decompose(corr)
        assert np.all(spectrum.values >= 0)
        assert spectrum.clamped_mass > 0

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            spectral_decompose(np.array([[1.0, 0.2], [0.1, 1.0]]))

    def test_empty_matrix(self):
        assert spectral_decompose(np.empty((0, 0))).values.size == 0


class TestChooseK:
    def test_explicit(self):
        assert choose_k(np.array([3.0, 1.0, 0.5]), KPolicy.explicit(2)) == 2

    def test_explicit_above_p_rejected(self):
        with pytest.raises(ValueError):
            choose_k(np.array([1.0, 1.0]), KPolicy.explicit(3))

    def test_threshold_rule_on_one_factor_structure(self):
        values = spectral_decompose(equicorrelation(50, 0.6)).values
        assert choose_k(values, KPolicy.threshold(0.01)) == 1

    def test_threshold_rule_identity_keeps_everything(self):
        assert choose_k(np.ones(10), KPolicy.threshold(0.01)) == 10

    def test_parse(self):
        assert KPolicy.parse("auto").k is None
        assert KPolicy.parse("3").k == 3
        with pytest.raises(ValueError):
            KPolicy.parse("three")


class TestLoadings:
    def test_k_zero(self):
        spectrum = spectral_decompose(equicorrelation(6, 0.4))
        b, a, clamped = factor_loadings(spectrum.values, spectrum.vectors, 0)
        assert b.shape == (6, 0)
        np.testing.assert_array_equal(a, 1.0)
        assert clamped == 0

    def test_full_rank_reconstructs_correlation(self, rng):
        corr = np.corrcoef(rng.standard_normal((40, 7)), rowvar=False)
        spectrum = spectral_decompose(corr)
        b, _, clamped = factor_loadings(spectrum.values, spectrum.vectors, 7)
        np.testing.assert_allclose(b @ b.T, corr, atol=1e-8)
        assert clamped == 7

    def test_one_factor_loadings(self):
        p, rho = 20, 0.5
        spectrum = spectral_decompose(equicorrelation(p, rho))
        b, a, _ = factor_loadings(spectrum.values, spectrum.vectors, 1)
        lam = 1 + (p - 1) * rho
        np.testing.assert_allclose(b[:, 0], np.sqrt(lam / p))
        np.testing.assert_allclose(a, 1 / np.sqrt(1 - lam / p))


class TestFactorEstimation:
    def test_l2_subset_ties_by_index(self):
        z = np.array([3.0, -1.0, 1.0, 0.5, 2.0, -0.5, 9.0, 0.1, 1.0, -2.0])
        np.testing.assert_array_equal(l2_subset(z, 0.5), [7, 3, 5, 1, 2])

    def test_l2_subset_size(self):
        assert len(l2_subset(np.arange(20.0), 0.95)) == 19
        assert len(l2_subset(np.arange(100.0), 0.95)) == 95

    def test_l2_recovers_exact_factors(self, rng):
        b = rng.standard_normal((50, 2))
        w = np.array([0.7, -1.2])
        w_hat, degenerate = estimate_factors_l2(b @ w, b)
        np.testing.assert_allclose(w_hat, w, atol=1e-10)
        assert not degenerate

    def test_l2_flags_rank_deficiency(self):
        b = np.column_stack([np.ones(10), np.ones(10)])
        _, degenerate = estimate_factors_l2(np.arange(10.0), b)
        assert degenerate

    @pytest.mark.parametrize("seed", range(5))
    def test_l1_with_unit_loadings_is_the_median(self, seed):
        z = np.random.default_rng(seed).standard_normal(41)
        w_hat, converged = estimate_factors_l1(z, np.ones((41, 1)))
        assert converged
        assert w_hat[0] == pytest.approx(np.median(z), abs=1e-6)

    def test_l2_constant_loading_is_scaled_mean_of_kept(self, rng):
        z = rng.standard_normal(40)
        c = 0.6
        w_hat, _ = estimate_factors_l2(z, np.full((40, 1), c))
        kept = l2_subset(z, 0.95)
        assert w_hat[0] == pytest.approx(z[kept].mean() / c, rel=1e-12)

    def test_l1_recovers_exact_factors(self, rng):
        b = rng.standard_normal((60, 3))
        w = np.array([1.1, -0.4, 0.25])
        w_hat, converged = estimate_factors_l1(b @ w, b)
        assert converged
        np.testing.assert_allclose(w_hat, w, atol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_l1_objective_not_above_l2_solution(self, seed):
        rng = np.random.default_rng(70 + seed)
        b = rng.standard_normal((50, 2))
        z = rng.standard_normal(50)
        w_l1, _ = estimate_factors_l1(z, b)
        w_l2, _ = estimate_factors_l2(z, b)
        assert np.abs(z - b @ w_l1).sum() <= np.abs(z - b @ w_l2).sum() + 1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_l1_reaches_the_linear_programming_optimum(self, seed):
        rng = np.random.default_rng(300 + seed)
        p, k = 500, 3
        b = rng.standard_normal((p, k)) * 0.4
        z = rng.standard_normal(p)

        w_hat, converged = estimate_factors_l1(z, b)

        # min sum(t) subject to -t <= z - b w <= t
        cost = np.concatenate([np.zeros(k), np.ones(p)])
        upper = np.block([[-b, -np.eye(p)], [b, -np.eye(p)]])
        bounds = [(None, None)] * k + [(0, None)] * p
        exact = linprog(
            cost, A_ub=upper, b_ub=np.concatenate([-z, z]), bounds=bounds, method="highs"
        )
        assert exact.success

        assert converged
        assert np.abs(z - b @ w_hat).sum() <= exact.fun * (1 + 1e-7) + 1e-7

    def test_l1_resists_outliers(self, rng):
        b = rng.standard_normal((200, 1))
        z = 1.5 * b[:, 0]
        z[:10] += 40.0
        w_hat, _ = estimate_factors_l1(z, b)
        assert w_hat[0] == pytest.approx(1.5, abs=1e-3)


class TestFdp:
    def test_k_zero_v_hat_is_p_times_t(self, rng):
        z = rng.standard_normal(300)
        b = np.empty((300, 0))
        for t in [1e-6, 1e-3, 0.05]:
            v_hat, _ = fdp_estimate(z, b, np.ones(300), np.empty(0), t, 10)
            assert v_hat == pytest.approx(300 * t, abs=1e-10)

    def test_no_rejections_gives_zero(self):
        _, fdp = fdp_estimate(np.zeros(5), np.empty((5, 0)), np.ones(5), np.empty(0), 0.01, 0)
        assert fdp == 0.0

    def test_fdp_capped_at_one(self):
        _, fdp = fdp_estimate(np.zeros(100), np.empty((100, 0)), np.ones(100), np.empty(0), 0.5, 3)
        assert fdp == 1.0

    def test_matches_direct_formula(self):
        z = np.array([0.3, -1.1, 2.5])
        b = np.array([[0.5], [0.4], [0.2]])
        a = 1 / np.sqrt(1 - b[:, 0] ** 2)
        w = np.array([0.8])
        t = 0.01
        v_hat, fdp = fdp_estimate(z, b, a, w, t, 2)

        eta = b[:, 0] * w[0]
        q = norm.ppf(t / 2)
        expected = np.sum(norm.cdf(a * (q + eta)) + norm.cdf(a * (q - eta)))
        assert v_hat == pytest.approx(expected, rel=1e-12)
        assert fdp == pytest.approx(min(expected, 2) / 2, rel=1e-12)

    def test_threshold_outside_unit_interval(self):
        with pytest.raises(ValueError):
            fdp_estimate(np.zeros(3), np.empty((3, 0)), np.ones(3), np.empty(0), 1.5, 1)

    def test_adjusted_pvalues_equal_raw_when_k_zero(self, rng):
        z = rng.standard_normal(50) * 3
        adjusted = adjusted_pvalues(z, np.empty((50, 0)), np.ones(50), np.empty(0))
        np.testing.assert_allclose(adjusted, raw_pvalues(z), rtol=0, atol=1e-12)

    def test_adjustment_removes_common_component(self):
        b = np.full((4, 1), 0.6)
        a = np.full(4, 1 / 0.8)
        z = np.array([1.2, 1.2, 1.2, 1.2])
        adjusted = adjusted_pvalues(z, b, a, np.array([2.0]))
        np.testing.assert_allclose(adjusted, 1.0)

    def test_empirical_counts_split_by_truth(self):
        pvalues = np.array([0.001, 0.2, 0.004, 0.0001, 0.5])
        null = np.array([True, True, False, False, True])
        counts = empirical_counts(pvalues, 0.005, null)
        assert (counts.R, counts.V, counts.S) == (3, 1, 2)
        assert empirical_counts(pvalues, 0.005).V is None


class TestThresholdSearch:
    def test_report_invariants(self, rng):
        p = 200
        corr = equicorrelation(p, 0.4)
        z = np.concatenate([rng.normal(4.0, 1.0, 20), rng.standard_normal(p - 20)])
        model = fit_factor_model(corr, z, KPolicy.explicit(1), FactorEstimator.L2)
        pvalues = adjusted_pvalues(z, model.loadings, model.a, model.w_hat)
        grid = np.logspace(-8, np.log10(0.05), 200)

        t_alpha, report = threshold_search(
            z, model.loadings, model.a, model.w_hat, pvalues, 0.05, grid
        )

        assert np.all(np.diff(report.rejections) >= 0)
        assert np.all(np.diff(report.v_hat) >= -1e-12)
        assert all(0.0 <= f <= 1.0 for f in report.fdp_hat)
        for r, f in zip(report.rejections, report.fdp_hat):
            if r == 0:
                assert f == 0.0
        assert t_alpha is not None
        later = [f for t, f in zip(report.grid, report.fdp_hat) if t > t_alpha]
        assert all(f > 0.05 for f in later)

    def test_no_qualifying_threshold(self):
        z = np.full(10, 20.0)
        t_alpha, report = threshold_search(
            z,
            np.empty((10, 0)),
            np.ones(10),
            np.empty(0),
            raw_pvalues(z),
            1e-4,
            np.logspace(-3, -2, 5),
        )
        assert t_alpha is None
        assert report.t_alpha is None

    def test_nothing_rejected_takes_largest_grid_point(self):
        z = np.zeros(10)
        grid = np.logspace(-4, -2, 7)
        t_alpha, _ = threshold_search(
            z, np.empty((10, 0)), np.ones(10), np.empty(0), raw_pvalues(z), 0.05, grid
        )
        assert t_alpha == pytest.approx(grid[-1])

    @pytest.mark.parametrize("grid", [[], [0.0, 0.01], [0.02, 0.01]])
    def test_bad_grid_rejected(self, grid):
        with pytest.raises(ValueError):
            threshold_search(
                np.zeros(2), np.empty((2, 0)), np.ones(2), np.empty(0), np.ones(2), 0.05, grid
            )

    def test_fdp_table_columns(self):
        z = np.zeros(4)
        _, report = threshold_search(
            z, np.empty((4, 0)), np.ones(4), np.empty(0), raw_pvalues(z), 0.05, [1e-3, 1e-2]
        )
        table = fdp_table(report)
        assert list(table.columns) == ["t", "R", "V_hat", "FDP_hat", "neg_log10_t"]
        np.testing.assert_allclose(table["neg_log10_t"], [3.0, 2.0])


class TestRunPfa:
    def test_k_zero_reduces_to_raw_pvalues(self, rng):
        z = rng.standard_normal(30) * 2
        inference = inference_from(z, equicorrelation(30, 0.3))
        model, adjusted, report = run_pfa(inference, PFAOptions(k_policy=KPolicy.explicit(0)))

        assert model.k == 0
        np.testing.assert_allclose(adjusted, inference.p_raw, rtol=0, atol=1e-12)
        np.testing.assert_allclose(report.v_hat, 30 * np.asarray(report.grid), atol=1e-10)

    def test_raw_counting(self, rng):
        z = rng.standard_normal(30) * 2
        inference = inference_from(z, equicorrelation(30, 0.3))
        options = PFAOptions(k_policy=KPolicy.explicit(1), count_kind=PValueKind.RAW)
        _, _, report = run_pfa(inference, options)

        expected = [int(np.sum(inference.p_raw <= t)) for t in report.grid]
        assert report.rejections == expected
        assert report.pvalue_kind == PValueKind.RAW

    def test_auto_k_on_one_factor_structure(self, rng):
        corr = equicorrelation(60, 0.7)
        z = rng.multivariate_normal(np.zeros(60), corr)
        model, _, _ = run_pfa(inference_from(z, corr), PFAOptions())
        assert model.k == 1
        assert model.estimator == FactorEstimator.L1

    @pytest.mark.parametrize("estimator", [FactorEstimator.L1, FactorEstimator.L2])
    def test_feature_order_does_not_matter(self, rng, estimator):
        p = 40
        loadings = rng.standard_normal((p, 2)) * np.array([0.7, 0.4])
        cov = loadings @ loadings.T + np.diag(rng.uniform(0.3, 0.8, p))
        sd = np.sqrt(np.diag(cov))
        corr = cov / np.outer(sd, sd)
        z = rng.multivariate_normal(np.zeros(p), corr) * 2
        perm = rng.permutation(p)
        options = PFAOptions(k_policy=KPolicy.explicit(2), estimator=estimator)

        model, adjusted, _ = run_pfa(inference_from(z, corr), options)
        permuted, adjusted_perm, _ = run_pfa(
            inference_from(z[perm], corr[np.ix_(perm, perm)]), options
        )

        np.testing.assert_allclose(
            np.abs(permuted.w_hat), np.abs(model.w_hat), rtol=1e-6, atol=1e-9
        )
        np.testing.assert_allclose(adjusted_perm, adjusted[perm], rtol=1e-6, atol=1e-12)
