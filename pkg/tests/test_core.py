import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmmixreg import _kernels
from gmmixreg.core import (EstimatorKind, EstimatorSpec, FitConfig, MixtureParams, RegressionData, complete_loglik,
                           design_leverage, e_step, fit, fit_from, gaussian_loglik, icl, initial_params, n_free_params,
                           robustified_posteriors, update_coefficients, update_mixing, update_scale)
from gmmixreg.errors import ComponentCollapseError, DomainError, FitFailedError, InvalidDimensionsError
from gmmixreg.psi import PsiKernel, scale_constant_a
from gmmixreg.scatter import LeverageWeights
from gmmixreg.simulation import ScenarioSpec, align_labels, generate

HUBER = PsiKernel.huber()
M_HUBER = EstimatorSpec(EstimatorKind.M, HUBER)
MALLOWS = EstimatorSpec(EstimatorKind.GM_MALLOWS, HUBER)
SCHWEPPE = EstimatorSpec(EstimatorKind.GM_SCHWEPPE, HUBER)


def two_lines(n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    lab = rng.random(n) < 0.5
    y = np.where(lab, 1 + 3 * x, -1 - 2 * x) + 0.3 * rng.standard_normal(n)
    return RegressionData.from_predictors(x, y)


def random_params(rng, g, p, spread=5.0):
    pi = rng.dirichlet(np.ones(g))
    return MixtureParams(pi, rng.normal(0, spread, (g, p)), rng.uniform(0.1, 3.0, g))


class TestDataTypes:
    def test_intercept_required(self):
        with pytest.raises(InvalidDimensionsError):
            RegressionData(np.array([[2.0, 1.0], [1.0, 2.0]]), [1.0, 2.0])

    def test_nonfinite(self):
        with pytest.raises(DomainError):
            RegressionData.from_predictors([1.0, np.nan], [1.0, 2.0])

    def test_params_validation(self):
        with pytest.raises(DomainError):
            MixtureParams([0.6, 0.6], [[0, 1], [0, 1]], [1, 1])
        with pytest.raises(DomainError):
            MixtureParams([0.5, 0.5], [[0, 1], [0, 1]], [1, 0])
        with pytest.raises(InvalidDimensionsError):
            MixtureParams([0.5, 0.5], [[0, 1]], [1, 1])

    def test_flatten_roundtrip(self):
        p = random_params(np.random.default_rng(0), 3, 2)
        q = MixtureParams.unflatten(p.flatten(), 3, 2)
        np.testing.assert_array_equal(p.flatten(), q.flatten())

    def test_config_validation(self):
        with pytest.raises(DomainError):
            FitConfig(tolerance=0)
        with pytest.raises(DomainError):
            FitConfig(n_starts=0)

    def test_free_params(self):
        assert n_free_params(2, 2) == 7


class TestEStep:
    def test_single_component(self):
        data = two_lines(30)
        Z = e_step(data, MixtureParams([1.0], [[0.0, 1.0]], [1.0]))
        assert np.all(Z == 1.0)

    def test_identical_components(self):
        data = two_lines(30)
        Z = e_step(data, MixtureParams([0.5, 0.5], [[0.0, 1.0]] * 2, [1.0, 1.0]))
        assert np.all(Z == 0.5)

    def test_hand_value(self):
        data = RegressionData.from_predictors([1.0], [4.0])
        Z = e_step(data, MixtureParams([0.5, 0.5], [[0, 4], [0, -4]], [1, 1]))
        assert Z[0, 0] == pytest.approx(1 / (1 + math.exp(-32)), rel=1e-15)
        assert Z[0, 1] == pytest.approx(math.exp(-32) / (1 + math.exp(-32)), rel=1e-12)

    def test_no_underflow_far_out(self):
        # residuals of 300 standard deviations from every component
        data = RegressionData.from_predictors([0.0, 0.0], [300.0, -300.0])
        Z = e_step(data, MixtureParams([0.3, 0.7], [[0, 0], [1, 0]], [1.0, 1.0]))
        assert np.all(np.isfinite(Z))
        np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), g=st.integers(1, 4), p=st.integers(1, 3))
    def test_rows_normalized(self, seed, g, p):
        rng = np.random.default_rng(seed)
        n = 25
        X = np.column_stack([np.ones(n), rng.normal(0, 10, (n, p - 1))])
        data = RegressionData(X, rng.normal(0, 50, n))
        Z = e_step(data, random_params(rng, g, p, spread=20))
        assert np.all((Z >= 0) & (Z <= 1))
        np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-10)


class TestRobustifiedPosteriors:
    def setup_method(self):
        self.data = RegressionData.from_predictors([0.0, 1.0, 2.0], [0.5, 1.8, 1.0])
        self.params = MixtureParams([0.5, 0.5], [[0.0, 1.0], [0.5, 0.0]], [1.0, 1.0])

    def test_linear_region_is_identity(self):
        Z = np.full((3, 2), 0.5)
        T = (self.data.response[:, None] - self.data.design @ self.params.coefficients.T)
        assert np.all(np.abs(T) <= 1.345)
        np.testing.assert_array_equal(robustified_posteriors(Z, self.data, self.params, MALLOWS), Z)

    def test_hand_value(self):
        data = RegressionData.from_predictors([0.0], [2.0])
        params = MixtureParams([1.0], [[0.0, 0.0]], [1.0])
        zs = robustified_posteriors(np.array([[0.8]]), data, params, MALLOWS)
        assert zs[0, 0] == pytest.approx(0.538, abs=1e-15)

    def test_schweppe_equals_mallows_at_unit_weights(self):
        rng = np.random.default_rng(4)
        data = two_lines(50, seed=4)
        params = random_params(rng, 2, 2)
        Z = e_step(data, params)
        ones = LeverageWeights.ones(data.n)
        np.testing.assert_array_equal(robustified_posteriors(Z, data, params, SCHWEPPE, ones),
                                      robustified_posteriors(Z, data, params, MALLOWS, ones))

    def test_schweppe_form(self):
        data = RegressionData.from_predictors([0.0, 0.0, 0.0], [3.0, 0.5, 0.0])
        params = MixtureParams([1.0], [[0.0, 0.0]], [1.0])
        w = np.array([0.5, 0.25, 0.5])
        zs = robustified_posteriors(np.ones((3, 1)), data, params, SCHWEPPE, LeverageWeights(w, 1.0, 0.05))
        t = data.response
        assert zs[0, 0] == pytest.approx(HUBER.psi(t[0] / w[0]) / t[0], rel=1e-14)
        assert zs[1, 0] == pytest.approx(HUBER.psi(t[1] / w[1]) / t[1], rel=1e-14)
        assert zs[2, 0] == pytest.approx(1 / w[2], rel=1e-14)


class TestMStep:
    def test_mixing(self):
        assert update_mixing([[1, 0]] * 4).tolist() == [1.0, 0.0]
        assert update_mixing([[1, 0], [0, 1]] * 3).tolist() == [0.5, 0.5]
        np.testing.assert_allclose(update_mixing([[0.2, 0.8], [0.4, 0.6], [0.6, 0.4]]), [0.4, 0.6], rtol=1e-15)

    def test_coefficients_interpolate(self):
        data = RegressionData.from_predictors([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        np.testing.assert_allclose(update_coefficients(data, np.ones((3, 1)), None, 0), [0.0, 1.0], atol=1e-12)
        rng = np.random.default_rng(1)
        X = np.column_stack([np.ones(10), rng.standard_normal((10, 2))])
        beta0 = np.array([0.5, -1.0, 2.0])
        np.testing.assert_allclose(update_coefficients(RegressionData(X, X @ beta0), np.ones((10, 1)), None, 0),
                                   beta0, rtol=1e-12)

    def test_coefficients_match_normal_equations(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(15), rng.standard_normal((15, 2))])
        y = rng.standard_normal(15)
        zs = rng.random((15, 2))
        lev = LeverageWeights(rng.uniform(0.2, 1.0, 15), 1.0, 0.05)
        wt = zs[:, 1] * lev.weights
        oracle = np.linalg.inv(X.T @ (wt[:, None] * X)) @ (X.T @ (wt * y))
        got = update_coefficients(RegressionData(X, y), zs, lev, 1)
        np.testing.assert_allclose(got, oracle, rtol=1e-8)

    def test_coefficients_collapse(self):
        data = RegressionData.from_predictors([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        zs = np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ComponentCollapseError) as info:
            update_coefficients(data, zs, None, 0)
        assert info.value.component == 0

    def test_scale_fixed_point(self):
        # every residual placed where chi(t) = a leaves sigma unchanged
        n, p = 50, 2
        a = scale_constant_a(HUBER, n, p)
        t = math.sqrt(2 * a)
        x = np.linspace(-1, 1, n)
        y = 1 + x + np.where(np.arange(n) % 2 == 0, t, -t) * 1.7
        data = RegressionData.from_predictors(x, y)
        params = MixtureParams([1.0], [[1.0, 1.0]], [1.7])
        s2 = update_scale(data, np.full((n, 1), 0.3), params, HUBER, 0, 1e-8)
        assert s2 == pytest.approx(1.7 ** 2, rel=1e-12)

    def test_scale_zero_residuals_floor(self):
        data = RegressionData.from_predictors([0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
        params = MixtureParams([1.0], [[1.0, 1.0]], [0.5])
        assert update_scale(data, np.ones((3, 1)), params, HUBER, 0, 1e-3) == pytest.approx(1e-6, rel=1e-15)

    def test_scale_empty_component(self):
        data = two_lines(20)
        params = MixtureParams([0.5, 0.5], [[0, 1], [0, 1]], [1, 1])
        Z = np.column_stack([np.ones(20), np.zeros(20)])
        with pytest.raises(ComponentCollapseError):
            update_scale(data, Z, params, HUBER, 1, 1e-8)

    def test_scale_consistency(self):
        rng = np.random.default_rng(12)
        n = 10 ** 5
        data = RegressionData.from_predictors(np.zeros(n), 2.0 * rng.standard_normal(n))
        params = MixtureParams([1.0], [[0.0, 0.0]], [1.0])
        Z = np.ones((n, 1))
        for _ in range(200):
            s2 = update_scale(data, Z, params, HUBER, 0, 1e-8)
            params = MixtureParams([1.0], params.coefficients, [math.sqrt(s2)])
        assert params.scales[0] == pytest.approx(2.0, rel=0.02)

    def test_scale_multiplier_is_one_at_truth(self):
        rng = np.random.default_rng(13)
        n = 10 ** 6
        t = rng.standard_normal(n)
        chi = HUBER.chi(t)
        a = scale_constant_a(HUBER, n, 1)
        mult = chi.mean() / a
        se = chi.std() / math.sqrt(n) / a
        assert abs(mult - 1.0) <= 3 * se


def one_iteration_by_steps(data, params, spec, leverage, floor):
    """One EM iteration written with the public step functions."""
    Z = e_step(data, params)
    zs = robustified_posteriors(Z, data, params, spec, leverage)
    lev = leverage if spec.uses_leverage else None
    B = np.array([update_coefficients(data, zs, lev, i) for i in range(params.g)])
    s = np.array([math.sqrt(update_scale(data, Z, params, spec.kernel, i, floor)) for i in range(params.g)])
    return MixtureParams(update_mixing(Z), B, s)


class TestStepsMatchKernel:
    @pytest.mark.parametrize("spec", [M_HUBER, MALLOWS, SCHWEPPE,
                                      EstimatorSpec(EstimatorKind.GM_SCHWEPPE, PsiKernel.tukey())],
                             ids=["m", "mallows", "schweppe", "schweppe-tukey"])
    def test_one_iteration(self, spec):
        data, _ = generate(ScenarioSpec(1, "IV", 80, seed=2), 0)
        leverage = design_leverage(data, spec)
        init = initial_params(data, 2, np.random.default_rng(0), 1e-3)
        expected = one_iteration_by_steps(data, init, spec, leverage, 1e-3)
        config = FitConfig(max_iterations=1, sigma_floor=1e-3, keep_history=True)
        got = fit_from(data, init, spec, config, leverage)
        np.testing.assert_allclose(got.history[1], expected.flatten(), rtol=1e-10, atol=1e-12)


class TestFit:
    def test_ols_limit(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(200)
        y = 2 + 3 * x + rng.standard_normal(200)
        data = RegressionData.from_predictors(x, y)
        spec = EstimatorSpec(EstimatorKind.M, PsiKernel.huber(1e6))
        res = fit(data, 1, spec, FitConfig(n_starts=1))
        ols = np.linalg.lstsq(data.design, y, rcond=None)[0]
        np.testing.assert_allclose(res.params.coefficients[0], ols, rtol=1e-6)

    def test_scenario_one_recovery(self):
        hits = 0
        truth = ScenarioSpec(1, "I", 200).truth
        for seed in range(20):
            data, _ = generate(ScenarioSpec(1, "I", 200, seed=seed), 0)
            est = align_labels(fit(data, 2, M_HUBER, FitConfig(n_starts=5, seed=seed)).params, truth)
            hits += abs(est.coefficients[0, 1] - 4) < 0.4 and abs(est.coefficients[1, 1] + 4) < 0.4
        assert hits >= 19

    def test_mallows_with_unit_weights_is_m(self):
        data = two_lines(100, seed=5)
        ones = LeverageWeights.ones(data.n)
        cfg = FitConfig(n_starts=3, seed=9, keep_history=True)
        a = fit(data, 2, M_HUBER, cfg)
        b = fit(data, 2, MALLOWS, cfg, leverage=ones)
        np.testing.assert_array_equal(a.history, b.history)
        np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())

    def test_result_invariants(self):
        data = two_lines()
        res = fit(data, 2, MALLOWS, FitConfig(n_starts=4))
        np.testing.assert_allclose(res.posteriors.sum(axis=1), 1.0, atol=1e-10)
        assert res.converged
        assert res.icl == pytest.approx(-2 * res.complete_loglik + 7 * math.log(data.n), rel=1e-15)
        assert res.gaussian_loglik == pytest.approx(gaussian_loglik(data, res.params), rel=1e-14)
        assert res.leverage is not None

    def test_best_start_has_highest_likelihood(self):
        data = two_lines(80, seed=1)
        cfg = FitConfig(n_starts=6, seed=2)
        best = fit(data, 2, M_HUBER, cfg)
        for k in range(6):
            init = initial_params(data, 2, np.random.default_rng([2, 1, k]), cfg.floor_for(data))
            assert fit_from(data, init, M_HUBER, cfg).gaussian_loglik <= best.gaussian_loglik

    def test_deterministic(self):
        data, _ = generate(ScenarioSpec(2, "III", 150, seed=1), 0)
        cfg = FitConfig(n_starts=3, seed=4, keep_history=True)
        a, b = fit(data, 2, SCHWEPPE, cfg), fit(data, 2, SCHWEPPE, cfg)
        np.testing.assert_array_equal(a.history, b.history)
        np.testing.assert_array_equal(a.posteriors, b.posteriors)
        assert a.complete_loglik == b.complete_loglik

    @pytest.mark.parametrize("spec", [M_HUBER, SCHWEPPE], ids=["m", "schweppe"])
    def test_label_permutation_equivariance(self, spec):
        data = two_lines(90, seed=6)
        init = initial_params(data, 3, np.random.default_rng(1), 1e-3)
        perm = [2, 0, 1]
        a = fit_from(data, init, spec)
        b = fit_from(data, init.permuted(perm), spec)
        np.testing.assert_allclose(b.params.flatten(), a.params.permuted(perm).flatten(), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b.posteriors, a.posteriors[:, perm], atol=1e-9)

    def test_leverage_independent_of_response(self):
        data, _ = generate(ScenarioSpec(2, "IV", 100, seed=1), 0)
        other = RegressionData(data.design, data.response[::-1] * 3)
        a = fit(data, 2, MALLOWS, FitConfig(n_starts=1)).leverage
        b = fit(other, 2, MALLOWS, FitConfig(n_starts=1)).leverage
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_all_starts_fail(self):
        data = RegressionData.from_predictors([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 0.0, 1.0])
        with pytest.raises(FitFailedError) as info:
            fit(data, 3, M_HUBER, FitConfig(n_starts=4))
        assert len(info.value.causes) == 4

    def test_bad_g(self):
        with pytest.raises(InvalidDimensionsError):
            fit(two_lines(), 0, M_HUBER)


class TestLikelihood:
    def test_single_component_is_gaussian_loglik(self):
        data = two_lines(40)
        params = MixtureParams([1.0], [[0.3, 0.2]], [1.4])
        r = data.response - data.design @ params.coefficients[0]
        expected = float(np.sum(-0.5 * math.log(2 * math.pi) - math.log(1.4) - r ** 2 / (2 * 1.4 ** 2)))
        assert complete_loglik(data, params, np.ones((40, 1))) == pytest.approx(expected, rel=1e-13)
        assert gaussian_loglik(data, params) == pytest.approx(expected, rel=1e-13)

    def test_doubling_scales(self):
        data = two_lines(40)
        rng = np.random.default_rng(0)
        params = random_params(rng, 2, 2)
        Z = e_step(data, params)
        doubled = MixtureParams(params.mixing, params.coefficients, 2 * params.scales)
        R2 = (data.response[:, None] - data.design @ params.coefficients.T) ** 2
        change = -data.n * math.log(2) + float(np.sum(Z * R2 / (2 * params.scales ** 2) * 0.75))
        assert complete_loglik(data, doubled, Z) - complete_loglik(data, params, Z) == pytest.approx(change, rel=1e-10)

    def test_icl_values(self):
        assert icl(499.66117, 7, 88) == pytest.approx(-967.981, abs=1e-3)
        assert icl(772.99552, 7, 88) == pytest.approx(-1514.650, abs=1e-3)
        assert icl(0.0, 1, math.e) == pytest.approx(1.0, abs=1e-15)

    def test_icl_domain(self):
        with pytest.raises(InvalidDimensionsError):
            icl(1.0, 0, 10)
