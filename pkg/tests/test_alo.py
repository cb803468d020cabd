import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import (
    mean_loo_predictions,
    normal_equations_fit,
    refit_loo,
    ridge_closed_form,
    truncnorm_mean_closed,
    truncnorm_mean_quad,
    two_pass_mean,
)
from randalo.alo import (
    EPS_DIV,
    DiagSamples,
    RiskFunction,
    alo_correct,
    bks_alo,
    bks_diag_samples,
    cv_folds,
    debias_regression,
    default_schedule,
    exact_alo,
    kfold_cv,
    mmse_diag,
    plugin_risk,
    probe_column,
    rademacher_probes,
    randalo,
    ridge_loo_shortcut,
    truncated_normal_mean,
)
from randalo.data import Dataset
from randalo.errors import DegenerateDesign, DivisionGuard, InvalidSpec
from randalo.experiments.synthetic import SyntheticSpec, conditional_risk, generate
from randalo.jacobian import JvpOracle, build_oracle, exact_diag
from randalo.model import fit, lasso, ridge
from randalo.model.penalties import Regularizer

# mpmath quadrature at 30 digits
TN_1_2_0_1 = 0.9626784467177159


def diagonal_oracle(d):
    d = np.asarray(d, dtype=float)
    return JvpOracle(d.size, lambda Z: d[:, None] * Z, "diagonal")


def ridge_instance(n, p, lam, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) / np.sqrt(p)
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    data = Dataset(X, y)
    model = fit(data, "squared", ridge(lam))
    return data, model


class TestProbes:
    def test_rademacher(self):
        w = probe_column(1000, 3, 7)
        assert set(np.unique(w)) == {-1.0, 1.0}
        assert abs(w.mean()) < 0.15

    def test_columns_depend_only_on_seed_and_index(self):
        P = rademacher_probes(50, 10, 4).entries
        np.testing.assert_array_equal(P[:, 6], probe_column(50, 4, 6))
        assert not np.array_equal(probe_column(50, 4, 6), probe_column(50, 5, 6))


class TestBksSamples:
    def test_identity(self):
        s = bks_diag_samples(diagonal_oracle(np.ones(20)), 12, seed=1)
        assert np.all(s.samples == 1) and np.all(s.mu == 1) and np.all(s.sigma2 == 0)

    def test_diagonal_exact(self, rng):
        d = rng.random(30)
        s = bks_diag_samples(diagonal_oracle(d), 9, seed=2)
        np.testing.assert_allclose(s.mu, d, rtol=1e-15)
        # zero up to rounding of the sample variance
        assert np.all(s.sigma2 <= 1e-30)

    def test_needs_two(self):
        with pytest.raises(InvalidSpec):
            bks_diag_samples(diagonal_oracle(np.ones(3)), 1)

    def test_thread_independent(self):
        data, model = ridge_instance(120, 60, 1.0, 0)
        oracle = build_oracle(model, data)
        ref = bks_diag_samples(oracle, 37, seed=5, threads=1).samples
        for threads in (2, 8):
            assert bks_diag_samples(oracle, 37, seed=5, threads=threads).samples.tobytes() == ref.tobytes()

    def test_unbiased(self):
        data, model = ridge_instance(200, 120, 1.0, 1)
        oracle = build_oracle(model, data)
        jd = exact_diag(oracle)
        s = bks_diag_samples(oracle, 10_000, seed=3)
        se = np.sqrt(s.sigma2 / s.m)
        # 4 SE per entry with sigma_i / 100 = SE at 10^4 probes
        assert np.mean(np.abs(s.mu - jd) <= 4 * se) >= 0.99


class TestTruncatedNormal:
    def test_degenerate_inside(self):
        assert truncated_normal_mean(0.5, 1e-300) == 0.5
        assert truncated_normal_mean(0.5, 0.0) == 0.5

    @pytest.mark.parametrize("scale", [1e-6, 0.1, 1.0, 10.0, 1e6])
    def test_midpoint_symmetry(self, scale):
        assert truncated_normal_mean(0.5, scale) == pytest.approx(0.5, abs=1e-12)

    def test_frozen_value(self):
        assert truncated_normal_mean(1.2, 0.1) == pytest.approx(TN_1_2_0_1, abs=1e-12)

    def test_quadrature_example(self):
        assert abs(truncated_normal_mean(1.2, 0.1) - truncnorm_mean_quad(1.2, 0.1)) <= 1e-10

    def test_vectorized(self):
        loc = np.array([-1.0, 0.2, 2.0])
        out = truncated_normal_mean(loc, np.array([0.3, 0.3, 0.3]))
        assert out.shape == (3,)
        assert np.all((out > 0) & (out < 1))
        assert out[0] == truncated_normal_mean(-1.0, 0.3)

    def test_general_interval(self):
        assert abs(truncated_normal_mean(0.0, 1.0, -2.0, 5.0) - truncnorm_mean_closed(0.0, 1.0, -2.0, 5.0)) < 1e-12

    @given(st.floats(-50, 50), st.floats(1e-8, 1e3))
    def test_inside_interval(self, loc, scale):
        v = truncated_normal_mean(loc, scale)
        assert 0.0 < v < 1.0

    @given(st.floats(-3, 4), st.floats(1e-6, 5))
    def test_closed_form_oracle(self, loc, scale):
        assert abs(truncated_normal_mean(loc, scale) - truncnorm_mean_closed(loc, scale)) <= 1e-10

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-4, 10))
    def test_monotone_in_loc(self, a, b, scale):
        lo, hi = sorted((a, b))
        assert truncated_normal_mean(lo, scale) <= truncated_normal_mean(hi, scale)


class TestMmse:
    def test_noiseless(self):
        s = DiagSamples(np.full((1, 4), 0.3), np.array([0.3]), np.array([0.0]))
        assert mmse_diag(s, 4, s.mu)[0] == 0.3

    def test_large_mean_bounded(self):
        s = DiagSamples(np.zeros((1, 4)), np.array([1.5]), np.array([100.0]))
        assert mmse_diag(s, 4, s.mu)[0] < 1.0

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=20), st.floats(1e-6, 10), st.integers(1, 100))
    def test_strictly_inside_and_monotone(self, mus, sigma2, m):
        mus = np.sort(np.array(mus))
        s = DiagSamples(np.zeros((mus.size, 2)), mus, np.full(mus.size, sigma2))
        d = mmse_diag(s, m, mus)
        assert np.all((d > 0) & (d < 1))
        assert np.all(np.diff(d) >= -1e-15)


class TestAloCorrect:
    def test_zero_diag(self, rng):
        y, yhat = rng.standard_normal((2, 10))
        np.testing.assert_array_equal(alo_correct(y, yhat, np.zeros(10)), yhat)

    def test_squared_formula(self, rng):
        y, yhat = rng.standard_normal((2, 10))
        d = rng.random(10) * 0.9
        np.testing.assert_allclose(alo_correct(y, yhat, d), (yhat - d * y) / (1 - d), rtol=1e-12)

    def test_division_guard(self):
        with pytest.raises(DivisionGuard) as err:
            alo_correct(np.ones(3), np.zeros(3), np.array([0.2, 1.0 - EPS_DIV / 2, 0.1]))
        assert err.value.module == "alo"

    def test_ridge_equals_refit_loo(self):
        data, model = ridge_instance(80, 60, 2.0, 2)
        oracle = build_oracle(model, data)
        yt = alo_correct(data.y, model.predictions, exact_diag(oracle))
        loo = refit_loo(data.X, data.y, lambda X, y, x: x @ ridge_closed_form(X, y, 2.0))
        np.testing.assert_allclose(yt, loo, atol=1e-8)


class TestPlugin:
    def test_perfect(self, rng):
        y = rng.standard_normal(5)
        assert plugin_risk(y, y) == 0.0

    def test_misclassification(self):
        assert plugin_risk([1.0, -1.0], [2.0, 1.0], "misclassification") == 0.5

    def test_two_pass(self, rng):
        y = rng.standard_normal(5000) * 1e3
        z = y + rng.standard_normal(5000)
        assert abs(plugin_risk(y, z) - two_pass_mean((y - z) ** 2)) <= 1e-12 * two_pass_mean((y - z) ** 2)

    def test_unknown_risk(self):
        with pytest.raises(InvalidSpec):
            RiskFunction("hinge")

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            plugin_risk(np.ones(3), np.ones(4))


class TestDebias:
    @given(st.floats(-100, 100), st.floats(-100, 100), st.integers(4, 400))
    def test_exact_curve(self, a, b, m):
        curve = [(k, a + b / k) for k in default_schedule(m)]
        r0, slope = debias_regression(curve)
        assert abs(r0 - a) <= 1e-12 * max(1.0, abs(a), abs(b))
        assert abs(slope - b) <= 1e-12 * max(1.0, abs(a), abs(b)) * m

    def test_constant(self):
        r0, slope = debias_regression([(k, 3.25) for k in range(10, 21)])
        assert r0 == pytest.approx(3.25, abs=1e-14) and abs(slope) < 1e-12

    def test_normal_equations(self, rng):
        curve = [(k, 2.0 + 5.0 / k + 0.01 * rng.standard_normal()) for k in range(25, 51)]
        ref = normal_equations_fit(curve)
        np.testing.assert_allclose(debias_regression(curve), ref, rtol=1e-10, atol=1e-10)

    def test_weighted_exact(self):
        curve = [(k, 1.0 + 2.0 / k) for k in range(5, 11)]
        r0, slope = debias_regression(curve, weights=np.arange(1.0, 7.0))
        assert r0 == pytest.approx(1.0, abs=1e-12) and slope == pytest.approx(2.0, abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateDesign):
            debias_regression([(5, 1.0), (5, 2.0)])


class TestEstimators:
    def test_noiseless_probes(self, rng):
        d = rng.random(40) * 0.8
        oracle = diagonal_oracle(d)
        y, yhat = rng.standard_normal((2, 40))
        rep = randalo(y, yhat, oracle, m=10, seed=0)
        ref = exact_alo(y, yhat, oracle).estimate
        np.testing.assert_allclose([r for _, r in rep.curve], ref, rtol=1e-14)
        assert rep.estimate == pytest.approx(ref, rel=1e-12)
        assert abs(rep.slope) < 1e-10 * ref
        assert bks_alo(y, yhat, oracle, m=10).estimate == pytest.approx(ref, rel=1e-14)

    def test_schedule_recorded(self):
        data, model = ridge_instance(60, 30, 1.0, 3)
        rep = randalo(data.y, model.predictions, build_oracle(model, data), m=20, seed=1)
        assert rep.diagnostics["schedule"] == list(range(10, 21))
        assert [m for m, _ in rep.curve] == list(range(10, 21))

    def test_bks_is_full_subset_point(self):
        data, model = ridge_instance(100, 50, 1.0, 4)
        oracle = build_oracle(model, data)
        rep = randalo(data.y, model.predictions, oracle, m=16, seed=7)
        bks = bks_alo(data.y, model.predictions, oracle, m=16, seed=7)
        assert dict(rep.curve)[16] == bks.estimate

    def test_deterministic_across_threads(self):
        data, model = ridge_instance(100, 50, 1.0, 5)
        oracle = build_oracle(model, data)
        runs = [randalo(data.y, model.predictions, oracle, m=30, seed=3, threads=t) for t in (1, 2, 8)]
        assert len({(r.estimate, r.slope, tuple(r.curve)) for r in runs}) == 1

    def test_needs_four_probes(self):
        with pytest.raises(InvalidSpec):
            randalo(np.ones(3), np.ones(3), diagonal_oracle(np.zeros(3)), m=3)

    def test_division_guard_skips_subset(self):
        # J~ = I gives d = 1 at every subsample: every point is skipped
        oracle = diagonal_oracle(np.ones(5))
        with pytest.raises(DegenerateDesign):
            randalo(np.arange(5.0), np.arange(5.0) + 1, oracle, m=8)

    def test_debiasing_beats_plugin_on_ridge(self):
        data, model = ridge_instance(200, 150, 1.0, 6)
        oracle = build_oracle(model, data)
        ref = exact_alo(data.y, model.predictions, oracle).estimate
        err_r, err_b = [], []
        for seed in range(50):
            rep = randalo(data.y, model.predictions, oracle, m=100, seed=seed)
            err_r.append(abs(rep.estimate - ref))
            err_b.append(abs(dict(rep.curve)[100] - ref))
        assert np.mean(err_r) < np.mean(err_b)

    def test_risk_inflation_direction(self):
        plug, exact = [], []
        for seed in range(50):
            data, _, _ = generate(SyntheticSpec("gaussian_lasso", n=200, p=200, seed=seed))
            model = fit(data, "squared", lasso(np.sqrt(200)))
            oracle = build_oracle(model, data)
            plug.append(bks_alo(data.y, model.predictions, oracle, m=10, seed=seed).estimate)
            exact.append(exact_alo(data.y, model.predictions, oracle).estimate)
        assert np.mean(plug) >= np.mean(exact)

    def test_lasso_within_one_percent_of_exact(self):
        hits, bias_r, bias_b = 0, [], []
        for seed in range(20):
            data, _, _ = generate(SyntheticSpec("gaussian_lasso", n=1000, p=1000, seed=seed))
            model = fit(data, "squared", lasso(np.sqrt(1000)))
            oracle = build_oracle(model, data)
            ex = exact_alo(data.y, model.predictions, oracle).estimate
            r = randalo(data.y, model.predictions, oracle, m=50, seed=seed).estimate
            b = bks_alo(data.y, model.predictions, oracle, m=50, seed=seed).estimate
            hits += abs(r - ex) <= 0.01 * ex
            bias_r.append(r - ex)
            bias_b.append(b - ex)
        assert hits >= 18
        assert abs(np.mean(bias_b)) > abs(np.mean(bias_r))


class TestRidgeLoo:
    def test_single_point(self):
        out = ridge_loo_shortcut(Dataset(np.array([[2.0, -1.0]]), [3.0]), lam=0.5)
        np.testing.assert_allclose(out, [0.0], atol=1e-14)

    @pytest.mark.parametrize("n, p", [(60, 40), (30, 50)])
    def test_brute_force(self, n, p):
        data, _ = ridge_instance(n, p, 1.5, 7)
        loo = refit_loo(data.X, data.y, lambda X, y, x: x @ ridge_closed_form(X, y, 1.5))
        np.testing.assert_allclose(ridge_loo_shortcut(data, lam=1.5), loo, atol=1e-8)

    def test_equals_exact_alo(self):
        data, model = ridge_instance(70, 40, 0.8, 8)
        rep = exact_alo(data.y, model.predictions, build_oracle(model, data))
        np.testing.assert_allclose(rep.predictions, ridge_loo_shortcut(data, lam=0.8), atol=1e-10)

    def test_needs_penalty(self):
        with pytest.raises(InvalidSpec):
            ridge_loo_shortcut(Dataset(np.ones((3, 1)), np.ones(3)), lam=0.0)


class TestCrossValidation:
    def test_folds_partition(self):
        folds = cv_folds(23, 5, seed=1)
        assert sorted(len(f) for f in folds) == [4, 4, 5, 5, 5]
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(23))

    def test_constant_mean_loo(self, rng):
        y = rng.standard_normal(25)
        data = Dataset(np.ones((25, 1)), y)
        rep = kfold_cv(data, None, "squared", Regularizer(), "squared_error", K=25)
        np.testing.assert_allclose(rep.predictions, mean_loo_predictions(y), rtol=1e-12)
        assert rep.method == "loo_cv"
        assert rep.estimate == pytest.approx(np.mean((y - mean_loo_predictions(y)) ** 2), rel=1e-12)

    def test_loo_equals_ridge_shortcut(self):
        data, _ = ridge_instance(50, 20, 2.0, 9)
        rep = kfold_cv(data, None, "squared", ridge(2.0), K=50)
        np.testing.assert_allclose(rep.predictions, ridge_loo_shortcut(data, lam=2.0), atol=1e-8)

    def test_bad_fold_count(self):
        data, _ = ridge_instance(10, 3, 1.0, 0)
        with pytest.raises(InvalidSpec):
            kfold_cv(data, None, "squared", ridge(1.0), K=11)

    def test_upward_bias_lasso(self):
        rel = []
        for seed in range(20):
            data, beta, _ = generate(SyntheticSpec("gaussian_lasso", n=1000, p=1000, seed=seed))
            model = fit(data, "squared", lasso(math.sqrt(1000)))
            risk = conditional_risk("gaussian_lasso", beta, model.coef)
            cv = kfold_cv(data, None, "squared", lasso(math.sqrt(1000)), K=5, seed=seed).estimate
            rel.append((cv - risk) / risk)
        rel = np.array(rel)
        assert rel.mean() > 0
        assert np.mean(rel > 0) > 0.5
