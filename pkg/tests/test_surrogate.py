import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kfat.surrogate import (
    Family,
    Kernel,
    SurrogateFitWarning,
    build_state,
    fit_hyperparams,
    gram,
    kernel_eval,
    lml_and_grad,
    log_marginal_likelihood,
    posterior,
)

LOG2PI = np.log(2 * np.pi)


def kern(ell, sf2=1.0, sn2=1e-2, nu=1.5):
    return Kernel(np.log(np.atleast_1d(ell)), np.log(sf2), np.log(sn2), nu)


class TestKernel:
    def test_zero_distance(self):
        assert kernel_eval([0.3, 0.4], [0.3, 0.4], kern([0.2, 0.5], 2.5)) == pytest.approx(2.5)

    @pytest.mark.parametrize("nu", [1.5, 2.5])
    def test_decay(self, nu):
        k = kern([0.1, 0.1], nu=nu)
        assert kernel_eval([0, 0], [1e3, 0], k) == pytest.approx(0.0, abs=1e-300)
        vals = [kernel_eval([0, 0], [d, 0], k) for d in np.linspace(0, 1, 20)]
        assert np.all(np.diff(vals) < 0)

    def test_matern32_formula(self):
        k = kern([0.2, 0.5], 1.7)
        x, x2 = np.array([0.1, 0.9]), np.array([0.35, 0.2])
        r = np.sqrt(((x - x2) / [0.2, 0.5]) ** 2 @ np.ones(2))
        assert kernel_eval(x, x2, k) == pytest.approx(1.7 * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r), rel=1e-14)

    def test_matern52_formula(self):
        k = kern([0.4], 0.8, nu=2.5)
        r = 0.3 / 0.4
        s = np.sqrt(5) * r
        assert kernel_eval([0.0], [0.3], k) == pytest.approx(0.8 * (1 + s + s * s / 3) * np.exp(-s), rel=1e-14)

    def test_ard_separability(self):
        base = kern([0.3, 0.3])
        wide = kern([0.3, 0.6])
        x = np.array([0.2, 0.5])
        # equal coordinate in dimension 1: its lengthscale does not matter
        assert kernel_eval(x, [0.7, 0.5], base) == kernel_eval(x, [0.7, 0.5], wide)
        assert kernel_eval(x, [0.7, 0.9], base) != kernel_eval(x, [0.7, 0.9], wide)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            kernel_eval([0.0], [0.0, 1.0], kern([0.2, 0.2]))
        with pytest.raises(ValueError):
            Kernel([np.nan], 0.0, 0.0)
        with pytest.raises(ValueError):
            Kernel([0.0], 0.0, 0.0, smoothness=3.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(1, 4))
    def test_gram_factorable(self, seed, n, d):
        rng = np.random.default_rng(seed)
        X = rng.random((n, d))
        X[-1] = X[0]  # duplicate rows are the hard case
        state = build_state(X, rng.standard_normal(n), kern(rng.uniform(0.05, 2.0, d), sn2=1e-6))
        assert state.jitter <= 1e-6 * state.kernel.signal_variance

    def test_gram_gradient(self, rng):
        X = rng.random((6, 3))
        k = kern([0.3, 0.5, 0.9], 1.3)
        K, dK = gram(X, X, k, grad=True)
        h = 1e-6
        for d in range(3):
            th = k.theta()
            th[d] += h
            Kp = gram(X, X, k.with_theta(th))
            th[d] -= 2 * h
            Km = gram(X, X, k.with_theta(th))
            np.testing.assert_allclose(dK[d], (Kp - Km) / (2 * h), atol=1e-8)


class TestMarginalLikelihood:
    def test_single_point(self):
        k = kern([0.3], 1.7, 0.2)
        lml, _ = lml_and_grad(k.theta(), np.array([[0.5]]), np.array([0.0]))
        assert lml == pytest.approx(-0.5 * np.log(1.7 + 0.2) - 0.5 * LOG2PI, rel=1e-14)
        s = build_state([[0.5]], [3.2], k)
        assert log_marginal_likelihood(s) == pytest.approx(lml)

    def test_closed_form(self, rng):
        X = rng.random((7, 2))
        z = rng.standard_normal(7)
        k = kern([0.3, 0.7], 1.4, 0.05)
        Ky = gram(X, X, k) + 0.05 * np.eye(7)
        ref = -0.5 * z @ np.linalg.solve(Ky, z) - 0.5 * np.linalg.slogdet(Ky)[1] - 3.5 * LOG2PI
        assert lml_and_grad(k.theta(), X, z)[0] == pytest.approx(ref, rel=1e-12)

    def test_noise_complexity_penalty(self, rng):
        X = rng.random((10, 1))
        z = rng.standard_normal(10)
        vals = [lml_and_grad(kern(0.3, 1.0, sn2).theta(), X, z)[0] for sn2 in (1.0, 10.0, 100.0, 1000.0)]
        assert np.all(np.diff(vals) < 0)

    def test_tp_limit_is_gp(self, rng):
        X = rng.random((8, 2))
        z = rng.standard_normal(8)
        th = kern([0.3, 0.4]).theta()
        gp = lml_and_grad(th, X, z, "gp")
        tp = lml_and_grad(th, X, z, "tp", tp_dof=1e9)
        assert tp[0] == pytest.approx(gp[0], rel=1e-6)
        np.testing.assert_allclose(tp[1], gp[1], rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("family", ["gp", "tp"])
    @pytest.mark.parametrize("nu", [1.5, 2.5])
    def test_gradient_vs_finite_differences(self, family, nu):
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(20):
            d = int(rng.integers(1, 5))
            n = int(rng.integers(3, 25))
            X = rng.random((n, d))
            z = rng.standard_normal(n)
            th = np.r_[rng.uniform(np.log(0.1), np.log(2.0), d), rng.uniform(-1, 1), rng.uniform(np.log(1e-3), 0)]
            f, g = lml_and_grad(th, X, z, family, 5.0, nu)
            h = 1e-5
            fd = np.empty_like(th)
            for i in range(th.size):
                e = np.zeros_like(th)
                e[i] = h
                fd[i] = (lml_and_grad(th + e, X, z, family, 5.0, nu)[0]
                         - lml_and_grad(th - e, X, z, family, 5.0, nu)[0]) / (2 * h)
            err = np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)
            worst = max(worst, err.max())
        assert worst < 1e-5


class TestPosterior:
    def test_interpolation(self, rng):
        X = rng.random((12, 2))
        y = np.sin(6 * X[:, 0]) + X[:, 1]
        s = build_state(X, y, kern([0.3, 0.3], sn2=1e-10))
        mu, var = posterior(s, X)
        np.testing.assert_allclose(mu, y, atol=1e-5)
        assert np.all(var < 1e-6)

    def test_reversion_far_away(self, rng):
        X = rng.random((10, 2))
        y = rng.standard_normal(10) + 4.0
        s = build_state(X, y, kern([0.1, 0.1], 2.0))
        mu, var = posterior(s, [[50.0, 50.0]])
        assert mu[0] == pytest.approx(y.mean(), rel=1e-12)
        assert var[0] == pytest.approx(2.0 * y.std() ** 2, rel=1e-12)

    def test_noise_inclusion(self, rng):
        X = rng.random((5, 1))
        s = build_state(X, rng.standard_normal(5), kern(0.3, sn2=0.1))
        _, v0 = posterior(s, [[0.4]])
        _, v1 = posterior(s, [[0.4]], include_noise=True)
        assert v1[0] - v0[0] == pytest.approx(0.1 * s.y_std**2, rel=1e-10)

    def test_tp_large_dof_matches_gp(self, rng):
        X = rng.random((9, 2))
        y = rng.standard_normal(9)
        k = kern([0.3, 0.6])
        Q = rng.random((30, 2))
        _, vg = posterior(build_state(X, y, k, "gp"), Q)
        _, vt = posterior(build_state(X, y, k, "tp", tp_dof=1e9), Q)
        np.testing.assert_allclose(vt, vg, atol=1e-6)

    def test_tp_variance_scaling(self, rng):
        X = rng.random((9, 2))
        y = rng.standard_normal(9)
        k = kern([0.3, 0.6])
        gp = build_state(X, y, k, "gp")
        tp = build_state(X, y, k, "tp", tp_dof=5.0)
        _, vg = posterior(gp, [[0.5, 0.5]])
        _, vt = posterior(tp, [[0.5, 0.5]])
        assert vt[0] == pytest.approx(vg[0] * (5.0 + tp.beta - 2) / (5.0 + 9 - 2), rel=1e-12)
        with pytest.raises(ValueError):
            build_state(X, y, k, "tp", tp_dof=2.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["gp", "tp"]))
    def test_variance_nonnegative(self, seed, family):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        X = rng.random((n, 2))
        X[1] = X[0] + 1e-9
        s = build_state(X, rng.standard_normal(n) * 10, kern(rng.uniform(0.05, 3, 2), sn2=1e-6), family)
        _, var = posterior(s, np.vstack([X, rng.random((50, 2))]))
        assert np.all(var >= 0) and np.all(np.isfinite(var))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_extra_point_never_adds_variance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 15))
        X = rng.random((n + 1, 2))
        y = rng.standard_normal(n + 1)
        k = kern(rng.uniform(0.1, 1.0, 2), sn2=1e-6)
        Q = rng.random((25, 2))
        a = build_state(X[:n], y[:n], k, standardize=False)
        b = build_state(X, y, k, standardize=False)
        _, va = posterior(a, Q)
        _, vb = posterior(b, Q)
        assert np.all(vb <= va + 1e-9)


class TestFit:
    def test_lengthscale_recovery(self):
        hits = 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = rng.random((40, 1))
            true = kern(0.3, 1.0, 1e-4)
            K = gram(X, X, true) + 1e-4 * np.eye(40)
            y = np.linalg.cholesky(K) @ rng.standard_normal(40)
            k, _ = fit_hyperparams(X, y, restarts=5, rng=np.random.default_rng(seed))
            hits += 0.15 <= k.lengthscales[0] <= 0.6
        assert hits >= 4

    def test_constant_targets(self, rng):
        X = rng.random((10, 2))
        y = np.full(10, 3.3)
        k, _ = fit_hyperparams(X, y, rng=rng)
        mu, _ = posterior(build_state(X, y, k), rng.random((5, 2)))
        np.testing.assert_allclose(mu, 3.3, atol=1e-9)

    def test_deterministic(self, rng):
        X = rng.random((15, 2))
        y = np.sin(5 * X[:, 0]) * X[:, 1]
        a = fit_hyperparams(X, y, restarts=3, rng=np.random.default_rng(4))
        b = fit_hyperparams(X, y, restarts=3, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(a[0].theta(), b[0].theta())

    def test_improves_likelihood(self, rng):
        X = rng.random((20, 2))
        y = np.sin(8 * X[:, 0]) + 0.05 * rng.standard_normal(20)
        k, _ = fit_hyperparams(X, y, rng=rng)
        d = Kernel.default(2)
        assert log_marginal_likelihood(build_state(X, y, k)) >= log_marginal_likelihood(build_state(X, y, d))

    def test_tp_dof_search(self, rng):
        X = rng.random((20, 2))
        y = np.where(X[:, 0] > 0.9, 50.0, np.sin(4 * X[:, 1]))
        _, nu = fit_hyperparams(X, y, family=Family.TP, fit_dof=True, rng=rng)
        assert nu > 2

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_hyperparams([[0.1]], [1.0])

    def test_all_starts_fail_warns(self, rng, monkeypatch):
        import kfat.surrogate as sur

        def boom(*a, **k):
            raise sur.SurrogateError("no")

        monkeypatch.setattr(sur, "lml_and_grad", boom)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            k, _ = fit_hyperparams(rng.random((5, 2)), rng.random(5), rng=rng)
        assert any(issubclass(w.category, SurrogateFitWarning) for w in rec)
        np.testing.assert_array_equal(k.theta(), Kernel.default(2).theta())
