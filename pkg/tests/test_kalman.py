import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kfat.kalman import FilterError, FilterState, covariance_sequence, predict, run_filter, run_filter_batch, update
from kfat.sysmodel import DiscreteModel, NoiseIntensities, discretize, tracking_1d, tracking_2d

from conftest import random_spd


def make_model(F, H, Q, R, B=None, dt=0.1):
    F = np.asarray(F, float)
    B = np.zeros((F.shape[0], 1)) if B is None else np.asarray(B, float)
    return DiscreteModel(F=F, B=B, H=np.atleast_2d(H).astype(float), Q=np.asarray(Q, float), R=np.atleast_2d(R).astype(float), dt=dt)


@pytest.fixture
def d1():
    return discretize(tracking_1d(), NoiseIntensities([1.0], [0.1]), 0.1)


class TestPredict:
    def test_identity_dynamics(self):
        m = make_model(np.eye(2), [[1, 0]], np.zeros((2, 2)), [[1.0]])
        s = predict(FilterState(np.array([3.0, -1.0]), np.eye(2)), m, [0.0])
        np.testing.assert_array_equal(s.x_hat, [3.0, -1.0])
        np.testing.assert_array_equal(s.P, np.eye(2))

    def test_constant_velocity(self, d1):
        s = predict(FilterState(np.array([0.0, 1.0]), np.eye(2)), d1, [0.0])
        np.testing.assert_allclose(s.x_hat, [0.1, 1.0], atol=1e-15)

    def test_zero_prior(self, d1):
        s = predict(FilterState(np.zeros(2), np.zeros((2, 2))), d1, [0.0])
        np.testing.assert_allclose(s.P, d1.Q, atol=1e-18)

    def test_control_enters_through_b(self, d1):
        s = predict(FilterState(np.zeros(2), np.eye(2)), d1, [2.0])
        np.testing.assert_allclose(s.x_hat, 2.0 * d1.B[:, 0])

    def test_bad_shapes(self, d1):
        with pytest.raises(ValueError):
            predict(FilterState(np.zeros(3), np.eye(3)), d1, [0.0])
        with pytest.raises(ValueError):
            predict(FilterState(np.zeros(2), np.eye(2)), d1, [0.0, 1.0])


class TestUpdate:
    def test_hand_evaluated(self, d1):
        m = make_model(d1.F, [[1, 0]], d1.Q, [[1.0]])
        post, nu, S, K = update(FilterState(np.zeros(2), np.eye(2)), m, [1.0])
        np.testing.assert_allclose(S, [[2.0]])
        np.testing.assert_allclose(K, [[0.5], [0.0]])
        np.testing.assert_allclose(nu, [1.0])
        np.testing.assert_allclose(post.x_hat, [0.5, 0.0])
        np.testing.assert_allclose(post.P, [[0.5, 0.0], [0.0, 1.0]])

    def test_uninformative_measurement(self, d1):
        m = make_model(d1.F, d1.H, d1.Q, [[1e12]])
        x = np.array([1.0, 2.0])
        post, *_ = update(FilterState(x, np.eye(2)), m, [50.0])
        assert np.linalg.norm(post.x_hat - x) <= 1e-6 * np.linalg.norm(x)

    def test_known_state(self, d1):
        x = np.array([1.0, 2.0])
        post, _, _, K = update(FilterState(x, np.zeros((2, 2))), d1, [7.0])
        np.testing.assert_array_equal(K, np.zeros((2, 1)))
        np.testing.assert_array_equal(post.x_hat, x)

    def test_singular_s_reports_step(self):
        m = make_model(np.eye(2), [[1, 0]], np.zeros((2, 2)), [[0.0]])
        with pytest.raises(FilterError) as info:
            update(FilterState(np.zeros(2), np.zeros((2, 2))), m, [0.0], step=17)
        assert info.value.step == 17
        assert "step 17" in str(info.value)

    def test_error_propagates_from_run_filter(self):
        m = make_model(np.eye(2), [[1, 0]], np.zeros((2, 2)), [[0.0]])
        with pytest.raises(FilterError) as info:
            run_filter(m, np.zeros(2), np.zeros((2, 2)), np.zeros((3, 1)), np.zeros((3, 1)))
        assert info.value.step == 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
    def test_joseph_equivalence_and_trace(self, seed, nx, nz):
        rng = np.random.default_rng(seed)
        P = random_spd(rng, nx)
        H = rng.standard_normal((nz, nx))
        R = random_spd(rng, nz, 0.5)
        m = make_model(np.eye(nx), H, np.zeros((nx, nx)), R)
        post, _, _, K = update(FilterState(np.zeros(nx), P), m, np.zeros(nz))
        IKH = np.eye(nx) - K @ H
        joseph = IKH @ P @ IKH.T + K @ R @ K.T
        np.testing.assert_allclose(post.P, joseph, atol=1e-8 * max(1.0, np.abs(P).max()))
        assert np.trace(post.P) <= np.trace(P) + 1e-10
        np.testing.assert_array_equal(post.P, post.P.T)


class TestRunFilter:
    def test_empty(self, d1):
        tr = run_filter(d1, np.zeros(2), np.eye(2), np.zeros((0, 1)), np.zeros((0, 1)))
        assert len(tr) == 0

    def test_length_mismatch(self, d1):
        with pytest.raises(ValueError):
            run_filter(d1, np.zeros(2), np.eye(2), np.zeros((3, 1)), np.zeros((4, 1)))

    def test_noise_free_replay(self):
        d = discretize(tracking_1d(), NoiseIntensities([0.0], [1.0]), 0.1)
        x = np.array([1.0, -0.5])
        u = 2 * np.cos(0.75 * 0.1 * np.arange(1, 31))[:, None]
        zs = []
        xk = x.copy()
        for k in range(30):
            xk = d.F @ xk + d.B @ u[k]
            zs.append(d.H @ xk)
        tr = run_filter(d, x, np.zeros((2, 2)), u, np.array(zs))
        np.testing.assert_allclose(tr.innovation, 0.0, atol=1e-12)

    def test_covariances_independent_of_measurements(self, d1, rng):
        z1 = rng.standard_normal((50, 1))
        z2 = 100 * rng.standard_normal((50, 1))
        u = np.zeros((50, 1))
        a = run_filter(d1, np.zeros(2), np.eye(2), u, z1)
        b = run_filter(d1, np.zeros(2), np.eye(2), u, z2)
        np.testing.assert_array_equal(a.P_pred, b.P_pred)
        np.testing.assert_array_equal(a.P_post, b.P_post)

    def test_batch_matches_sequential(self, rng):
        d = discretize(tracking_2d(), NoiseIntensities([1.0, 2.0], [0.2, 0.1]), 0.5)
        T, N = 40, 5
        u = rng.standard_normal((T, 1))
        z = rng.standard_normal((N, T, 2))
        x0 = rng.standard_normal(4)
        bt = run_filter_batch(d, x0, np.eye(4), u, z)
        for i in range(N):
            tr = run_filter(d, x0, np.eye(4), u, z[i])
            np.testing.assert_allclose(bt.x_post[i], tr.x_post, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(bt.x_pred[i], tr.x_pred, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(bt.innovation[i], tr.innovation, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(bt.P_post, tr.P_post, rtol=1e-14, atol=1e-15)
            np.testing.assert_allclose(bt.S, tr.S, rtol=1e-14)

    def test_covariance_sequence_trace_monotone(self, d1):
        P_pred, P_post, S, K = covariance_sequence(d1, np.eye(2) * 10, 100)
        tr_pred = np.trace(P_pred, axis1=1, axis2=2)
        tr_post = np.trace(P_post, axis1=1, axis2=2)
        assert np.all(tr_post <= tr_pred + 1e-10)
        assert S.shape == (100, 1, 1) and K.shape == (100, 2, 1)

    def test_consistent_run_nis_in_band(self):
        from kfat.metrics import chi_square_band, nis
        from kfat.simulate import control_sequence, run_rng, simulate_truth

        d = discretize(tracking_1d(), NoiseIntensities([1.0], [0.1]), 0.1)
        states, meas = simulate_truth(d, np.zeros(2), 200, run_rng(3, 0))
        tr = run_filter(d, np.zeros(2), np.eye(2), control_sequence(0.1, 200), meas)
        avg = np.mean([nis(tr.innovation[k], tr.S[k]) for k in range(200)])
        lo, hi = chi_square_band(1, 200, 0.95)
        assert lo <= avg <= hi
