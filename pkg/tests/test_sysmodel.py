import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad_vec

from kfat.sysmodel import (
    ContinuousModel,
    NoiseIntensities,
    SensorKind,
    discretize,
    load_model,
    matrix_exponential,
    model_from_dict,
    model_to_dict,
    tracking_1d,
    tracking_2d,
)


def closed_form_q_1d(V, dt):
    return V * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])


def quadrature_q(model, V, dt):
    """Van Loan integrand integrated numerically (independent of the augmented-matrix route)."""
    qc = model.Gamma @ np.diag(V) @ model.Gamma.T

    def integrand(m):
        E = matrix_exponential(model.A * m)
        return E @ qc @ E.T

    return quad_vec(integrand, 0.0, dt, epsabs=1e-14, epsrel=1e-12)[0]


class TestMatrixExponential:
    def test_zero(self):
        np.testing.assert_array_equal(matrix_exponential(np.zeros((2, 2))), np.eye(2))

    def test_nilpotent(self):
        np.testing.assert_allclose(matrix_exponential([[0, 0.1], [0, 0]]), [[1, 0.1], [0, 1]], atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_exponential(np.diag([1.0, 2.0])), np.diag([np.e, np.e**2]), rtol=1e-14)

    def test_against_taylor_series(self, rng):
        for _ in range(10):
            M = rng.standard_normal((3, 3))
            M *= rng.uniform(0.1, 10.0) / np.linalg.norm(M, 2)
            # scaling-free Taylor reference with many terms at 2^-6 then repeated squaring
            S = M / 64.0
            term, acc = np.eye(3), np.eye(3)
            for k in range(1, 30):
                term = term @ S / k
                acc = acc + term
            for _ in range(6):
                acc = acc @ acc
            E = matrix_exponential(M)
            assert np.linalg.norm(E - acc) / np.linalg.norm(acc) <= 1e-10

    @pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros(3), [[np.nan, 0], [0, 0]], [[np.inf, 0], [0, 0]]])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ValueError):
            matrix_exponential(bad)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.floats(0.01, 5.0))
    def test_inverse_identity(self, seed, n, norm):
        M = np.random.default_rng(seed).standard_normal((n, n))
        M *= norm / np.linalg.norm(M, 2)
        np.testing.assert_allclose(matrix_exponential(M) @ matrix_exponential(-M), np.eye(n), atol=1e-8)


class TestDiscretize:
    def test_1d_closed_form(self, model_1d):
        dt = 0.37
        d = discretize(model_1d, NoiseIntensities([1.0], [0.1]), dt)
        np.testing.assert_allclose(d.F, [[1, dt], [0, 1]], atol=1e-15)
        np.testing.assert_allclose(d.B, [[dt**2 / 2], [dt]], atol=1e-15)
        np.testing.assert_allclose(d.Q, closed_form_q_1d(1.0, dt), atol=1e-15)

    def test_1d_half_second(self, model_1d):
        noise = NoiseIntensities([1.0], [0.1])
        d = discretize(model_1d, noise, 0.5)
        expected = np.array([[1 / 24, 1 / 8], [1 / 8, 1 / 2]])
        np.testing.assert_allclose(d.Q, expected, atol=1e-14)
        np.testing.assert_allclose(quadrature_q(model_1d, noise.V, 0.5), expected, atol=1e-12)
        np.testing.assert_allclose(d.R, [[0.1]])

    def test_integrating_sensor(self, model_1d):
        d = discretize(model_1d.with_sensor("integrating"), NoiseIntensities([1.0], [0.1]), 0.1)
        np.testing.assert_allclose(d.R, [[1.0]], rtol=1e-14)

    def test_q_matches_quadrature_2d(self, model_2d):
        V = np.array([0.7, 1.9])
        d = discretize(model_2d, NoiseIntensities(V, [0.2, 0.1]), 0.8)
        np.testing.assert_allclose(d.Q, quadrature_q(model_2d, V, 0.8), atol=1e-12)

    def test_q_matches_quadrature_general(self, rng):
        A = rng.standard_normal((3, 3))
        m = ContinuousModel(A, rng.standard_normal((3, 1)), rng.standard_normal((3, 2)), rng.standard_normal((2, 3)))
        V = np.array([0.5, 2.0])
        d = discretize(m, NoiseIntensities(V, [1.0, 1.0]), 0.6)
        np.testing.assert_allclose(d.Q, quadrature_q(m, V, 0.6), atol=1e-11)
        np.testing.assert_allclose(d.F, matrix_exponential(A * 0.6), atol=1e-13)

    @pytest.mark.parametrize("dt", [0.0, -0.1, np.nan])
    def test_rejects_bad_dt(self, model_1d, dt):
        with pytest.raises(ValueError):
            discretize(model_1d, NoiseIntensities([1.0], [0.1]), dt)

    def test_rejects_mismatched_noise(self, model_1d):
        with pytest.raises(ValueError):
            discretize(model_1d, NoiseIntensities([1.0, 1.0], [0.1]), 0.1)

    def test_van_loan_vs_closed_form_random(self):
        rng = np.random.default_rng(2024)
        m = tracking_1d()
        for _ in range(100):
            V = rng.uniform(0.0, 10.0)
            dt = rng.uniform(0.01, 2.0)
            d = discretize(m, NoiseIntensities([V], [0.1]), dt)
            np.testing.assert_allclose(d.Q, closed_form_q_1d(V, dt), rtol=0, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 20.0), st.floats(0.0, 20.0), st.floats(0.01, 2.0))
    def test_q_psd_and_linear(self, V, c, dt):
        m = tracking_1d()
        Q = discretize(m, NoiseIntensities([V], [1.0]), dt).Q
        Qc = discretize(m, NoiseIntensities([c * V], [1.0]), dt).Q
        np.testing.assert_array_equal(Q, Q.T)
        assert np.linalg.eigvalsh(Q).min() >= -1e-10 * max(np.linalg.norm(Q), 1e-300)
        np.testing.assert_allclose(Qc, c * Q, rtol=1e-9, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 2.0), st.floats(0.01, 2.0), st.floats(1e-3, 10.0))
    def test_integrating_r_scaling(self, dt1, dt2, W):
        m = tracking_1d(SensorKind.INTEGRATING)
        noise = NoiseIntensities([1.0], [W])
        r1 = discretize(m, noise, dt1).R
        r2 = discretize(m, noise, dt2).R
        np.testing.assert_allclose(r1 / r2, dt2 / dt1, rtol=1e-12)


class TestBenchmarks:
    def test_tracking_1d_dims(self):
        m = tracking_1d()
        assert (m.nx, m.nu, m.nw, m.nz) == (2, 1, 1, 1)
        assert m.sensor_kind is SensorKind.NON_INTEGRATING
        assert np.linalg.matrix_rank(m.H) == m.nz

    def test_tracking_1d_f_and_q(self):
        d = discretize(tracking_1d(), NoiseIntensities([1.0], [0.1]), 0.1)
        assert d.F[0, 1] == pytest.approx(0.1, abs=1e-15)
        assert d.Q[1, 1] == pytest.approx(0.1, abs=1e-15)

    def test_tracking_2d_matrices(self):
        m = tracking_2d()
        assert (m.nx, m.nw, m.nz) == (4, 2, 2)
        assert np.linalg.matrix_rank(m.H) == m.nz
        dt, V0, V1 = 0.3, 1.3, 0.4
        d = discretize(m, NoiseIntensities([V0, V1], [0.2, 0.1]), dt)
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        np.testing.assert_allclose(d.F, F, atol=1e-15)
        np.testing.assert_allclose(d.B.ravel(), [dt**2 / 2, dt**2 / 2, dt, dt], atol=1e-15)
        Q = np.zeros((4, 4))
        for axis, V in ((0, V0), (1, V1)):
            p, v = axis, axis + 2
            Q[p, p], Q[p, v], Q[v, p], Q[v, v] = dt**3 / 3 * V, dt**2 / 2 * V, dt**2 / 2 * V, dt * V
        np.testing.assert_allclose(d.Q, Q, atol=1e-14)
        assert d.Q[0, 0] == pytest.approx(dt**3 * V0 / 3, rel=1e-12)
        assert d.Q[2, 2] == pytest.approx(dt * V0, rel=1e-12)

    def test_tracking_2d_zero_noise(self):
        d = discretize(tracking_2d(), NoiseIntensities([0.0, 0.0], [0.2, 0.1]), 0.5)
        np.testing.assert_array_equal(d.Q, np.zeros((4, 4)))


class TestTypes:
    def test_noise_validation(self):
        with pytest.raises(ValueError):
            NoiseIntensities([-1.0], [0.1])
        with pytest.raises(ValueError):
            NoiseIntensities([1.0], [0.0])
        NoiseIntensities([0.0], [1e-9])

    def test_model_dimension_checks(self):
        with pytest.raises(ValueError):
            ContinuousModel(np.zeros((2, 3)), [0, 1], [0, 1], [1, 0])
        with pytest.raises(ValueError):
            ContinuousModel(np.zeros((2, 2)), [0, 1, 2], [0, 1], [1, 0])
        with pytest.raises(ValueError):
            ContinuousModel(np.zeros((2, 2)), [0, 1], [0, 1], [1, 0, 0])

    def test_json_round_trip(self, tmp_path):
        m = tracking_2d(SensorKind.INTEGRATING)
        path = tmp_path / "sys.json"
        path.write_text(json.dumps({"system": model_to_dict(m)}))
        back = load_model(path)
        for name in ("A", "G", "Gamma", "H"):
            np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
        assert back.sensor_kind is SensorKind.INTEGRATING

    def test_named_system(self):
        m = model_from_dict({"name": "tracking_1d", "sensor_kind": "integrating"})
        assert m.sensor_kind is SensorKind.INTEGRATING
        with pytest.raises(ValueError):
            model_from_dict({"name": "skycrane"})
