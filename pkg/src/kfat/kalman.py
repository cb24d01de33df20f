"""Discrete-time linear Kalman filter.

The filter alternates

    x-  = F x + B u               P-  = F P F' + Q
    nu  = z - H x-                S   = H P- H' + R
    K   = P- H' S^-1
    x+  = x- + K nu               P+  = P- - K S K'

Covariances are symmetrized after every step and ``S`` is only ever
factored (Cholesky), never inverted.

:func:`run_filter` processes one measurement sequence and keeps every
intermediate quantity.  :func:`run_filter_batch` exploits the fact that
the covariance/gain sequence of a linear filter does not depend on the
measurements and propagates many runs at once; it is what the Monte
Carlo harness uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .sysmodel import DiscreteModel

__all__ = [
    "FilterError",
    "FilterState",
    "FilterTrace",
    "BatchTrace",
    "apply_rows",
    "covariance_sequence",
    "predict",
    "update",
    "run_filter",
    "run_filter_batch",
]


class FilterError(RuntimeError):
    """Numerical failure inside the filter (e.g. S not positive definite)."""

    def __init__(self, message: str, step: int | None = None, run: int | None = None):
        self.step = step
        self.run = run
        where = []
        if run is not None:
            where.append(f"run {run}")
        if step is not None:
            where.append(f"step {step}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class FilterTrace:
    """Per-step filter quantities, stacked along the first axis."""

    x_pred: np.ndarray  # (T, nx)
    P_pred: np.ndarray  # (T, nx, nx)
    x_post: np.ndarray  # (T, nx)
    P_post: np.ndarray  # (T, nx, nx)
    innovation: np.ndarray  # (T, nz)
    S: np.ndarray  # (T, nz, nz)
    K: np.ndarray  # (T, nx, nz)

    def __len__(self) -> int:
        return self.x_post.shape[0]


def apply_rows(x: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``x @ M.T`` for a stack of row vectors, evaluated elementwise.

    Each output row depends only on its own input row, bit for bit, so a
    run gives identical numbers whatever batch it is processed in (BLAS
    matmul kernels change summation order with the batch size).
    """
    return (x[..., None, :] * M).sum(axis=-1)


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _check_control(model: DiscreteModel, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.B.shape[1],):
        raise ValueError(f"control must have shape ({model.B.shape[1]},), got {u.shape}")
    return u


def predict(state: FilterState, model: DiscreteModel, u) -> FilterState:
    x = np.asarray(state.x_hat, dtype=float)
    P = np.asarray(state.P, dtype=float)
    if x.shape != (model.nx,) or P.shape != (model.nx, model.nx):
        raise ValueError(f"state dimensions {x.shape}, {P.shape} do not match nx={model.nx}")
    u = _check_control(model, u)
    x_pred = model.F @ x + model.B @ u
    P_pred = _sym(model.F @ P @ model.F.T + model.Q)
    return FilterState(x_pred, P_pred)


def _factor_innovation(P: np.ndarray, model: DiscreteModel, step=None):
    S = _sym(model.H @ P @ model.H.T + model.R)
    try:
        cho = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FilterError(f"innovation covariance is not positive definite: {exc}", step=step) from exc
    # K = P H' S^-1, S symmetric
    K = scipy.linalg.cho_solve(cho, model.H @ P).T
    return S, K


def update(state: FilterState, model: DiscreteModel, z, *, step: int | None = None):
    """Measurement update.

    Returns
    -------
    (FilterState, innovation, S, K)
    """
    x = np.asarray(state.x_hat, dtype=float)
    P = np.asarray(state.P, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (model.nz,):
        raise ValueError(f"measurement must have shape ({model.nz},), got {z.shape}")
    S, K = _factor_innovation(P, model, step)
    nu = z - model.H @ x
    x_post = x + K @ nu
    P_post = _sym(P - K @ S @ K.T)
    return FilterState(x_post, P_post), nu, S, K


def run_filter(model: DiscreteModel, x0, P0, controls, measurements) -> FilterTrace:
    """Run predict/update over a measurement sequence.

    ``controls[k]`` is applied in the prediction that precedes the update
    with ``measurements[k]``.
    """
    controls = np.asarray(controls, dtype=float).reshape(-1, model.B.shape[1])
    measurements = np.asarray(measurements, dtype=float).reshape(-1, model.nz)
    T = measurements.shape[0]
    if controls.shape[0] != T:
        raise ValueError(f"got {controls.shape[0]} controls for {T} measurements")
    nx, nz = model.nx, model.nz
    out = {
        "x_pred": np.empty((T, nx)),
        "P_pred": np.empty((T, nx, nx)),
        "x_post": np.empty((T, nx)),
        "P_post": np.empty((T, nx, nx)),
        "innovation": np.empty((T, nz)),
        "S": np.empty((T, nz, nz)),
        "K": np.empty((T, nx, nz)),
    }
    state = FilterState(np.asarray(x0, dtype=float), np.asarray(P0, dtype=float))
    for k in range(T):
        prior = predict(state, model, controls[k])
        state, nu, S, K = update(prior, model, measurements[k], step=k)
        out["x_pred"][k] = prior.x_hat
        out["P_pred"][k] = prior.P
        out["x_post"][k] = state.x_hat
        out["P_post"][k] = state.P
        out["innovation"][k] = nu
        out["S"][k] = S
        out["K"][k] = K
    return FilterTrace(**out)


@dataclass(frozen=True)
class BatchTrace:
    """Many runs of the same filter; covariances are shared by all runs."""

    x_pred: np.ndarray  # (N, T, nx)
    x_post: np.ndarray  # (N, T, nx)
    innovation: np.ndarray  # (N, T, nz)
    P_pred: np.ndarray  # (T, nx, nx)
    P_post: np.ndarray  # (T, nx, nx)
    S: np.ndarray  # (T, nz, nz)
    K: np.ndarray  # (T, nx, nz)


def covariance_sequence(model: DiscreteModel, P0, T: int):
    """Prior/posterior covariance, innovation covariance and gain for T steps."""
    nx, nz = model.nx, model.nz
    P_pred = np.empty((T, nx, nx))
    P_post = np.empty((T, nx, nx))
    S_all = np.empty((T, nz, nz))
    K_all = np.empty((T, nx, nz))
    P = np.asarray(P0, dtype=float)
    F, Q = model.F, model.Q
    for k in range(T):
        P = _sym(F @ P @ F.T + Q)
        S, K = _factor_innovation(P, model, step=k)
        P_pred[k] = P
        S_all[k] = S
        K_all[k] = K
        P = _sym(P - K @ S @ K.T)
        P_post[k] = P
    return P_pred, P_post, S_all, K_all


def run_filter_batch(model: DiscreteModel, x0, P0, controls, measurements) -> BatchTrace:
    """Vectorized :func:`run_filter` over ``measurements`` of shape (N, T, nz).

    ``x0`` is either one initial estimate shared by all runs or an
    (N, nx) array.
    """
    measurements = np.asarray(measurements, dtype=float)
    N, T, nz = measurements.shape
    controls = np.asarray(controls, dtype=float).reshape(T, model.B.shape[1])
    P_pred, P_post, S_all, K_all = covariance_sequence(model, P0, T)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (N, model.nx)).copy()
    Bu = controls @ model.B.T  # (T, nx)
    x_pred = np.empty((N, T, model.nx))
    x_post = np.empty((N, T, model.nx))
    innov = np.empty((N, T, nz))
    for k in range(T):
        x = apply_rows(x, model.F) + Bu[k]
        x_pred[:, k] = x
        nu = measurements[:, k] - apply_rows(x, model.H)
        innov[:, k] = nu
        x = x + apply_rows(nu, K_all[k])
        x_post[:, k] = x
    return BatchTrace(x_pred, x_post, innov, P_pred, P_post, S_all, K_all)
