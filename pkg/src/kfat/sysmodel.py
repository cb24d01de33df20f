"""Continuous-time LTI plant descriptions and their discretization.

A plant is described by

    dx/dt = A x + G u + Gamma v,     z = H x + w

with white noises ``v`` (intensity ``diag(V)``) and ``w`` (intensity
``diag(W)``).  :func:`discretize` turns it into the discrete-time model
``(F, B, H, Q, R)`` used by the filter, the simulator and the oracle.
F, B and Q come from Van Loan's augmented-matrix exponentials; R depends
on whether the sensor integrates over the sample interval.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import scipy.linalg

__all__ = [
    "SensorKind",
    "ContinuousModel",
    "NoiseIntensities",
    "DiscreteModel",
    "matrix_exponential",
    "discretize",
    "tracking_1d",
    "tracking_2d",
    "model_from_dict",
    "model_to_dict",
    "load_model",
]


class SensorKind(str, Enum):
    INTEGRATING = "integrating"
    NON_INTEGRATING = "non_integrating"


def _as_matrix(a: Any, name: str) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time LTI plant ``(A, G, Gamma, H)``.

    One-dimensional inputs for ``G`` and ``Gamma`` are read as column
    vectors; a one-dimensional ``H`` is read as a single row.
    """

    A: np.ndarray
    G: np.ndarray
    Gamma: np.ndarray
    H: np.ndarray
    sensor_kind: SensorKind = SensorKind.NON_INTEGRATING
    name: str = "custom"

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        G = _as_matrix(self.G, "G")
        Gamma = _as_matrix(self.Gamma, "Gamma")
        H = np.array(self.H, dtype=float)
        H = _as_matrix(H.reshape(1, -1) if H.ndim == 1 else H, "H")
        nx = A.shape[0]
        if A.shape != (nx, nx) or nx < 1:
            raise ValueError(f"A must be square, got {A.shape}")
        for name, m in (("G", G), ("Gamma", Gamma)):
            if m.shape[0] != nx or m.shape[1] < 1:
                raise ValueError(f"{name} must have {nx} rows, got {m.shape}")
        if H.shape[1] != nx or H.shape[0] < 1:
            raise ValueError(f"H must have {nx} columns, got {H.shape}")
        for name, m in (("A", A), ("G", G), ("Gamma", Gamma), ("H", H)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "sensor_kind", SensorKind(self.sensor_kind))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.G.shape[1]

    @property
    def nw(self) -> int:
        return self.Gamma.shape[1]

    @property
    def nz(self) -> int:
        return self.H.shape[0]

    def with_sensor(self, kind: SensorKind | str) -> "ContinuousModel":
        return ContinuousModel(self.A, self.G, self.Gamma, self.H, SensorKind(kind), self.name)


@dataclass(frozen=True)
class NoiseIntensities:
    """Diagonal process (``V``) and measurement (``W``) noise intensities."""

    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        V = np.atleast_1d(np.array(self.V, dtype=float))
        W = np.atleast_1d(np.array(self.W, dtype=float))
        if V.ndim != 1 or W.ndim != 1:
            raise ValueError("V and W must be vectors")
        if not (np.all(np.isfinite(V)) and np.all(np.isfinite(W))):
            raise ValueError("noise intensities must be finite")
        if np.any(V < 0):
            raise ValueError(f"process intensities must be >= 0, got {V}")
        if np.any(W <= 0):
            raise ValueError(f"measurement intensities must be > 0, got {W}")
        V.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)

    @classmethod
    def from_vector(cls, q, nw: int) -> "NoiseIntensities":
        """Split a flat parameter vector ``[V..., W...]``."""
        q = np.asarray(q, dtype=float)
        return cls(q[:nw], q[nw:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.V, self.W])

    def check(self, model: ContinuousModel) -> None:
        if self.V.size != model.nw or self.W.size != model.nz:
            raise ValueError(
                f"intensity sizes (V:{self.V.size}, W:{self.W.size}) do not match "
                f"model (nw:{model.nw}, nz:{model.nz})"
            )


@dataclass(frozen=True)
class DiscreteModel:
    F: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    dt: float

    @property
    def nx(self) -> int:
        return self.F.shape[0]

    @property
    def nz(self) -> int:
        return self.H.shape[0]


def matrix_exponential(M) -> np.ndarray:
    """Matrix exponential ``e^M`` (Padé-13 scaling and squaring)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix_exponential needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix_exponential input contains non-finite entries")
    return scipy.linalg.expm(M)


def discretize(cont: ContinuousModel, noise: NoiseIntensities, dt: float) -> DiscreteModel:
    """Discretize ``cont`` with intensities ``noise`` at sample time ``dt``.

    Parameters
    ----------
    cont : ContinuousModel
    noise : NoiseIntensities
        Must match ``cont.nw`` and ``cont.nz``.
    dt : float
        Sample time in seconds, strictly positive.

    Returns
    -------
    DiscreteModel
        ``F = e^{A dt}``, ``B = int_0^dt e^{Am} dm G``,
        ``Q = int_0^dt e^{Am} Gamma V Gamma^T e^{A^T m} dm`` and
        ``R = W/dt`` (integrating sensor) or ``R = W``.
    """
    dt = float(dt)
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    noise.check(cont)
    nx, nu = cont.nx, cont.nu
    A = cont.A

    # e^{[[A, G], [0, 0]] dt} = [[F, B], [0, I]]
    aug = np.zeros((nx + nu, nx + nu))
    aug[:nx, :nx] = A
    aug[:nx, nx:] = cont.G
    E = matrix_exponential(aug * dt)
    F = E[:nx, :nx]
    B = E[:nx, nx:]

    # e^{[[-A, Gamma V Gamma^T], [0, A^T]] dt} = [[., F^-1 Q], [0, F^T]]
    qc = cont.Gamma @ np.diag(noise.V) @ cont.Gamma.T
    vl = np.zeros((2 * nx, 2 * nx))
    vl[:nx, :nx] = -A
    vl[:nx, nx:] = qc
    vl[nx:, nx:] = A.T
    E = matrix_exponential(vl * dt)
    Q = E[nx:, nx:].T @ E[:nx, nx:]
    Q = 0.5 * (Q + Q.T)

    W = np.diag(noise.W)
    R = W / dt if cont.sensor_kind is SensorKind.INTEGRATING else W.copy()
    return DiscreteModel(F=F, B=B, H=np.array(cont.H), Q=Q, R=R, dt=dt)


def tracking_1d(sensor_kind: SensorKind | str = SensorKind.NON_INTEGRATING) -> ContinuousModel:
    """Particle on a line: state ``[x, xdot]``, noisy acceleration, position sensor."""
    return ContinuousModel(
        A=[[0.0, 1.0], [0.0, 0.0]],
        G=[[0.0], [1.0]],
        Gamma=[[0.0], [1.0]],
        H=[[1.0, 0.0]],
        sensor_kind=SensorKind(sensor_kind),
        name="tracking_1d",
    )


def tracking_2d(sensor_kind: SensorKind | str = SensorKind.NON_INTEGRATING) -> ContinuousModel:
    """Planar double integrator: state ``[x, y, xdot, ydot]``, position sensor.

    The same scalar control acceleration drives both axes; process noise
    enters each velocity independently.
    """
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    Gamma = np.zeros((4, 2))
    Gamma[2, 0] = Gamma[3, 1] = 1.0
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    return ContinuousModel(
        A=A,
        G=[[0.0], [0.0], [1.0], [1.0]],
        Gamma=Gamma,
        H=H,
        sensor_kind=SensorKind(sensor_kind),
        name="tracking_2d",
    )


BENCHMARKS = {"tracking_1d": tracking_1d, "tracking_2d": tracking_2d}


def model_from_dict(d: Mapping[str, Any]) -> ContinuousModel:
    """Build a model from its JSON form.

    Either ``{"name": "tracking_1d"}`` (optionally with ``sensor_kind``) or
    explicit row-major ``A``, ``G``, ``Gamma``, ``H`` arrays.
    """
    if "A" not in d:
        name = d.get("name")
        if name not in BENCHMARKS:
            raise ValueError(f"unknown system {name!r}; expected one of {sorted(BENCHMARKS)} or explicit matrices")
        model = BENCHMARKS[name]()
        if "sensor_kind" in d:
            model = model.with_sensor(d["sensor_kind"])
        return model
    missing = [k for k in ("A", "G", "Gamma", "H") if k not in d]
    if missing:
        raise ValueError(f"system description is missing {missing}")
    return ContinuousModel(
        A=d["A"],
        G=d["G"],
        Gamma=d["Gamma"],
        H=d["H"],
        sensor_kind=SensorKind(d.get("sensor_kind", SensorKind.NON_INTEGRATING.value)),
        name=d.get("name", "custom"),
    )


def model_to_dict(model: ContinuousModel) -> dict:
    return {
        "name": model.name,
        "A": model.A.tolist(),
        "G": model.G.tolist(),
        "Gamma": model.Gamma.tolist(),
        "H": model.H.tolist(),
        "sensor_kind": model.sensor_kind.value,
    }


def load_model(path: str | Path) -> ContinuousModel:
    with open(path) as fh:
        d = json.load(fh)
    return model_from_dict(d.get("system", d))
