"""Ground-truth simulation and Monte Carlo evaluation of a candidate tuning.

Every run ``i`` of a batch draws its noise from its own counter-based
generator keyed by ``(master_seed, i)``, so results do not depend on how
many runs are in the batch or in which order they are produced.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .kalman import FilterError, apply_rows, run_filter_batch
from .metrics import normalized_squares
from .sysmodel import (
    ContinuousModel,
    DiscreteModel,
    NoiseIntensities,
    discretize,
    model_from_dict,
    model_to_dict,
)

__all__ = [
    "DT_MIN",
    "DT_MAX",
    "ScenarioConfig",
    "MonteCarloResult",
    "control_input",
    "control_sequence",
    "run_rng",
    "psd_factor",
    "simulate_truth",
    "simulate_truth_batch",
    "monte_carlo",
]

DT_MIN = 0.01
DT_MAX = 2.0


def control_input(t: float, nu: int = 1) -> np.ndarray:
    """Control acceleration ``2 cos(0.75 t)`` on every channel."""
    return np.full(nu, 2.0 * np.cos(0.75 * t))


def control_sequence(dt: float, steps: int, nu: int = 1) -> np.ndarray:
    """Controls ``u_k = control_input(k dt)`` for k = 1..steps, shape (steps, nu)."""
    t = dt * np.arange(1, steps + 1)
    return np.repeat((2.0 * np.cos(0.75 * t))[:, None], nu, axis=1)


def run_rng(master_seed: int, run_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(run_index)])))


def psd_factor(C: np.ndarray) -> np.ndarray:
    """``L`` with ``L L' = C`` for symmetric PSD ``C`` (rank deficiency allowed)."""
    C = 0.5 * (C + C.T)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(C)
        return U * np.sqrt(np.clip(w, 0.0, None))


def _draw(rng: np.random.Generator, steps: int, nx: int, nz: int):
    v = rng.standard_normal((steps, nx))
    w = rng.standard_normal((steps, nz))
    return v, w


def _propagate(model: DiscreteModel, x0, v_std, w_std):
    """Truth recursion for (N, T, .) standard-normal draws."""
    N, T, _ = v_std.shape
    LQ = psd_factor(model.Q)
    LR = psd_factor(model.R)
    v = apply_rows(v_std, LQ)
    w = apply_rows(w_std, LR)
    Bu = control_sequence(model.dt, T, model.B.shape[1]) @ model.B.T
    x = np.broadcast_to(np.asarray(x0, dtype=float), (N, model.nx)).copy()
    states = np.empty((N, T, model.nx))
    for k in range(T):
        x = apply_rows(x, model.F) + Bu[k] + v[:, k]
        states[:, k] = x
    meas = apply_rows(states, model.H) + w
    return states, meas


def simulate_truth(model: DiscreteModel, x0, steps: int, rng: np.random.Generator):
    """One ground-truth trajectory.

    Returns
    -------
    states : (steps, nx) array
    measurements : (steps, nz) array
    """
    v, w = _draw(rng, steps, model.nx, model.nz)
    states, meas = _propagate(model, x0, v[None], w[None])
    return states[0], meas[0]


def simulate_truth_batch(model: DiscreteModel, x0, steps: int, master_seed: int, runs: int, first_run: int = 0,
                         P0=None):
    """Trajectories for runs ``first_run .. first_run + runs - 1``, shape (N, T, .).

    With ``P0`` each run's initial state is drawn from N(x0, P0), using
    the run's own stream after its noise draws; otherwise every run
    starts at ``x0``.
    """
    nx = model.nx
    v = np.empty((runs, steps, nx))
    w = np.empty((runs, steps, model.nz))
    starts = np.broadcast_to(np.asarray(x0, dtype=float), (runs, nx)).copy()
    L0 = None if P0 is None else psd_factor(np.asarray(P0, dtype=float))
    for j in range(runs):
        rng = run_rng(master_seed, first_run + j)
        v[j], w[j] = _draw(rng, steps, nx, model.nz)
        if L0 is not None:
            starts[j] += L0 @ rng.standard_normal(nx)
    return _propagate(model, starts, v, w)


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo experiment: truth intensities, candidate tuning, protocol."""

    model: ContinuousModel
    true_noise: NoiseIntensities
    candidate_noise: NoiseIntensities | None = None
    dt: float = 0.1
    steps: int = 200
    runs: int = 200
    master_seed: int = 0
    x0: np.ndarray | None = None
    P0: np.ndarray | None = None
    dt_bounds: tuple[float, float] = (DT_MIN, DT_MAX)

    def __post_init__(self):
        if self.steps < 1 or self.runs < 1:
            raise ValueError(f"steps and runs must be >= 1, got steps={self.steps}, runs={self.runs}")
        lo, hi = self.dt_bounds
        if not lo <= self.dt <= hi:
            raise ValueError(f"dt={self.dt} outside [{lo}, {hi}]")
        self.true_noise.check(self.model)
        if self.candidate_noise is not None:
            self.candidate_noise.check(self.model)
        nx = self.model.nx
        x0 = np.zeros(nx) if self.x0 is None else np.asarray(self.x0, dtype=float)
        P0 = np.eye(nx) if self.P0 is None else np.asarray(self.P0, dtype=float)
        if x0.shape != (nx,) or P0.shape != (nx, nx):
            raise ValueError(f"x0/P0 shapes {x0.shape}/{P0.shape} do not match nx={nx}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "P0", P0)

    def with_candidate(self, q: NoiseIntensities, **changes) -> "ScenarioConfig":
        return replace(self, candidate_noise=q, **changes)

    def to_dict(self) -> dict:
        d = {
            "system": model_to_dict(self.model),
            "true_noise": {"V": self.true_noise.V.tolist(), "W": self.true_noise.W.tolist()},
            "dt": self.dt,
            "steps": self.steps,
            "runs": self.runs,
            "master_seed": self.master_seed,
            "x0": self.x0.tolist(),
            "P0": self.P0.tolist(),
            "dt_bounds": list(self.dt_bounds),
        }
        if self.candidate_noise is not None:
            d["candidate_noise"] = {"V": self.candidate_noise.V.tolist(), "W": self.candidate_noise.W.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], model: ContinuousModel | None = None) -> "ScenarioConfig":
        if model is None:
            model = model_from_dict(d["system"])
        cand = d.get("candidate_noise")
        return cls(
            model=model,
            true_noise=NoiseIntensities(**d["true_noise"]),
            candidate_noise=NoiseIntensities(**cand) if cand is not None else None,
            dt=float(d.get("dt", 0.1)),
            steps=int(d.get("steps", 200)),
            runs=int(d.get("runs", 200)),
            master_seed=int(d.get("master_seed", 0)),
            x0=d.get("x0"),
            P0=d.get("P0"),
            dt_bounds=tuple(d.get("dt_bounds", (DT_MIN, DT_MAX))),
        )


@dataclass(frozen=True)
class MonteCarloResult:
    """Per-run, per-step consistency statistics of one candidate tuning.

    ``nees`` uses the posterior covariance P(k|k); ``nees_pred`` uses the
    predicted covariance P(k|k-1).  Covariance traces are shared by all
    runs of a linear filter and are stored once.
    """

    nees: np.ndarray  # (N, T)
    nees_pred: np.ndarray  # (N, T)
    nis: np.ndarray  # (N, T)
    errors: np.ndarray  # (N, T, nx), x - x_hat(k|k)
    errors_pred: np.ndarray  # (N, T, nx), x - x_hat(k|k-1)
    P_post: np.ndarray  # (T, nx, nx)
    P_pred: np.ndarray  # (T, nx, nx)
    S: np.ndarray  # (T, nz, nz)
    candidate_model: DiscreteModel
    true_model: DiscreteModel = field(repr=False)

    @property
    def n_runs(self) -> int:
        return self.nees.shape[0]

    @property
    def n_steps(self) -> int:
        return self.nees.shape[1]


def monte_carlo(cfg: ScenarioConfig, runs: slice | None = None) -> MonteCarloResult:
    """Simulate ``cfg.runs`` truths and filter each with the candidate tuning.

    Each truth starts from a draw of N(x0, P0) and the filter from
    ``(x0, P0)``, so a correctly tuned filter is consistent from the first
    step on.

    ``runs`` optionally restricts the batch to a slice of run indices
    (useful for chunking); statistics for a given index are identical
    whichever batch it is computed in.
    """
    if cfg.candidate_noise is None:
        raise ValueError("scenario has no candidate_noise to evaluate")
    idx = range(cfg.runs)[runs] if runs is not None else range(cfg.runs)
    if idx.step != 1 or len(idx) == 0:
        raise ValueError("runs must select a non-empty contiguous block")
    true_model = discretize(cfg.model, cfg.true_noise, cfg.dt)
    cand_model = discretize(cfg.model, cfg.candidate_noise, cfg.dt)
    states, meas = simulate_truth_batch(true_model, cfg.x0, cfg.steps, cfg.master_seed, len(idx), idx.start,
                                       P0=cfg.P0)
    controls = control_sequence(cfg.dt, cfg.steps, cfg.model.nu)
    try:
        tr = run_filter_batch(cand_model, cfg.x0, cfg.P0, controls, meas)
    except FilterError as exc:
        raise FilterError(f"filter failed at dt={cfg.dt}: {exc.args[0]}", step=exc.step, run=idx.start) from exc
    err = states - tr.x_post
    err_pred = states - tr.x_pred
    nees_post = normalized_squares(err, tr.P_post)
    nees_pred = normalized_squares(err_pred, tr.P_pred)
    nis_ = normalized_squares(tr.innovation, tr.S)
    for name, arr in (("NEES", nees_post), ("NIS", nis_)):
        bad = ~np.isfinite(arr)
        if bad.any():
            i, k = np.argwhere(bad)[0]
            raise FilterError(f"non-finite {name}", step=int(k), run=int(idx.start + i))
    return MonteCarloResult(
        nees=nees_post,
        nees_pred=nees_pred,
        nis=nis_,
        errors=err,
        errors_pred=err_pred,
        P_post=tr.P_post,
        P_pred=tr.P_pred,
        S=tr.S,
        candidate_model=cand_model,
        true_model=true_model,
    )
