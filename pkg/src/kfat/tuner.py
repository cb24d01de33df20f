"""Noise-intensity tuning by Bayesian optimization over a multi-Δt cost.

A consistency cost evaluated at a single sample time is minimized along a
whole curve of (V, W) pairs.  Evaluating the same candidate at several
sample times and keeping the *largest* cost removes that ambiguity: only
intensities near the truth are consistent at every Δt.  The BO loop fits a
GP/TP surrogate to that max-cost, picks the next candidate by expected
improvement and finally returns the best evaluated point.  A bounded
Nelder-Mead search on the same objective is provided as the baseline.

Searches run in the unit box over the log of each intensity; everything
reported to the caller is in linear units.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping

import numpy as np
import scipy.stats
from scipy.stats import qmc

from .kalman import FilterError
from .metrics import CostKind, j_cost
from .oracle import DEFAULT_V_BOUNDS, DEFAULT_W_BOUNDS, OracleDivergence, expected_nees
from .simulate import ScenarioConfig, monte_carlo
from .surrogate import Family, Kernel, SurrogateError, build_state, fit_hyperparams, posterior
from .sysmodel import NoiseIntensities

__all__ = [
    "Objective",
    "Acquisition",
    "TuneConfig",
    "Evaluation",
    "TuneResult",
    "default_bounds",
    "multi_dt_cost",
    "expected_improvement",
    "lower_confidence_bound",
    "maximize_acquisition",
    "bayesopt_tune",
    "nelder_mead",
    "nelder_mead_tune",
    "lhs_starts",
    "derive_seed",
]


class Objective(str, Enum):
    MONTE_CARLO = "monte_carlo"
    ORACLE = "oracle"


class Acquisition(str, Enum):
    EI = "ei"
    UCB = "ucb"


_EVAL_ERRORS = (FilterError, OracleDivergence, np.linalg.LinAlgError, FloatingPointError)


def derive_seed(*keys: int) -> int:
    """Hash integer keys into an independent 63-bit seed."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def default_bounds(nw: int, nz: int) -> np.ndarray:
    return np.array([DEFAULT_V_BOUNDS] * nw + [DEFAULT_W_BOUNDS] * nz, dtype=float)


@dataclass(frozen=True)
class TuneConfig:
    scenario: ScenarioConfig
    bounds: np.ndarray | None = None
    dt_list: tuple[float, ...] = (0.1, 0.5)
    metric: CostKind = CostKind.JNEES
    n_seed: int = 20
    n_iter: int = 200
    surrogate_family: Family = Family.GP
    acquisition: Acquisition = Acquisition.EI
    seed: int = 0
    objective: Objective = Objective.MONTE_CARLO
    restarts: int = 3
    n_candidates: int = 1000
    n_local: int = 5
    smoothness: float = 1.5
    tp_dof: float = 5.0
    fit_dof: bool = False
    ucb_kappa: float = 2.0
    keep_snapshots: bool = True

    def __post_init__(self):
        m = self.scenario.model
        b = default_bounds(m.nw, m.nz) if self.bounds is None else np.asarray(self.bounds, dtype=float)
        if b.shape != (m.nw + m.nz, 2):
            raise ValueError(f"bounds must have shape ({m.nw + m.nz}, 2), got {b.shape}")
        if np.any(b[:, 0] >= b[:, 1]) or np.any(b[:, 0] <= 0):
            raise ValueError("bounds need 0 < lo < hi for every parameter")
        object.__setattr__(self, "bounds", b)
        dts = tuple(float(d) for d in self.dt_list)
        lo, hi = self.scenario.dt_bounds
        if not dts or len(set(dts)) != len(dts) or any(not lo <= d <= hi for d in dts):
            raise ValueError(f"dt_list must be non-empty, distinct and within [{lo}, {hi}], got {dts}")
        object.__setattr__(self, "dt_list", dts)
        if self.n_seed < 2 or self.n_iter < 0:
            raise ValueError("need n_seed >= 2 and n_iter >= 0")
        object.__setattr__(self, "metric", CostKind(self.metric))
        object.__setattr__(self, "surrogate_family", Family(self.surrogate_family))
        object.__setattr__(self, "acquisition", Acquisition(self.acquisition))
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.objective is Objective.ORACLE and self.metric is CostKind.JNIS:
            raise ValueError("the oracle objective only provides J_NEES")

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def to_unit(self, q) -> np.ndarray:
        lo, hi = np.log(self.bounds[:, 0]), np.log(self.bounds[:, 1])
        return (np.log(np.asarray(q, dtype=float)) - lo) / (hi - lo)

    def from_unit(self, u) -> np.ndarray:
        lo, hi = np.log(self.bounds[:, 0]), np.log(self.bounds[:, 1])
        return np.exp(lo + np.clip(np.asarray(u, dtype=float), 0.0, 1.0) * (hi - lo))

    def noise(self, q) -> NoiseIntensities:
        return NoiseIntensities.from_vector(q, self.scenario.model.nw)

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.tolist(),
            "dt_list": list(self.dt_list),
            "metric": self.metric.value,
            "n_seed": self.n_seed,
            "n_iter": self.n_iter,
            "surrogate_family": self.surrogate_family.value,
            "acquisition": self.acquisition.value,
            "seed": self.seed,
            "objective": self.objective.value,
            "restarts": self.restarts,
            "n_candidates": self.n_candidates,
            "n_local": self.n_local,
            "smoothness": self.smoothness,
            "tp_dof": self.tp_dof,
            "fit_dof": self.fit_dof,
            "ucb_kappa": self.ucb_kappa,
            "keep_snapshots": self.keep_snapshots,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], scenario: ScenarioConfig) -> "TuneConfig":
        known = set(cls.__dataclass_fields__) - {"scenario"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tuner options {sorted(unknown)}")
        kw = dict(d)
        if "dt_list" in kw:
            kw["dt_list"] = tuple(kw["dt_list"])
        return cls(scenario=scenario, **kw)


@dataclass(frozen=True)
class Evaluation:
    index: int
    q: np.ndarray
    cost: float
    per_dt: np.ndarray
    phase: str


@dataclass
class TuneResult:
    q_star: NoiseIntensities
    y_star: float
    history: list[Evaluation]
    method: str
    dt_list: tuple[float, ...]
    surrogate_snapshots: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([e.cost for e in self.history])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "q_star": {"V": self.q_star.V.tolist(), "W": self.q_star.W.tolist()},
            "y_star": self.y_star,
            "dt_list": list(self.dt_list),
            "history": [
                {"index": e.index, "phase": e.phase, "q": e.q.tolist(), "cost": e.cost, "per_dt": e.per_dt.tolist()}
                for e in self.history
            ],
            "surrogate_snapshots": self.surrogate_snapshots,
            "wall_time": self.wall_time,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nq = self.history[0].q.size if self.history else 0
        w.writerow(["iteration", "phase"] + [f"q{i}" for i in range(nq)]
                   + [f"cost_dt{dt:g}" for dt in self.dt_list] + ["max_cost"])
        for e in self.history:
            w.writerow([e.index, e.phase] + [f"{v:.17g}" for v in e.q]
                       + [f"{c:.17g}" for c in e.per_dt] + [f"{e.cost:.17g}"])
        return buf.getvalue()


def _single_cost(q: NoiseIntensities, cfg: TuneConfig, dt: float, master_seed: int) -> float:
    sc = cfg.scenario
    if cfg.objective is Objective.ORACLE:
        return expected_nees(q.V, q.W, sc.true_noise.V, sc.true_noise.W, dt, model=sc.model, P0=sc.P0).jnees
    res = monte_carlo(sc.with_candidate(q, dt=dt, master_seed=master_seed))
    if cfg.metric is CostKind.JNEES:
        return j_cost(res.nees, sc.model.nx, CostKind.JNEES, dt).value
    return j_cost(res.nis, sc.model.nz, CostKind.JNIS, dt).value


def multi_dt_cost(q, cfg: TuneConfig, iteration_seed: int) -> tuple[float, np.ndarray]:
    """Largest consistency cost of ``q`` over ``cfg.dt_list``.

    All sample times of one evaluation share the Monte Carlo master seed
    derived from ``(cfg.seed, iteration_seed)``.
    """
    q = q if isinstance(q, NoiseIntensities) else cfg.noise(q)
    master = derive_seed(cfg.seed, iteration_seed)
    per_dt = []
    for dt in cfg.dt_list:
        try:
            per_dt.append(_single_cost(q, cfg, dt, master))
        except _EVAL_ERRORS as exc:
            raise type(exc)(f"cost evaluation failed at dt={dt}: {exc}") from exc
    per_dt = np.asarray(per_dt)
    return float(per_dt.max()), per_dt


def expected_improvement(mean, variance, best_so_far):
    """Expected improvement below ``best_so_far`` (minimization)."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.clip(np.asarray(variance, dtype=float), 0.0, None))
    imp = best_so_far - mean
    # tiny sigma sends z**2 to inf inside the pdf; exp(-inf) = 0 is the right limit
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, imp / sigma, 0.0)
        ei = imp * scipy.stats.norm.cdf(z) + sigma * scipy.stats.norm.pdf(z)
    ei = np.where(sigma > 0, ei, np.clip(imp, 0.0, None))
    return np.clip(ei, 0.0, None)


def lower_confidence_bound(mean, variance, kappa: float = 2.0):
    """Negated LCB, so that larger is better like EI."""
    return -(np.asarray(mean) - kappa * np.sqrt(np.clip(variance, 0.0, None)))


def maximize_acquisition(state, rng: np.random.Generator, best_so_far: float,
                         acquisition: Acquisition | str = Acquisition.EI, bounds=None,
                         n_candidates: int = 1000, n_local: int = 5, kappa: float = 2.0) -> np.ndarray:
    """Random multi-start search for the acquisition maximum.

    ``n_candidates`` uniform points are scored, then the ``n_local`` best
    are polished with a short bounded simplex search.  ``bounds``
    defaults to the unit box the surrogate lives in.
    """
    dim = state.X.shape[1]
    bounds = np.tile([0.0, 1.0], (dim, 1)) if bounds is None else np.asarray(bounds, dtype=float)
    acquisition = Acquisition(acquisition)

    def score(U):
        mu, var = posterior(state, U)
        if acquisition is Acquisition.EI:
            return expected_improvement(mu, var, best_so_far)
        return lower_confidence_bound(mu, var, kappa)

    cand = bounds[:, 0] + rng.random((n_candidates, dim)) * (bounds[:, 1] - bounds[:, 0])
    s = score(cand)
    order = np.argsort(-s, kind="stable")[:n_local]
    best_x, best_s = cand[order[0]], s[order[0]]
    width = bounds[:, 1] - bounds[:, 0]
    for i in order:
        x, f, _ = nelder_mead(lambda u: -float(score(u[None])[0]), cand[i], bounds,
                              max_evals=40 * dim, step=0.05 * width, xtol=1e-4 * float(width.max()))
        if -f > best_s:
            best_x, best_s = x, -f
    return np.clip(best_x, bounds[:, 0], bounds[:, 1])


def lhs_starts(n: int, dim: int, seed: int) -> np.ndarray:
    """Latin-hypercube sample of ``n`` points in the unit box."""
    return qmc.LatinHypercube(d=dim, seed=np.random.default_rng(derive_seed(seed, 7))).random(n)


class _Evaluator:
    """Numbers evaluations and gives each a fresh Monte Carlo seed."""

    def __init__(self, cfg: TuneConfig):
        self.cfg = cfg
        self.history: list[Evaluation] = []

    def __call__(self, u, phase: str) -> float:
        q = self.cfg.from_unit(u)
        idx = len(self.history)
        cost, per_dt = multi_dt_cost(q, self.cfg, idx)
        self.history.append(Evaluation(idx, q, cost, per_dt, phase))
        return cost


def _result(cfg: TuneConfig, history: list[Evaluation], method: str, snaps, t0) -> TuneResult:
    costs = np.array([e.cost for e in history])
    j = int(np.argmin(costs))
    return TuneResult(q_star=cfg.noise(history[j].q), y_star=float(costs[j]), history=history, method=method,
                      dt_list=cfg.dt_list, surrogate_snapshots=snaps, wall_time=time.perf_counter() - t0)


def bayesopt_tune(cfg: TuneConfig, callback: Callable[[int, Evaluation], None] | None = None) -> TuneResult:
    """Bayesian-optimization tuning loop.

    1. evaluate a Latin-hypercube design of ``n_seed`` points;
    2. ``n_iter`` times: refit the surrogate hyperparameters, maximize
       the acquisition, evaluate the chosen point;
    3. return the evaluated point with the lowest cost.

    A point whose evaluation fails numerically is replaced once by a
    uniformly drawn point; a second failure aborts.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    evaluate = _Evaluator(cfg)

    def safe_eval(u, phase):
        try:
            return evaluate(u, phase)
        except _EVAL_ERRORS:
            return evaluate(rng.random(cfg.dim), phase + "-resample")

    design = qmc.LatinHypercube(d=cfg.dim, seed=rng).random(cfg.n_seed)
    for u in design:
        safe_eval(u, "seed")
        if callback:
            callback(len(evaluate.history) - 1, evaluate.history[-1])

    kernel: Kernel | None = None
    tp_dof = cfg.tp_dof
    snaps = []
    for it in range(cfg.n_iter):
        U = cfg.to_unit(np.array([e.q for e in evaluate.history]))
        y = np.array([e.cost for e in evaluate.history])
        try:
            kernel, tp_dof = fit_hyperparams(U, y, cfg.restarts, rng, cfg.surrogate_family, tp_dof,
                                             cfg.smoothness, init=kernel, fit_dof=cfg.fit_dof)
            state = build_state(U, y, kernel, cfg.surrogate_family, tp_dof)
            u_next = maximize_acquisition(state, rng, float(y.min()), cfg.acquisition, None, cfg.n_candidates,
                                          cfg.n_local, cfg.ucb_kappa)
        except SurrogateError:
            u_next = rng.random(cfg.dim)
        if cfg.keep_snapshots and kernel is not None:
            snaps.append({"iteration": it, "theta": kernel.theta().tolist(), "tp_dof": tp_dof})
        safe_eval(u_next, "bo")
        if callback:
            callback(len(evaluate.history) - 1, evaluate.history[-1])

    method = f"{cfg.surrogate_family.value}bo"
    return _result(cfg, evaluate.history, method, snaps, t0)


def nelder_mead(objective: Callable[[np.ndarray], float], x0, bounds=None, *, max_evals: int = 1000,
                step=0.1, xtol: float = 1e-4, alpha: float = 1.0, gamma: float = 2.0, rho: float = 0.5,
                sigma: float = 0.5):
    """Downhill simplex minimization with box clamping.

    Parameters
    ----------
    objective : callable
        Maps a 1-D array to a float.
    x0 : array_like
        Starting point.
    bounds : (n, 2) array, optional
        Every trial point is clamped into this box.
    max_evals : int
        Evaluation budget.
    step : float or array
        Offset of the initial simplex vertices from ``x0``.
    xtol : float
        Stop when every vertex lies within ``xtol`` (max-norm) of the best.
    alpha, gamma, rho, sigma : float
        Reflection, expansion, contraction and shrink coefficients.

    Returns
    -------
    x_min, f_min, evals
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    if max_evals < 1:
        raise ValueError("max_evals must be at least 1")
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        clamp = lambda x: np.clip(x, bounds[:, 0], bounds[:, 1])  # noqa: E731
    else:
        clamp = lambda x: x  # noqa: E731
    evals = 0
    best = [None, np.inf]

    def f(x):
        nonlocal evals
        if evals >= max_evals:
            raise _BudgetSpent
        evals += 1
        fx = float(objective(x))
        if fx < best[1]:
            best[0], best[1] = x.copy(), fx
        return fx

    x0 = clamp(x0)
    steps = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    simplex = [x0]
    for i in range(n):
        v = x0.copy()
        v[i] += steps[i]
        v = clamp(v)
        if v[i] == x0[i]:
            v[i] = x0[i] - steps[i]
            v = clamp(v)
        simplex.append(v)
    simplex = np.array(simplex)
    try:
        fs = np.array([f(v) for v in simplex])
        _simplex_loop(f, simplex, fs, clamp, n, xtol, alpha, gamma, rho, sigma)
    except _BudgetSpent:
        pass
    return best[0], float(best[1]), evals


class _BudgetSpent(Exception):
    pass


def _simplex_loop(f, simplex, fs, clamp, n, xtol, alpha, gamma, rho, sigma):
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) < xtol:
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = clamp(centroid + alpha * (centroid - simplex[-1]))
        fr = f(xr)
        if fs[0] <= fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[0]:
            xe = clamp(centroid + gamma * (xr - centroid))
            fe = f(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = clamp(centroid + rho * (xr - centroid))
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fs[-1] = xc, fc
                continue
        else:
            xc = clamp(centroid + rho * (simplex[-1] - centroid))
            fc = f(xc)
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
                continue
        # shrink toward the best vertex
        for i in range(1, n + 1):
            simplex[i] = clamp(simplex[0] + sigma * (simplex[i] - simplex[0]))
            fs[i] = f(simplex[i])


def nelder_mead_tune(cfg: TuneConfig, x0_unit=None, step: float = 0.15) -> TuneResult:
    """Downhill-simplex baseline on the same multi-Δt objective.

    Uses the same evaluation budget as :func:`bayesopt_tune`
    (``n_seed + n_iter``).  ``x0_unit`` is a start in the unit box;
    drawn from the config seed when omitted.
    """
    t0 = time.perf_counter()
    if x0_unit is None:
        x0_unit = np.random.default_rng(derive_seed(cfg.seed, 2)).random(cfg.dim)
    evaluate = _Evaluator(cfg)
    budget = cfg.n_seed + cfg.n_iter

    def obj(u):
        try:
            return evaluate(u, "nm")
        except _EVAL_ERRORS:
            return 1e6

    box = np.tile([0.0, 1.0], (cfg.dim, 1))
    nelder_mead(obj, x0_unit, box, max_evals=budget, step=step)
    return _result(cfg, evaluate.history, "nelder-mead", [], t0)
