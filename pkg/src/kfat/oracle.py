"""Closed-form expected NEES of a mistuned linear Kalman filter.

A filter tuned with intensities (V, W) believes its one-step-ahead error
covariance evolves as

    P <- X P X' + Kb R(W) Kb' + Q(V),     Kb = F K,  X = F - Kb H,

with ``K`` the Kalman gain computed from ``P``.  When the plant actually
has intensities (V_a, W_a), the true mean squared error of the same filter
obeys

    Sigma <- X Sigma X' + Kb R(W_a) Kb' + Q(V_a)

with the *same* ``X`` and ``Kb``.  At steady state the expected NEES of
the predicted estimate is ``trace(P^-1 Sigma)``.  No simulation is needed,
which makes this the reference against which Monte Carlo costs are
checked.

Every routine here iterates all requested (V, W) points as one stacked
batch; points drop out of the active set individually once converged.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .sysmodel import ContinuousModel, DiscreteModel, NoiseIntensities, discretize, tracking_1d

__all__ = [
    "NeesForm",
    "OracleResult",
    "OracleDivergence",
    "filter_cov_recursion",
    "true_mse_recursion",
    "expected_nees",
    "oracle_grid",
    "nees_line_scan",
    "multi_dt_surface",
    "log_grid",
    "DEFAULT_V_BOUNDS",
    "DEFAULT_W_BOUNDS",
]

DEFAULT_V_BOUNDS = (0.1, 5.0)
DEFAULT_W_BOUNDS = (0.01, 0.5)
STEADY_TOL = 1e-12
MAX_ITER = 100_000
_DIVERGED = 1e12


class NeesForm(str, Enum):
    PREDICTED = "predicted"
    POSTERIOR = "posterior"


class OracleDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleResult:
    expected_nees: float
    jnees: float
    P_filter: np.ndarray
    Sigma_true: np.ndarray
    iterations: int
    converged: bool
    form: NeesForm = NeesForm.PREDICTED


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _gain(P, H, R):
    """Kalman weight ``P H' (H P H' + R)^-1`` for stacked P, R."""
    S = H @ P @ H.T + R
    return np.swapaxes(np.linalg.solve(S, H @ P), -1, -2), S


def _steady(F, H, Q, R, Qa=None, Ra=None, P0=None, tol=STEADY_TOL, max_iter=MAX_ITER, history=False):
    """Iterate the filter (and optionally true-MSE) recursions to steady state.

    Q, R, Qa, Ra are stacked (G, ., .); F and H are shared.  Returns
    (P, Sigma, iterations, converged[, P_hist, Sigma_hist]).
    """
    G, nx = Q.shape[0], F.shape[0]
    track_true = Qa is not None
    P = np.broadcast_to(np.eye(nx) if P0 is None else np.asarray(P0, float), (G, nx, nx)).copy()
    Sig = P.copy() if track_true else None
    iters = np.zeros(G, dtype=int)
    conv = np.zeros(G, dtype=bool)
    active = np.arange(G)
    hist_P, hist_S = ([P.copy()], [Sig.copy() if track_true else None]) if history else (None, None)
    for it in range(1, max_iter + 1):
        Pa = P[active]
        K, _ = _gain(Pa, H, R[active])
        Kb = F @ K
        X = F - Kb @ H
        Xt = np.swapaxes(X, -1, -2)
        Kbt = np.swapaxes(Kb, -1, -2)
        Pn = _sym(X @ Pa @ Xt + Kb @ R[active] @ Kbt + Q[active])
        delta = np.linalg.norm(Pn - Pa, axis=(-2, -1))
        P[active] = Pn
        if track_true:
            Sa = Sig[active]
            Sn = _sym(X @ Sa @ Xt + Kb @ Ra[active] @ Kbt + Qa[active])
            delta = np.maximum(delta, np.linalg.norm(Sn - Sa, axis=(-2, -1)))
            Sig[active] = Sn
        if history:
            hist_P.append(P.copy())
            hist_S.append(Sig.copy() if track_true else None)
        iters[active] = it
        done = delta < tol
        conv[active[done]] = True
        blown = np.linalg.norm(Pn, axis=(-2, -1)) > _DIVERGED
        if track_true:
            blown |= np.linalg.norm(Sn, axis=(-2, -1)) > _DIVERGED
        active = active[~(done | blown)]
        if active.size == 0:
            break
    out = (P, Sig, iters, conv)
    if history:
        out += (hist_P, hist_S)
    return out


def filter_cov_recursion(model: DiscreteModel, P0=None, tol: float = STEADY_TOL, max_iter: int = MAX_ITER,
                         return_history: bool = False):
    """Predicted-covariance recursion of a filter built on ``model``.

    Returns ``(P_steady, iterations, converged)``, plus the list of
    iterates (starting with ``P0``) when ``return_history`` is set.
    """
    P, _, it, conv, *hist = _steady(model.F, model.H, model.Q[None], model.R[None], P0=P0, tol=tol,
                                    max_iter=max_iter, history=return_history)
    out = (P[0], int(it[0]), bool(conv[0]))
    if return_history:
        out += ([h[0] for h in hist[0]],)
    return out


def true_mse_recursion(filter_model: DiscreteModel, true_model: DiscreteModel, P0=None,
                       tol: float = STEADY_TOL, max_iter: int = MAX_ITER, return_history: bool = False):
    """Joint filter/true-MSE recursion.

    ``filter_model`` carries the tuned Q(V), R(W); ``true_model`` the
    plant's Q(V_a), R(W_a).  Returns ``(P, Sigma, iterations, converged)``
    and optionally the two iterate lists.
    """
    P, S, it, conv, *hist = _steady(
        filter_model.F, filter_model.H, filter_model.Q[None], filter_model.R[None],
        true_model.Q[None], true_model.R[None], P0=P0, tol=tol, max_iter=max_iter, history=return_history,
    )
    out = (P[0], S[0], int(it[0]), bool(conv[0]))
    if return_history:
        out += ([h[0] for h in hist[0]], [h[0] for h in hist[1]])
    return out


def _stack_models(model: ContinuousModel, Vs: np.ndarray, Ws: np.ndarray, dt: float):
    """Stacked Q, R for G intensity vectors; F, H shared.

    Q is linear in V, so one Van Loan evaluation per noise channel is
    enough for the whole batch.
    """
    nw, nz = model.nw, model.nz
    base = [discretize(model, NoiseIntensities(np.eye(nw)[j], np.ones(nz)), dt) for j in range(nw)]
    Q = np.einsum("gj,jab->gab", Vs, np.stack([b.Q for b in base]))
    R1 = base[0].R  # diagonal, W = 1 on every channel
    R = Ws[:, :, None] * R1[None] * np.eye(nz)[None]
    return base[0].F, base[0].H, Q, R


def _posterior_pair(P, Sig, H, R, Ra):
    K, S = _gain(P, H, R)
    nx = P.shape[-1]
    IKH = np.eye(nx) - K @ H
    Pp = _sym(P - K @ S @ np.swapaxes(K, -1, -2))
    Sp = _sym(IKH @ Sig @ np.swapaxes(IKH, -1, -2) + K @ Ra @ np.swapaxes(K, -1, -2))
    return Pp, Sp


def _oracle_batch(model, Vs, Ws, V_a, W_a, dt, form=NeesForm.PREDICTED, P0=None, tol=STEADY_TOL,
                  max_iter=MAX_ITER):
    Vs = np.asarray(Vs, float).reshape(-1, model.nw)
    Ws = np.asarray(Ws, float).reshape(-1, model.nz)
    G = Vs.shape[0]
    F, H, Q, R = _stack_models(model, Vs, Ws, dt)
    Va = np.broadcast_to(np.asarray(V_a, float).reshape(1, -1), (G, model.nw))
    Wa = np.broadcast_to(np.asarray(W_a, float).reshape(1, -1), (G, model.nz))
    _, _, Qa, Ra = _stack_models(model, Va[:1], Wa[:1], dt)
    Qa = np.broadcast_to(Qa, Q.shape)
    Ra = np.broadcast_to(Ra, R.shape)
    P, Sig, iters, conv = _steady(F, H, Q, R, Qa, Ra, P0=P0, tol=tol, max_iter=max_iter)
    if NeesForm(form) is NeesForm.POSTERIOR:
        P, Sig = _posterior_pair(P, Sig, H, R, Ra)
    enees = np.trace(np.linalg.solve(P, Sig), axis1=-2, axis2=-1)
    return enees, P, Sig, iters, conv


def expected_nees(V, W, V_a, W_a, dt: float, model: ContinuousModel | None = None,
                  form: NeesForm | str = NeesForm.PREDICTED, P0=None, tol: float = STEADY_TOL,
                  max_iter: int = MAX_ITER) -> OracleResult:
    """Steady-state expected NEES of the filter tuned with (V, W).

    Parameters
    ----------
    V, W : float or array
        Filter intensities (one per noise channel).
    V_a, W_a : float or array
        True plant intensities.
    dt : float
        Sample time.
    model : ContinuousModel, optional
        Defaults to :func:`~kfat.sysmodel.tracking_1d`.
    form : {"predicted", "posterior"}
        Which covariance the NEES is normalized by.

    Raises
    ------
    OracleDivergence
        If the recursions blow up before reaching steady state.
    """
    model = tracking_1d() if model is None else model
    enees, P, Sig, iters, conv = _oracle_batch(model, np.atleast_1d(V)[None], np.atleast_1d(W)[None], V_a, W_a,
                                               dt, form, P0, tol, max_iter)
    if not np.all(np.isfinite(P)) or np.linalg.norm(P[0]) > _DIVERGED or np.linalg.norm(Sig[0]) > _DIVERGED:
        raise OracleDivergence(f"covariance recursion diverged for V={V}, W={W}, dt={dt}")
    e = float(enees[0])
    return OracleResult(
        expected_nees=e,
        jnees=abs(float(np.log(e / model.nx))),
        P_filter=P[0],
        Sigma_true=Sig[0],
        iterations=int(iters[0]),
        converged=bool(conv[0]),
        form=NeesForm(form),
    )


@dataclass(frozen=True)
class OracleGrid:
    """Oracle values on the product grid ``V_axis x W_axis`` (arrays indexed [iV, iW])."""

    V_axis: np.ndarray
    W_axis: np.ndarray
    dt: float
    expected_nees: np.ndarray
    jnees: np.ndarray
    logdet_P: np.ndarray
    logdet_Sigma: np.ndarray
    converged: np.ndarray

    def rows(self):
        """Flattened ``(V, W, dt, expected_nees, jnees, logdet_P, logdet_Sigma)`` tuples."""
        for i, v in enumerate(self.V_axis):
            for j, w in enumerate(self.W_axis):
                yield (float(v), float(w), self.dt, float(self.expected_nees[i, j]), float(self.jnees[i, j]),
                       float(self.logdet_P[i, j]), float(self.logdet_Sigma[i, j]))


def oracle_grid(V_axis: Sequence[float], W_axis: Sequence[float], V_a, W_a, dt: float,
                model: ContinuousModel | None = None, form: NeesForm | str = NeesForm.PREDICTED) -> OracleGrid:
    """Oracle over a (V, W) grid.

    Each grid value is applied to every process (measurement) channel, so
    multi-channel models are scanned along their common scale.
    """
    model = tracking_1d() if model is None else model
    V_axis = np.asarray(V_axis, float)
    W_axis = np.asarray(W_axis, float)
    VV, WW = np.meshgrid(V_axis, W_axis, indexing="ij")
    Vs = np.repeat(VV.reshape(-1, 1), model.nw, axis=1)
    Ws = np.repeat(WW.reshape(-1, 1), model.nz, axis=1)
    enees, P, Sig, _, conv = _oracle_batch(model, Vs, Ws, V_a, W_a, dt, form)
    shape = VV.shape
    return OracleGrid(
        V_axis=V_axis,
        W_axis=W_axis,
        dt=float(dt),
        expected_nees=enees.reshape(shape),
        jnees=np.abs(np.log(enees / model.nx)).reshape(shape),
        logdet_P=np.linalg.slogdet(P)[1].reshape(shape),
        logdet_Sigma=np.linalg.slogdet(Sig)[1].reshape(shape),
        converged=conv.reshape(shape),
    )


def nees_line_scan(V_axis, W_axis, V_a, W_a, dt: float, band: tuple[float, float] = (1.995, 2.005),
                   model: ContinuousModel | None = None, grid: OracleGrid | None = None):
    """Grid points whose expected NEES falls inside ``band``.

    Returns a list of ``(V, W, expected_nees)``; pass a precomputed
    ``grid`` to avoid recomputation.
    """
    if grid is None:
        grid = oracle_grid(V_axis, W_axis, V_a, W_a, dt, model)
    lo, hi = band
    mask = (grid.expected_nees >= lo) & (grid.expected_nees <= hi)
    return [(float(grid.V_axis[i]), float(grid.W_axis[j]), float(grid.expected_nees[i, j]))
            for i, j in np.argwhere(mask)]


def multi_dt_surface(V_axis, W_axis, dt_list: Sequence[float], V_a, W_a,
                     model: ContinuousModel | None = None) -> np.ndarray:
    """Pointwise maximum over ``dt_list`` of the oracle J_NEES, shape (nV, nW)."""
    if len(dt_list) == 0:
        raise ValueError("dt_list must not be empty")
    surfaces = [oracle_grid(V_axis, W_axis, V_a, W_a, dt, model).jnees for dt in dt_list]
    return np.max(surfaces, axis=0)
