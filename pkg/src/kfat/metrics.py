"""Filter consistency statistics.

NEES ``e' P^-1 e`` and NIS ``nu' S^-1 nu`` have expectations ``nx`` and
``nz`` for a consistent filter.  The tuning cost compares their Monte
Carlo average against that expectation on a log scale, which treats
over- and under-confidence symmetrically.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg
import scipy.special

__all__ = [
    "CostKind",
    "ConsistencyCost",
    "nees",
    "nis",
    "normalized_squares",
    "j_cost",
    "chi2_quantile",
    "chi_square_band",
    "two_sigma_coverage",
    "two_sigma_coverage_by_component",
]


class CostKind(str, Enum):
    JNEES = "jnees"
    JNIS = "jnis"


@dataclass(frozen=True)
class ConsistencyCost:
    value: float
    kind: CostKind
    mean_statistic: float
    dof: int
    n_runs: int
    n_steps: int
    dt: float | None = None


def _quad_form(v: np.ndarray, C: np.ndarray) -> float:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (v.size, v.size):
        raise ValueError(f"covariance shape {C.shape} does not match vector length {v.size}")
    try:
        cho = scipy.linalg.cho_factor(C, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"covariance is not positive definite: {exc}") from exc
    return float(v @ scipy.linalg.cho_solve(cho, v))


def nees(err, P) -> float:
    """Normalized estimation error squared ``err' P^-1 err``."""
    return _quad_form(err, P)


def nis(innov, S) -> float:
    """Normalized innovation squared ``innov' S^-1 innov``."""
    return _quad_form(innov, S)


def normalized_squares(vectors: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Batched quadratic forms.

    ``vectors`` has shape (N, T, n) and ``covs`` shape (T, n, n); the
    covariance at step k is shared by every run.  Returns (N, T).
    """
    vectors = np.asarray(vectors, dtype=float)
    covs = np.asarray(covs, dtype=float)
    L = np.linalg.cholesky(covs)  # (T, n, n)
    n = covs.shape[-1]
    # whitening matrices L_k^-1 (batched solve against I, one per step); the
    # elementwise contraction keeps each run's value independent of N
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(n), L.shape))
    y = (vectors[..., None, :] * Linv).sum(axis=-1)  # (N, T, n)
    return (y * y).sum(axis=-1)


def j_cost(samples, dof: int, kind: CostKind | str = CostKind.JNEES, dt: float | None = None) -> ConsistencyCost:
    """``|log(mean_k mean_i eps_k^i / dof)|`` for an (N, T) sample array.

    The run average is taken per step first, then the time average.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
        raise ValueError(f"samples must be a non-empty (N, T) array, got shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples contain non-finite values")
    run_avg = samples.mean(axis=0)
    total = run_avg.sum()
    if total <= 0:
        raise ValueError("consistency statistic is identically zero; log cost undefined")
    mean_stat = total / samples.shape[1]
    return ConsistencyCost(
        value=abs(float(np.log(mean_stat / dof))),
        kind=CostKind(kind),
        mean_statistic=float(mean_stat),
        dof=int(dof),
        n_runs=samples.shape[0],
        n_steps=samples.shape[1],
        dt=dt,
    )


def chi2_quantile(p: float, k: float, tol: float = 1e-13) -> float:
    """Quantile of the chi-square distribution with ``k`` dof.

    Bisection on the regularized lower incomplete gamma function
    ``P(k/2, x/2)``, which is the chi-square CDF.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if k <= 0:
        raise ValueError(f"degrees of freedom must be > 0, got {k}")
    cdf = lambda x: scipy.special.gammainc(0.5 * k, 0.5 * x)  # noqa: E731
    lo, hi = 0.0, max(1.0, float(k))
    while cdf(hi) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def chi_square_band(dof: int, n_runs: int, confidence: float = 0.95) -> tuple[float, float]:
    """Two-sided acceptance band for a run-averaged NEES/NIS value.

    The sum over ``n_runs`` runs of a consistent statistic with ``dof``
    degrees of freedom is chi-square with ``n_runs * dof`` dof.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    alpha = 1.0 - confidence
    k = n_runs * dof
    return chi2_quantile(alpha / 2, k) / n_runs, chi2_quantile(1 - alpha / 2, k) / n_runs


def two_sigma_coverage_by_component(errors, P_trace) -> np.ndarray:
    """Fraction of steps with ``|e_k[j]| <= 2 sqrt(P_k[j, j])``, per component j."""
    errors = np.asarray(errors, dtype=float)
    P_trace = np.asarray(P_trace, dtype=float)
    if errors.ndim == 1:
        errors = errors[:, None]
    if P_trace.ndim == 1:
        P_trace = P_trace[:, None, None]
    if errors.shape[0] != P_trace.shape[0]:
        raise ValueError(f"{errors.shape[0]} errors but {P_trace.shape[0]} covariances")
    sigma = np.sqrt(np.diagonal(P_trace, axis1=-2, axis2=-1))
    return np.mean(np.abs(errors) <= 2.0 * sigma, axis=0)


def two_sigma_coverage(errors, P_trace) -> float:
    """Mean over state components of :func:`two_sigma_coverage_by_component`."""
    return float(np.mean(two_sigma_coverage_by_component(errors, P_trace)))
