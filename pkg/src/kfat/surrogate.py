"""Gaussian- and Student-t-process regression for Bayesian optimization.

Inputs are expected in the unit box; outputs are standardized internally
(zero mean, unit variance) before any kernel computation, and posterior
predictions are mapped back to the original scale.

The Student-t process shares the Gaussian process mean.  Its predictive
variance is the GP variance rescaled by ``(nu + beta - 2) / (nu + M - 2)``
where ``beta = y' K^-1 y``, so it inflates when the data are more spread
out than the kernel expects.  Hyperparameters of each family are fitted by
maximizing that family's own marginal likelihood.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import gammaln

__all__ = [
    "Family",
    "Kernel",
    "SurrogateState",
    "SurrogateError",
    "SurrogateFitWarning",
    "kernel_eval",
    "gram",
    "build_state",
    "log_marginal_likelihood",
    "lml_and_grad",
    "fit_hyperparams",
    "posterior",
]

NOISE_FLOOR = 1e-6
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)
_LOG2PI = np.log(2 * np.pi)

# optimizer box for [log lengthscales..., log signal var, log noise var]
_LOG_ELL = (np.log(1e-2), np.log(20.0))
_LOG_SF2 = (np.log(1e-4), np.log(1e2))
_LOG_SN2 = (np.log(NOISE_FLOOR), np.log(10.0))


class Family(str, Enum):
    GP = "gp"
    TP = "tp"


class SurrogateError(RuntimeError):
    pass


class SurrogateFitWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Kernel:
    """Matérn kernel with one lengthscale per input dimension.

    ``smoothness`` is the Matérn order, 1.5 or 2.5.
    """

    log_lengthscales: np.ndarray
    log_signal_variance: float = 0.0
    log_noise_variance: float = np.log(1e-2)
    smoothness: float = 1.5

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)).copy()
        ell.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ell)
        vals = np.r_[ell, self.log_signal_variance, self.log_noise_variance]
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel hyperparameters must be finite")
        if self.smoothness not in (1.5, 2.5):
            raise ValueError(f"unsupported Matérn order {self.smoothness}; use 1.5 or 2.5")

    @classmethod
    def default(cls, dim: int, smoothness: float = 1.5) -> "Kernel":
        return cls(np.full(dim, np.log(0.3)), 0.0, np.log(1e-2), smoothness)

    @property
    def dim(self) -> int:
        return self.log_lengthscales.size

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.log_signal_variance))

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))

    def theta(self) -> np.ndarray:
        return np.r_[self.log_lengthscales, self.log_signal_variance, self.log_noise_variance]

    def with_theta(self, theta) -> "Kernel":
        theta = np.asarray(theta, dtype=float)
        return replace(self, log_lengthscales=theta[:-2], log_signal_variance=float(theta[-2]),
                       log_noise_variance=float(theta[-1]))


def _matern(r, smoothness):
    """Correlation k(r)/sigma^2 and the factor g with d k / d log ell_d = sigma^2 g (dx_d/ell_d)^2."""
    if smoothness == 1.5:
        s = np.sqrt(3.0) * r
        e = np.exp(-s)
        return (1.0 + s) * e, 3.0 * e
    s = np.sqrt(5.0) * r
    e = np.exp(-s)
    return (1.0 + s + s * s / 3.0) * e, (5.0 / 3.0) * (1.0 + s) * e


def _scaled_sq(X1, X2, k: Kernel):
    d = (X1[:, None, :] - X2[None, :, :]) / k.lengthscales
    return d * d  # (n1, n2, D)


def gram(X1, X2, k: Kernel, grad: bool = False):
    """Kernel matrix between point sets (no noise term).

    With ``grad=True`` also returns d K / d log ell_d stacked as (D, n1, n2).
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    sq = _scaled_sq(X1, X2, k)
    r = np.sqrt(sq.sum(axis=-1))
    corr, g = _matern(r, k.smoothness)
    sf2 = k.signal_variance
    K = sf2 * corr
    if not grad:
        return K
    dK = sf2 * g[None] * np.moveaxis(sq, -1, 0)
    return K, dK


def kernel_eval(x, x2, k: Kernel) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != k.dim or x2.size != k.dim:
        raise ValueError(f"points must have {k.dim} coordinates")
    return float(gram(x[None], x2[None], k)[0, 0])


def _cholesky_with_jitter(K, sf2):
    n = K.shape[0]
    for j in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(K + (j * sf2) * np.eye(n) if j else K)
            return L, j * sf2
        except np.linalg.LinAlgError:
            continue
    raise SurrogateError(f"Gram matrix not positive definite even with jitter {JITTER_LADDER[-1]} * signal variance")


@dataclass(frozen=True)
class SurrogateState:
    """A fitted regression model over unit-box inputs.

    ``z`` is the standardized target vector, ``alpha = Ky^-1 z`` and
    ``beta = z' alpha``.
    """

    X: np.ndarray
    y: np.ndarray
    kernel: Kernel
    chol: np.ndarray
    alpha: np.ndarray
    family: Family = Family.GP
    tp_dof: float = 5.0
    y_mean: float = 0.0
    y_std: float = 1.0
    z: np.ndarray | None = None
    beta: float = 0.0
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]


def _standardize(y):
    y = np.asarray(y, dtype=float)
    mu = float(y.mean())
    sd = float(y.std())
    if not np.isfinite(sd) or sd <= 1e-12:
        sd = 1.0
    return (y - mu) / sd, mu, sd


def build_state(X, y, kernel: Kernel, family: Family | str = Family.GP, tp_dof: float = 5.0,
                standardize: bool = True) -> SurrogateState:
    """Factor the Gram matrix of ``(X, y)`` under ``kernel``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} inputs but {y.size} targets")
    if X.shape[1] != kernel.dim:
        raise ValueError(f"inputs have {X.shape[1]} dims, kernel has {kernel.dim}")
    family = Family(family)
    if family is Family.TP and tp_dof <= 2:
        raise ValueError("Student-t process needs dof > 2")
    z, mu, sd = _standardize(y) if standardize else (y.copy(), 0.0, 1.0)
    K = gram(X, X, kernel) + kernel.noise_variance * np.eye(y.size)
    L, jit = _cholesky_with_jitter(K, kernel.signal_variance)
    alpha = scipy.linalg.cho_solve((L, True), z)
    return SurrogateState(X=X, y=y, kernel=kernel, chol=L, alpha=alpha, family=family, tp_dof=float(tp_dof),
                          y_mean=mu, y_std=sd, z=z, beta=float(z @ alpha), jitter=jit)


def lml_and_grad(theta, X, z, family: Family | str = Family.GP, tp_dof: float = 5.0, smoothness: float = 1.5):
    """Log marginal likelihood of standardized targets ``z`` and its gradient in log-hyperparameters.

    ``theta = [log ell_1..D, log signal var, log noise var]``.
    """
    k = Kernel(theta[:-2], theta[-2], theta[-1], smoothness)
    n = z.size
    K, dK_ell = gram(X, X, k, grad=True)
    Ky = K + k.noise_variance * np.eye(n)
    L, _ = _cholesky_with_jitter(Ky, k.signal_variance)
    alpha = scipy.linalg.cho_solve((L, True), z)
    Kinv = scipy.linalg.cho_solve((L, True), np.eye(n))
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    beta = float(z @ alpha)
    # derivative matrices: lengthscales, signal variance (= K), noise variance (= sn2 I)
    if Family(family) is Family.GP:
        lml = -0.5 * beta - 0.5 * logdet - 0.5 * n * _LOG2PI
        W = np.outer(alpha, alpha) - Kinv
        g_ell = 0.5 * np.einsum("ij,dij->d", W, dK_ell)
        g_sf = 0.5 * np.sum(W * K)
        g_sn = 0.5 * k.noise_variance * np.trace(W)
    else:
        nu = float(tp_dof)
        lml = (-0.5 * n * np.log((nu - 2.0) * np.pi) - 0.5 * logdet + gammaln(0.5 * (nu + n))
               - gammaln(0.5 * nu) - 0.5 * (nu + n) * np.log1p(beta / (nu - 2.0)))
        c = (nu + n) / (nu - 2.0 + beta)
        W = 0.5 * c * np.outer(alpha, alpha) - 0.5 * Kinv
        g_ell = np.einsum("ij,dij->d", W, dK_ell)
        g_sf = np.sum(W * K)
        g_sn = k.noise_variance * np.trace(W)
    return float(lml), np.r_[g_ell, g_sf, g_sn]


def log_marginal_likelihood(state: SurrogateState) -> float:
    """Marginal likelihood of the state's standardized targets under its own family."""
    return lml_and_grad(state.kernel.theta(), state.X, state.z, state.family, state.tp_dof,
                        state.kernel.smoothness)[0]


def _bounds(dim):
    return [_LOG_ELL] * dim + [_LOG_SF2, _LOG_SN2]


def fit_hyperparams(X, y, restarts: int = 3, rng: np.random.Generator | None = None,
                    family: Family | str = Family.GP, tp_dof: float = 5.0, smoothness: float = 1.5,
                    init: Kernel | None = None, fit_dof: bool = False):
    """Maximize the marginal likelihood from several starting points.

    The first start is ``init`` (or the default kernel); the remaining
    ``restarts - 1`` are drawn from ``rng``.  Returns ``(kernel, tp_dof)``;
    ``tp_dof`` is only changed when ``fit_dof`` is set for a TP.  If every
    start fails, the default kernel is returned and a
    :class:`SurrogateFitWarning` is emitted.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    rng = np.random.default_rng(0) if rng is None else rng
    dim = X.shape[1]
    z, _, _ = _standardize(y)
    bounds = _bounds(dim)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    default = Kernel.default(dim, smoothness)
    starts = [np.clip((init or default).theta(), lo, hi)]
    for _ in range(max(restarts, 1) - 1):
        starts.append(np.r_[rng.uniform(np.log(0.05), np.log(2.0), dim),
                            rng.uniform(np.log(0.1), np.log(10.0)),
                            rng.uniform(np.log(1e-4), np.log(0.5))])

    def objective(theta, nu):
        try:
            f, g = lml_and_grad(theta, X, z, family, nu, smoothness)
        except SurrogateError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(f):
            return 1e25, np.zeros_like(theta)
        return -f, -g

    best = (np.inf, None)
    for th0 in starts:
        try:
            res = scipy.optimize.minimize(objective, th0, args=(tp_dof,), jac=True, method="L-BFGS-B",
                                          bounds=bounds, options={"maxiter": 200})
        except (ValueError, np.linalg.LinAlgError):
            continue
        if np.isfinite(res.fun) and res.fun < best[0]:
            best = (res.fun, res.x)
    if best[1] is None or best[0] >= 1e25:
        warnings.warn("all hyperparameter starts failed; using default kernel", SurrogateFitWarning, stacklevel=2)
        return default, tp_dof
    kernel = default.with_theta(best[1])
    if fit_dof and Family(family) is Family.TP:
        grid = (2.5, 3.0, 4.0, 5.0, 8.0, 15.0, 30.0, 100.0)
        scores = [objective(kernel.theta(), nu)[0] for nu in grid]
        tp_dof = float(grid[int(np.argmin(scores))])
    return kernel, tp_dof


def posterior(state: SurrogateState, x_query, include_noise: bool = False):
    """Predictive mean and variance at query points (rows of ``x_query``).

    Returns arrays in the original target units.  Variances are clamped
    at zero.
    """
    Xq = np.atleast_2d(np.asarray(x_query, dtype=float))
    k = state.kernel
    Ks = gram(Xq, state.X, k)  # (q, n)
    mean_z = Ks @ state.alpha
    v = scipy.linalg.solve_triangular(state.chol, Ks.T, lower=True)
    var_z = k.signal_variance - np.einsum("ij,ij->j", v, v)
    if include_noise:
        var_z = var_z + k.noise_variance
    if state.family is Family.TP:
        nu = state.tp_dof
        var_z = var_z * (nu + state.beta - 2.0) / (nu + state.n - 2.0)
    var_z = np.clip(var_z, 0.0, None)
    return state.y_mean + state.y_std * mean_z, state.y_std ** 2 * var_z
