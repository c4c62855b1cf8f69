"""Gaussian process regression with an RBF kernel.

Zero-mean prior, squared-exponential covariance, Cholesky-based
posterior, log marginal likelihood with analytic gradients, and a
multi-start hyperparameter search over log-parameters. An incremental
variant supports grow-only datasets so mission loops can track posterior
variance at fixed probe points cheaply.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize

HYPER_MIN = 1e-10
HYPER_MAX = 1e10

VARIANCE_EPS = 1e-12  # variances below this are treated as exactly zero


class FactorizationError(RuntimeError):
    """Kernel matrix factorization failed; carries the last jitter tried."""

    def __init__(self, message, jitter):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class GPHyper:
    """RBF kernel hyperparameters: amplitude, length scale, noise."""

    sigma_v: float = 1.0
    length_scale: float = 0.1
    sigma_n: float = 0.01

    def __post_init__(self):
        for name in ("sigma_v", "length_scale", "sigma_n"):
            v = getattr(self, name)
            if not (HYPER_MIN <= v <= HYPER_MAX):
                raise ValueError(f"{name}={v} outside [{HYPER_MIN}, {HYPER_MAX}]")


# hyperparameters used while exploring: fixed, not data-fitted
EXPLORATION_HYPER = GPHyper(sigma_v=1.0, length_scale=0.1, sigma_n=0.01)


@dataclass
class GPPosterior:
    mean: np.ndarray
    variance: np.ndarray  # clamped to [0, sigma_v^2 + sigma_n^2]


def kernel(x, xp, h: GPHyper):
    """RBF covariance sigma_v^2 exp(-|x - xp|^2 / (2 l^2)) for two points."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
        raise ValueError("positions must be finite")
    d2 = float(np.sum((x - xp) ** 2))
    return h.sigma_v**2 * np.exp(-d2 / (2.0 * h.length_scale**2))


def kernel_matrix(A, B, h: GPHyper) -> np.ndarray:
    """Cross-covariance matrix between two point sets (n, d) and (m, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(d2, 0.0, out=d2)
    return h.sigma_v**2 * np.exp(-d2 / (2.0 * h.length_scale**2))


def _chol_with_jitter(K, sigma_n2):
    """Cholesky of K + sigma_n^2 I, escalating jitter on failure."""
    n = K.shape[0]
    jitter = 0.0
    scale = max(np.mean(np.diag(K)), 1e-30)
    for _ in range(8):
        try:
            c = cho_factor(K + (sigma_n2 + jitter) * np.eye(n), lower=True)
            if jitter > 0.0:
                warnings.warn(f"kernel matrix needed jitter {jitter:.2e}")
            return c, jitter
        except np.linalg.LinAlgError:
            jitter = 1e-12 * scale if jitter == 0.0 else jitter * 100.0
    raise FactorizationError("kernel matrix not positive definite", jitter)


def _validated_xy(X, y=None):
    X = np.atleast_2d(np.asarray(X, dtype=float)) if np.size(X) else np.zeros((0, 2))
    if not np.all(np.isfinite(X)):
        raise ValueError("sample locations must be finite")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise ValueError("X and values must have matching length")
    if not np.all(np.isfinite(y)):
        raise ValueError("sample values must be finite")
    return X, y


def posterior(X, y, Xq, h: GPHyper) -> GPPosterior:
    """Posterior mean and variance at query points under the zero-mean GP.

    Solved through a Cholesky factorization of K + sigma_n^2 I. With no
    training data the prior (zero mean, sigma_v^2 variance) is returned.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if np.size(X) == 0:
        q = Xq.shape[0]
        return GPPosterior(np.zeros(q), np.full(q, h.sigma_v**2))
    X, y = _validated_xy(X, y)
    c, _ = _chol_with_jitter(kernel_matrix(X, X, h), h.sigma_n**2)
    Ks = kernel_matrix(Xq, X, h)
    mean = Ks @ cho_solve(c, y)
    half = solve_triangular(c[0], Ks.T, lower=True)
    var = h.sigma_v**2 - np.sum(half**2, axis=0)
    var = np.maximum(var, 0.0)
    var[var < VARIANCE_EPS] = 0.0
    return GPPosterior(mean, var)


def posterior_variance(X, Xq, h: GPHyper) -> np.ndarray:
    """Posterior variance only; depends on locations, not sample values."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if np.size(X) == 0:
        return np.full(Xq.shape[0], h.sigma_v**2)
    X = _validated_xy(X)
    c, _ = _chol_with_jitter(kernel_matrix(X, X, h), h.sigma_n**2)
    Ks = kernel_matrix(Xq, X, h)
    half = solve_triangular(c[0], Ks.T, lower=True)
    var = h.sigma_v**2 - np.sum(half**2, axis=0)
    var = np.maximum(var, 0.0)
    var[var < VARIANCE_EPS] = 0.0
    return var


def log_marginal_likelihood(X, y, h: GPHyper) -> float:
    """Gaussian log evidence of the values under the zero-mean GP."""
    X, y = _validated_xy(X, y)
    if y.size < 1:
        raise ValueError("need at least one observation")
    c, _ = _chol_with_jitter(kernel_matrix(X, X, h), h.sigma_n**2)
    alpha = cho_solve(c, y)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * y.size * np.log(2.0 * np.pi))


def _lml_and_grad(theta, X, y):
    """Log marginal likelihood and gradient in log-parameter space."""
    sv, l, sn = np.exp(theta)
    n = y.size
    d2 = np.sum(X**2, axis=1)[:, None] + np.sum(X**2, axis=1)[None, :] - 2.0 * X @ X.T
    np.maximum(d2, 0.0, out=d2)
    Krbf = sv**2 * np.exp(-d2 / (2.0 * l**2))
    K = Krbf + sn**2 * np.eye(n)
    try:
        c = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros(3)
    alpha = cho_solve(c, y)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    lml = -0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi)

    Kinv = cho_solve(c, np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    # dK/dlog(sv) = 2 Krbf; dK/dlog(l) = Krbf * d2 / l^2; dK/dlog(sn) = 2 sn^2 I
    g_sv = 0.5 * np.sum(W * (2.0 * Krbf))
    g_l = 0.5 * np.sum(W * (Krbf * d2 / l**2))
    g_sn = 0.5 * np.trace(W) * 2.0 * sn**2
    return float(lml), np.array([g_sv, g_l, g_sn])


def optimize_hyper(X, y, bounds=None, restarts: int = 4, *, seed: int = 0,
                   max_iter: int = 20, full_output: bool = False):
    """Maximize the log marginal likelihood over (sigma_v, l, sigma_n).

    Multi-start L-BFGS over log-parameters with a fixed iteration budget
    per restart; deterministic for a given seed. ``bounds`` is a triple
    of (lo, hi) pairs in natural units. If every start fails, the best
    evaluated point is returned and a warning is issued.
    """
    X, y = _validated_xy(X, y)
    if y.size < 10:
        raise ValueError("hyperparameter optimization needs at least 10 samples")
    if bounds is None:
        bounds = ((HYPER_MIN, HYPER_MAX),) * 3
    log_bounds = [(np.log(lo), np.log(hi)) for lo, hi in bounds]

    rng = np.random.default_rng(seed)
    y_scale = max(np.std(y), 1e-12)
    span = max(np.max(np.ptp(X, axis=0)), 1e-6)
    starts = [np.log([y_scale, 0.25 * span, 0.01 * y_scale])]
    for _ in range(max(0, restarts - 1)):
        starts.append(np.array([
            np.log(y_scale) + rng.uniform(-2, 2),
            np.log(span) + rng.uniform(-3.5, 0.5),
            np.log(y_scale) + rng.uniform(-6, -1),
        ]))
    starts = [np.clip(s, [b[0] for b in log_bounds], [b[1] for b in log_bounds])
              for s in starts]

    best_theta, best_val, trace, any_ok = None, -np.inf, [], False
    for s in starts:
        res = minimize(lambda th: tuple(-v for v in _lml_and_grad(th, X, y)),
                       s, jac=True, method="L-BFGS-B", bounds=log_bounds,
                       options={"maxiter": max_iter})
        val = -res.fun
        trace.append({"start": np.exp(s).tolist(), "hyper": np.exp(res.x).tolist(),
                      "log_marginal": float(val), "iterations": int(res.nit)})
        if np.isfinite(val):
            any_ok = True
            if val > best_val:
                best_val, best_theta = val, res.x
    if best_theta is None:
        warnings.warn("hyperparameter search failed at every start")
        best_theta = starts[0]
    elif not any_ok:
        warnings.warn("hyperparameter search did not converge; best point returned")

    sv, l, sn = np.exp(best_theta)
    hyper = GPHyper(float(sv), float(l), float(sn))
    if full_output:
        return hyper, {"log_marginal": float(best_val), "trace": trace,
                       "converged": bool(any_ok)}
    return hyper


class IncrementalGP:
    """Grow-only GP that tracks posterior variance at fixed probe points.

    Maintains the Cholesky factor of K + sigma_n^2 I under single-sample
    appends (O(n^2) each) and the whitened cross-covariance to the probe
    set, so probe variances stay current at O(n * probes) per append.
    Matches the batch ``posterior_variance`` to numerical precision.
    """

    def __init__(self, hyper: GPHyper, probes):
        self.hyper = hyper
        self.probes = np.atleast_2d(np.asarray(probes, dtype=float))
        self._X = np.zeros((0, self.probes.shape[1]))
        self._L = np.zeros((0, 0))
        self._W = np.zeros((0, self.probes.shape[0]))
        self._probe_sumsq = np.zeros(self.probes.shape[0])

    @property
    def n_samples(self):
        return self._X.shape[0]

    def add(self, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        h = self.hyper
        kxx = h.sigma_v**2 + h.sigma_n**2
        if self.n_samples == 0:
            d = np.sqrt(kxx)
            l_row = np.zeros(0)
        else:
            k = kernel_matrix(self._X, x, h).ravel()
            l_row = solve_triangular(self._L, k, lower=True)
            d2 = kxx - l_row @ l_row
            if d2 <= 1e-12 * kxx:
                d2 = 1e-12 * kxx  # nearly coincident sample; keep factor valid
            d = np.sqrt(d2)
        n = self.n_samples
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self._L
        L[n, :n] = l_row
        L[n, n] = d
        kp = kernel_matrix(x, self.probes, h).ravel()
        w_row = (kp - l_row @ self._W) / d
        self._L = L
        self._W = np.vstack([self._W, w_row])
        self._probe_sumsq += w_row**2
        self._X = np.vstack([self._X, x])

    def probe_variance(self) -> np.ndarray:
        var = self.hyper.sigma_v**2 - self._probe_sumsq
        var = np.maximum(var, 0.0)
        var[var < VARIANCE_EPS] = 0.0
        return var

    def max_probe_variance(self) -> float:
        return float(np.max(self.probe_variance()))
