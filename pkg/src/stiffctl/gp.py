"""Gaussian-process regression on the unit cube with an ARD Matern-5/2 kernel.

Hyperparameters (log lengthscales, log signal variance, log noise variance)
maximize the log marginal likelihood by multi-start coordinate search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .core import RandomStream, StiffctlError

NOISE_FLOOR = 1e-6
MIN_STEP = 1.0 / 64  # log-hyperparameter resolution of the coordinate search
SQRT5 = np.sqrt(5.0)
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class SurrogateFitError(StiffctlError):
    pass


def matern52(r):
    s = SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _bounds(d):
    lo = np.array([np.log(1e-2)] * d + [np.log(5e-2), np.log(NOISE_FLOOR)])
    hi = np.array([np.log(1e1)] * d + [np.log(2e1), np.log(1.0)])
    return lo, hi


def default_hyper(d):
    return np.array([np.log(0.3)] * d + [0.0, np.log(1e-3)])


def _cholesky(A):
    """Cholesky factor with jitter escalation; ``None`` if every level fails."""
    scale = np.mean(np.diag(A))
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(A + jitter * scale * np.eye(len(A)) if jitter else A)
        except np.linalg.LinAlgError:
            continue
    return None


@dataclass
class GP:
    """Fitted posterior. Targets are standardized internally."""

    X: np.ndarray
    y: np.ndarray
    hyper: np.ndarray
    y_mean: float
    y_std: float
    L: np.ndarray
    alpha: np.ndarray
    lml: float
    trace: list = field(default_factory=list)

    @property
    def lengthscales(self):
        return np.exp(self.hyper[:-2])

    @property
    def signal_var(self):
        return float(np.exp(self.hyper[-2]))

    @property
    def noise_var(self):
        return float(np.exp(self.hyper[-1]))

    def kernel(self, A, B):
        A = np.ascontiguousarray(A, dtype=float)
        B = np.ascontiguousarray(B, dtype=float)
        return _cross_kernel(A, B, 1.0 / self.lengthscales ** 2, self.signal_var)

    def predict_standardized(self, Xs):
        """Latent mean and variance in standardized target units."""
        Xs = np.atleast_2d(np.asarray(Xs, float))
        Ks = self.kernel(Xs, self.X)
        mean = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = np.maximum(self.signal_var - (v * v).sum(axis=0), 0.0)
        return mean, var

    def predict(self, Xs):
        mean, var = self.predict_standardized(Xs)
        return mean * self.y_std + self.y_mean, var * self.y_std ** 2


@numba.njit(cache=True)
def _cross_kernel(A, B, inv_ls2, sf2):
    n, m, d = A.shape[0], B.shape[0], A.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            r2 = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                r2 += diff * diff * inv_ls2[k]
            s = SQRT5 * np.sqrt(r2)
            out[i, j] = sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)
    return out


@numba.njit(cache=True)
def _lml_nb(D2, y, h):
    n, _, d = D2.shape
    inv_ls2 = np.exp(-2.0 * h[:d])
    sf2 = np.exp(h[d])
    sn2 = max(np.exp(h[d + 1]), NOISE_FLOOR)
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = sf2 + sn2
        for j in range(i):
            r2 = 0.0
            for k in range(d):
                r2 += D2[i, j, k] * inv_ls2[k]
            s = SQRT5 * np.sqrt(r2)
            val = sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)
            K[i, j] = val
            K[j, i] = val
    L = np.linalg.cholesky(K)
    z = np.empty(n)
    logdet = 0.0
    for i in range(n):
        acc = y[i]
        for j in range(i):
            acc -= L[i, j] * z[j]
        z[i] = acc / L[i, i]
        logdet += np.log(L[i, i])
    return -0.5 * np.dot(z, z) - logdet - 0.5 * n * np.log(2.0 * np.pi)


@numba.njit(cache=True)
def _search_nb(D2, y, h0, lo, hi, max_steps, step, min_step):
    h = np.minimum(np.maximum(h0.copy(), lo), hi)
    best = _lml_nb(D2, y, h)
    accepted = [best]
    steps = 0
    dim = h.size
    while steps < max_steps and step >= min_step:
        improved = False
        for i in range(dim):
            for sign in (1.0, -1.0):
                if steps >= max_steps:
                    break
                old = h[i]
                new = min(max(old + sign * step, lo[i]), hi[i])
                if new == old:
                    continue
                h[i] = new
                val = _lml_nb(D2, y, h)
                steps += 1
                if val > best:
                    best = val
                    accepted.append(best)
                    improved = True
                    break
                h[i] = old
        if not improved:
            step *= 0.5
    return h, best, np.array(accepted)


class _LML:
    def __init__(self, X, y):
        self.X, self.y = X, y
        self.n, self.d = X.shape
        self.D2 = (X[:, None, :] - X[None, :, :]) ** 2  # (n, n, d)

    def factor(self, h):
        ls2 = np.exp(2.0 * h[:-2])
        r = np.sqrt(self.D2 @ (1.0 / ls2))
        K = np.exp(h[-2]) * matern52(r)
        K[np.diag_indices(self.n)] += max(np.exp(h[-1]), NOISE_FLOOR)
        return _cholesky(K)

    def __call__(self, h):
        L = self.factor(h)
        if L is None:
            return -np.inf, None, None
        alpha = cho_solve((L, True), self.y)
        val = -0.5 * self.y @ alpha - np.log(np.diag(L)).sum() - 0.5 * self.n * np.log(2 * np.pi)
        return float(val), L, alpha


def _safe_lml(f, h):
    try:
        return float(_lml_nb(f.D2, f.y, np.asarray(h, float)))
    except Exception:
        return f(h)[0]


def coordinate_search(f, h0, lo, hi, max_steps=100, step=1.0, min_step=1e-3):
    """Greedy coordinate ascent; each trial move counts as one step.

    Returns ``(best_h, best_value, accepted_values)``.
    """
    h = np.clip(np.asarray(h0, float), lo, hi)
    best = f(h)
    accepted = [best]
    steps = 0
    dim = len(h)
    while steps < max_steps and step >= min_step:
        improved = False
        for i in range(dim):
            for sign in (1.0, -1.0):
                if steps >= max_steps:
                    break
                trial = h.copy()
                trial[i] = np.clip(trial[i] + sign * step, lo[i], hi[i])
                if trial[i] == h[i]:
                    continue
                val = f(trial)
                steps += 1
                if val > best:
                    h, best = trial, val
                    accepted.append(best)
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return h, best, accepted


def gp_fit(X, y, stream: RandomStream | None = None, hyper=None, optimize=True, n_starts=5, max_steps=100,
           init=None) -> GP:
    """Fit a GP posterior.

    With ``optimize=False`` the given ``hyper`` (log lengthscales, log signal
    variance, log noise variance) is used as is. Otherwise ``n_starts``
    candidates (``init`` if given, the defaults, then random draws from
    ``stream``) are scored by marginal likelihood and the best one is refined
    by a ``max_steps`` coordinate search.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    if len(X) < 1:
        raise SurrogateFitError("GP needs at least one training point")
    n, d = X.shape
    y_mean = float(y.mean())
    y_std = float(y.std()) if n > 1 and y.std() > 1e-12 else 1.0
    ys = (y - y_mean) / y_std
    f = _LML(X, ys)
    lo, hi = _bounds(d)
    trace = []
    if not optimize:
        if hyper is None:
            hyper = default_hyper(d)
        best_h = np.asarray(hyper, float)
    else:
        starts = []
        if init is not None:
            starts.append(np.asarray(init, float))
        starts.append(default_hyper(d))
        rng = (stream or RandomStream(0, "gp")).generator()
        while len(starts) < n_starts:
            starts.append(lo + (hi - lo) * rng.random(d + 2))
        # screen the starts, then refine the most promising one
        scores = [_safe_lml(f, h0) for h0 in starts[:n_starts]]
        h0 = starts[int(np.argmax(scores))]
        if not np.isfinite(max(scores)):
            raise SurrogateFitError("no hyperparameter setting gave a positive definite kernel")
        try:
            best_h, _, acc = _search_nb(f.D2, ys, np.asarray(h0, float), lo, hi, max_steps, 1.0, MIN_STEP)
            acc = list(acc)
        except Exception:
            # non-PD kernel somewhere along the path: retry with jitter escalation
            best_h, _, acc = coordinate_search(lambda h: f(h)[0], h0, lo, hi, max_steps=max_steps, min_step=MIN_STEP)
        trace.append(acc)
    lml, L, alpha = f(best_h)
    if L is None:
        raise SurrogateFitError("kernel matrix is not positive definite even with jitter")
    return GP(X, ys, best_h, y_mean, y_std, L, alpha, lml, trace)


def gp_predict(gp: GP, X):
    """Posterior mean and latent variance in original target units."""
    return gp.predict(X)
