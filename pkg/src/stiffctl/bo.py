"""Bi-objective Bayesian optimization over per-phase stiffness.

Candidates live in the unit cube (log-stiffness mapped affinely). Each
objective gets its own GP; the acquisition is Monte-Carlo expected
hypervolume improvement, optionally multiplied by a decaying prior weight
``pi(theta) ** (beta / n)``. Scores are compared in log space so that a
strongly peaked prior cannot underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import ndtr, ndtri

from .core import RandomStream, StiffnessParams
from .gp import GP, SurrogateFitError, gp_fit
from .pareto import Staircase, hypervolume, pareto_indices

N_MC = 512
POOL = 1024
N_REFINE = 8
REFINE_RADII = (0.1, 0.05, 0.025)


@dataclass(frozen=True)
class SearchSpace:
    """``M * n_axes`` stiffness entries, each in ``[k_min, k_max]``."""

    M: int
    n_axes: int
    k_min: float = 10.0
    k_max: float = 1000.0

    def __post_init__(self):
        if self.M < 1 or self.n_axes < 1:
            raise ValueError("search space needs at least one dimension")
        if not 0 < self.k_min < self.k_max:
            raise ValueError("need 0 < k_min < k_max")

    @property
    def d(self) -> int:
        return self.M * self.n_axes

    def to_unit(self, k):
        lo, hi = np.log(self.k_min), np.log(self.k_max)
        return (np.log(np.asarray(k, float)) - lo) / (hi - lo)

    def from_unit(self, u):
        lo, hi = np.log(self.k_min), np.log(self.k_max)
        u = np.clip(np.asarray(u, float), 0.0, 1.0)
        k = np.clip(np.exp(lo + u * (hi - lo)), self.k_min, self.k_max)
        # exact bounds at the cube faces (exp(log(k)) can be off by an ulp)
        return np.where(u <= 0.0, self.k_min, np.where(u >= 1.0, self.k_max, k))

    def params(self, u) -> StiffnessParams:
        K = self.from_unit(u).reshape(self.M, self.n_axes)
        return StiffnessParams(K, self.k_min, self.k_max)


@dataclass(frozen=True)
class StiffnessPrior:
    """Product of per-entry Gaussians around ``mean``, truncated to the bounds.

    The width of each factor is the distance from the mean to the nearer bound,
    floored at ``1e-3 * (k_max - k_min)``. Truncation mass is not renormalized;
    ``scale`` multiplies the whole density.
    """

    mean: np.ndarray
    k_min: float = 10.0
    k_max: float = 1000.0
    beta: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        m = np.clip(np.asarray(self.mean, float).ravel(), self.k_min, self.k_max)
        object.__setattr__(self, "mean", m)
        if self.beta < 0 or not self.scale > 0:
            raise ValueError("beta must be >= 0 and scale > 0")

    @property
    def sigma(self) -> np.ndarray:
        width = np.minimum(self.k_max - self.mean, self.mean - self.k_min)
        return np.maximum(width, 1e-3 * (self.k_max - self.k_min))

    @property
    def mode(self) -> np.ndarray:
        return self.mean

    def log_density(self, k) -> np.ndarray:
        k = np.asarray(k, float)
        z = (k - self.mean) / self.sigma
        out = -0.5 * z * z - np.log(self.sigma * np.sqrt(2.0 * np.pi))
        out = out.sum(axis=-1) + np.log(self.scale)
        inside = np.all((k >= self.k_min) & (k <= self.k_max), axis=-1)
        return np.where(inside, out, -np.inf)

    def density(self, k) -> np.ndarray:
        return np.exp(self.log_density(k))

    def log_kernel(self, k) -> np.ndarray:
        """``log pi(k) - log pi(mode)``: the density without its constant factors."""
        k = np.asarray(k, float)
        z = (k - self.mean) / self.sigma
        inside = np.all((k >= self.k_min) & (k <= self.k_max), axis=-1)
        return np.where(inside, -0.5 * (z * z).sum(axis=-1), -np.inf)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws in stiffness space by inverse-CDF of the truncated factors."""
        a = ndtr((self.k_min - self.mean) / self.sigma)
        b = ndtr((self.k_max - self.mean) / self.sigma)
        u = rng.random((n, len(self.mean)))
        p = np.clip(a + u * (b - a), 1e-300, 1.0 - 1e-16)
        return np.clip(self.mean + self.sigma * ndtri(p), self.k_min, self.k_max)


@dataclass(frozen=True)
class ConstantPrior:
    """``pi(theta) = value`` everywhere; the weight is a constant factor."""

    value: float = 1.0
    beta: float = 1.0

    def log_density(self, k) -> np.ndarray:
        k = np.asarray(k, float)
        return np.full(k.shape[:-1], np.log(self.value))

    def density(self, k) -> np.ndarray:
        return np.exp(self.log_density(k))

    def log_kernel(self, k) -> np.ndarray:
        return np.zeros(np.shape(k)[:-1])


def pibo_weight(theta, prior, n: int):
    """``pi(theta) ** (beta / n)`` with ``theta`` in stiffness coordinates."""
    if n < 1:
        raise ValueError("iteration index n starts at 1")
    if prior is None or prior.beta == 0:
        return np.ones(np.shape(theta)[:-1]) if np.ndim(theta) > 1 else 1.0
    w = np.power(prior.density(theta), prior.beta / n)
    return w if np.ndim(w) else float(w)


def log_pibo_weight(theta, prior, n: int) -> np.ndarray:
    if prior is None or prior.beta == 0:
        return np.zeros(np.shape(theta)[:-1])
    return (prior.beta / n) * prior.log_density(theta)


@dataclass
class SurrogateModel:
    """Independent GP posteriors for ``(y_T, y_C)``."""

    gps: tuple

    def predict(self, U):
        U = np.atleast_2d(U)
        out = [gp.predict(U) for gp in self.gps]
        mean = np.stack([m for m, _ in out], axis=1)
        var = np.stack([v for _, v in out], axis=1)
        return mean, var

    @property
    def hypers(self):
        return [gp.hyper for gp in self.gps]


def fit_surrogate(U, Y, stream: RandomStream, init=None) -> SurrogateModel:
    init = init or (None, None)
    gps = tuple(
        gp_fit(U, Y[:, j], stream.fork(f"gp-{j}"), init=init[j])
        for j in range(2)
    )
    return SurrogateModel(gps)


@numba.njit(cache=True)
def _ehvi_kernel(mu, sd, Z, q, w, H, r0, r1):
    n, S = mu.shape[0], Z.shape[0]
    k = w.size
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for s in range(S):
            y1 = max(mu[i, 0] + sd[i, 0] * Z[s, 0], r0)
            y2 = max(mu[i, 1] + sd[i, 1] * Z[s, 1], r1)
            # number of profile steps at least as high as y2 (w is descending)
            lo, hi = 0, k
            while lo < hi:
                mid = (lo + hi) // 2
                if w[mid] >= y2:
                    lo = mid + 1
                else:
                    hi = mid
            nb = lo
            u_star = q[nb]
            if y1 <= u_star:
                continue
            # profile integral up to y1
            lo, hi = 0, k + 1
            while lo < hi:
                mid = (lo + hi) // 2
                if q[mid] < y1:
                    lo = mid + 1
                else:
                    hi = mid
            j = lo
            if j <= k:
                i1 = H[j - 1] + w[j - 1] * (y1 - q[j - 1])
            else:
                i1 = H[k] + r1 * (y1 - q[k])
            g = y2 * (y1 - u_star) - (i1 - H[nb])
            if g > 0.0:
                acc += g
        out[i] = acc / S
    return out


def ehvi_from_moments(mean, var, front, ref, Z) -> np.ndarray:
    """MC expected hypervolume improvement for every row of ``mean``/``var``.

    ``Z`` holds the ``(n_samples, 2)`` standard-normal base draws shared by all
    candidates.
    """
    st = Staircase(front, ref)
    mu = np.ascontiguousarray(np.atleast_2d(mean), dtype=float)
    sd = np.ascontiguousarray(np.sqrt(np.maximum(np.atleast_2d(var), 0.0)))
    return _ehvi_kernel(mu, sd, np.ascontiguousarray(Z, dtype=float), st.q, np.ascontiguousarray(st.w), st.H,
                        float(st.r[0]), float(st.r[1]))


def ehvi_mc(candidate, model, front, ref, n_samples: int = N_MC, stream: RandomStream | None = None) -> float:
    """Expected hypervolume improvement at one unit-cube candidate.

    ``model.predict`` must return ``(mean, var)`` arrays of shape ``(n, 2)`` in
    the same space as ``front`` and ``ref``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    Z = (stream or RandomStream(0, "ehvi")).generator().standard_normal((n_samples, 2))
    mean, var = model.predict(np.atleast_2d(candidate))
    return float(ehvi_from_moments(mean, var, front, ref, Z)[0])


@dataclass
class Normalizer:
    """Affine map of ``(y_T, y_C)`` with ``reference -> 0`` and ``ideal -> 1``."""

    reference: tuple
    ideal: tuple

    def __call__(self, Y):
        lo = np.asarray(self.reference, float)
        return (np.asarray(Y, float) - lo) / (np.asarray(self.ideal, float) - lo)

    @property
    def scale(self):
        return np.asarray(self.ideal, float) - np.asarray(self.reference, float)


@dataclass
class Suggestion:
    u: np.ndarray
    score: float
    fallback: bool = False
    model: SurrogateModel | None = None
    info: dict = field(default_factory=dict)


def _score(U, model, front, Z, prior, space, n, norm):
    mean, var = model.predict(U)
    scale = norm.scale
    mean_n = norm(mean)
    var_n = var / scale ** 2
    e = ehvi_from_moments(mean_n, var_n, front, (0.0, 0.0), Z)
    with np.errstate(divide="ignore"):
        logs = np.log(e)
    if prior is not None and prior.beta > 0:
        # constant factors of pi shift every score equally; dropping them keeps
        # the argmax bit-identical under rescaling instead of rounding-dependent
        logs = logs + (prior.beta / n) * prior.log_kernel(space.from_unit(U))
    return logs


def _argmax_first(scores) -> int:
    """Index of the maximum; ties resolve to the earliest index."""
    return int(np.argmax(scores))


def suggest(U, Y, space: SearchSpace, norm: Normalizer, prior, n: int, stream: RandomStream,
            budget: int = POOL, n_samples: int = N_MC, init=None) -> Suggestion:
    """Next unit-cube candidate maximizing ``log EHVI + (beta / n) log pi``.

    The reported score omits the constant ``(beta / n) log pi(mode)``.

    ``U`` and ``Y`` are the evaluated points and their raw objective values.
    ``prior=None`` (or ``beta == 0``) disables weighting and prior sampling.
    If the surrogate fit fails the prior mode is returned (the cube center
    without a prior) with ``fallback=True``.
    """
    U = np.atleast_2d(np.asarray(U, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    if len(U) == 0:
        raise ValueError("suggest needs at least one evaluated point")
    active = prior is not None and prior.beta > 0
    try:
        model = fit_surrogate(U, Y, stream.fork("surrogate"), init=init)
    except (SurrogateFitError, np.linalg.LinAlgError, FloatingPointError):
        u = space.to_unit(prior.mode) if active and hasattr(prior, "mode") else np.full(space.d, 0.5)
        return Suggestion(np.asarray(u, float), -np.inf, fallback=True)

    front = np.clip(norm(Y[pareto_indices(Y)]), 0.0, None)
    Z = stream.fork("mc").generator().standard_normal((n_samples, 2))
    rng = stream.fork("pool").generator()
    if active and hasattr(prior, "sample"):
        n_prior = budget // 2
        draws = prior.sample(rng, n_prior)
        draws[0] = prior.mode
        pool = np.vstack([space.to_unit(draws), rng.random((budget - n_prior, space.d))])
    else:
        pool = rng.random((budget, space.d))

    cands = [pool]
    scores = [_score(pool, model, front, Z, prior, space, n, norm)]
    for radius in REFINE_RADII:
        allc, alls = np.vstack(cands), np.concatenate(scores)
        top = np.argsort(-alls, kind="stable")[:N_REFINE]
        moves = []
        for c in allc[top]:
            for j in range(space.d):
                for sign in (1.0, -1.0):
                    m = c.copy()
                    m[j] = np.clip(m[j] + sign * radius, 0.0, 1.0)
                    moves.append(m)
        moves = np.asarray(moves)
        cands.append(moves)
        scores.append(_score(moves, model, front, Z, prior, space, n, norm))
    allc, alls = np.vstack(cands), np.concatenate(scores)
    best = _argmax_first(alls)
    return Suggestion(allc[best].copy(), float(alls[best]), model=model,
                      info={"n_candidates": len(allc), "all_zero": bool(np.all(np.isneginf(alls)))})


def true_front_hypervolume(points, norm: Normalizer) -> float:
    """Normalized hypervolume of a set of raw objective points."""
    return hypervolume(np.clip(norm(points), 0.0, None), (0.0, 0.0))
