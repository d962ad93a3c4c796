"""Demonstration segmentation by switching linear dynamics.

The impedance-aware model (IC-SLD) ties each phase's linear dynamics to one
diagonal stiffness matrix, so fitting it yields both the phase labels and a
stiffness estimate per phase. GMM and impedance-unaware SLD baselines share
the same left-to-right label machinery.

All EM variants here use hard assignments: the E-step is an exact dynamic
program over monotone label sequences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import InfeasibleSegmentCount, RandomStream, Segmentation, StiffctlError, Trajectory, fd_velocities

log = logging.getLogger(__name__)

KAPPA_SIM = 1e-5
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DegenerateComponent(StiffctlError):
    pass


# --------------------------------------------------------------------------
# left-to-right label inference


def left_to_right_path(costs) -> np.ndarray:
    """Labels (1-based) maximizing ``sum_t costs[t, s_t]``.

    Admissible sequences start at label 1, end at label M and increase by at
    most one per step, so every label is used. Ties prefer staying in the
    current segment.
    """
    costs = np.asarray(costs, dtype=float)
    T, M = costs.shape
    if T < M:
        raise InfeasibleSegmentCount(f"cannot place {M} segments in {T} samples")
    V = np.full(M, -np.inf)
    V[0] = costs[0, 0]
    moved = np.zeros((T, M), dtype=bool)
    for t in range(1, T):
        stay = V
        move = np.concatenate([[-np.inf], V[:-1]])
        moved[t] = move > stay
        V = np.where(moved[t], move, stay) + costs[t]
    labels = np.empty(T, dtype=int)
    j = M - 1
    for t in range(T - 1, -1, -1):
        labels[t] = j + 1
        if t > 0 and moved[t, j]:
            j -= 1
    return labels


def _restart_segmentations(T: int, M: int, stream: RandomStream | None, restarts: int):
    """Uniform boundaries plus stream-jittered variants."""
    segs = [Segmentation.uniform(T, M)]
    if M == 1 or stream is None:
        return segs
    rng = stream.generator()
    base = np.array(segs[0].boundaries)
    width = max(1, T // (2 * M))
    for _ in range(restarts - 1):
        for _attempt in range(20):
            b = np.sort(base + rng.integers(-width, width + 1, size=base.size))
            if b[0] >= 1 and b[-1] <= T - 1 and np.all(np.diff(b) >= 1):
                segs.append(Segmentation.from_boundaries(T, b))
                break
    return segs


# --------------------------------------------------------------------------
# IC-SLD


def _lambda(Lambda, n_axes):
    return np.broadcast_to(np.asarray(Lambda, dtype=float), (n_axes,))


def icsld_terms(traj: Trajectory, Lambda=1.0):
    """Residual coefficients for interior samples t = 2..T-1.

    The velocity residual is ``c - k p + sqrt(k) q`` per axis, with
    finite-difference velocities and ``dx_t = x_{t+1} - x_t``.
    Returns three ``(T-2, n_axes)`` arrays.
    """
    lam = _lambda(Lambda, traj.n_axes)
    v = fd_velocities(traj.x, traj.dt)
    dt = traj.dt
    v_now, v_next = v[1:-1], v[2:]
    dx = traj.x[2:] - traj.x[1:-1]
    F = traj.F[1:-1]
    c = v_next - v_now - F * dt / lam
    p = dx * dt / lam
    q = 2.0 * v_now * dt / lam
    return c, p, q


def icsld_residual(traj: Trajectory, t: int, K, Lambda=1.0) -> np.ndarray:
    """Velocity residual of the impedance model at 0-based interior index ``t``."""
    if not 1 <= t <= traj.T - 2:
        raise IndexError(f"residual needs 1 <= t <= T-2, got t={t} for T={traj.T}")
    lam = _lambda(Lambda, traj.n_axes)
    K = np.broadcast_to(np.asarray(K, float), (traj.n_axes,))
    v = fd_velocities(traj.x, traj.dt)
    dx = traj.x[t + 1] - traj.x[t]
    drive = K * dx - 2.0 * np.sqrt(K) * v[t] + traj.F[t]
    return v[t + 1] - v[t] - drive * traj.dt / lam


def _icsld_costs(terms, K, kappa):
    """Per-sample log-likelihood terms, shape ``(T-2, M)``."""
    c, p, q = terms
    K = np.asarray(K, float)
    r = c[:, None, :] - K[None] * p[:, None, :] + np.sqrt(K)[None] * q[:, None, :]
    return -(r * r / K[None]).sum(axis=2) - kappa * np.log(K).sum(axis=1)[None]


def _with_endpoints(costs):
    # the first and last samples carry no residual
    M = costs.shape[1]
    z = np.zeros((1, M))
    return np.vstack([z, costs, z])


def segment_objective(traj: Trajectory, seg: Segmentation, K, kappa: float, Lambda=1.0, terms=None) -> float:
    """Hard-assignment EM objective summed over interior samples."""
    terms = icsld_terms(traj, Lambda) if terms is None else terms
    K = np.asarray(K.K if hasattr(K, "K") else K, float)
    c, p, q = terms
    Kt = K[seg.labels[1:-1] - 1]
    r = c - Kt * p + np.sqrt(Kt) * q
    return float(np.sum(-(r * r) / Kt - kappa * np.log(Kt)))


def icsld_estep(traj: Trajectory, K, kappa: float, M: int | None = None, Lambda=1.0, terms=None) -> Segmentation:
    K = np.asarray(K.K if hasattr(K, "K") else K, float)
    M = K.shape[0] if M is None else M
    if K.shape[0] != M:
        raise ValueError(f"{K.shape[0]} stiffness matrices for M={M}")
    if traj.T - 2 < M:
        raise InfeasibleSegmentCount(f"M={M} needs at least {M + 2} samples, trajectory has {traj.T}")
    terms = icsld_terms(traj, Lambda) if terms is None else terms
    costs = _with_endpoints(_icsld_costs(terms, K, kappa))
    return Segmentation(left_to_right_path(costs), M)


def _stiffness_objective(stats, kappa, z):
    """``g(k) = -sum r^2 / k - kappa n log k`` at ``k = exp(z)`` from sufficient statistics."""
    scc, spp, sqq, scp, scq, spq, n = stats
    k = math.exp(z)
    s = math.sqrt(k)
    rr = scc + k * k * spp + k * sqq - 2.0 * k * scp + 2.0 * s * scq - 2.0 * k * s * spq
    return -max(rr, 0.0) / k - kappa * n * z


def _golden_max(f, a, b, tol=1e-9, max_iter=200):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def fit_stiffness(stats, kappa, k_min, k_max, previous=None, h=1e-4, max_iter=50):
    """Maximize the single-axis objective over ``[k_min, k_max]``.

    Newton iteration on ``z = log k`` with central-difference derivatives,
    started from each decade above ``k_min`` and from ``previous``; a
    golden-section search covers starts where the curvature is not negative.
    Returns ``(k, at_bound)``.
    """
    zmin, zmax = math.log(k_min), math.log(k_max)
    n = stats[-1]
    if n == 0:
        k = k_min if previous is None else float(np.clip(previous, k_min, k_max))
        return k, k in (k_min, k_max)

    def g(z):
        return _stiffness_objective(stats, kappa, z)

    starts = [zmin + i * math.log(10.0) for i in range(int((zmax - zmin) / math.log(10.0)) + 1)] + [zmax]
    if previous is not None:
        starts.append(min(max(math.log(previous), zmin), zmax))
    candidates = [(g(zmin), zmin), (g(zmax), zmax)]
    if previous is not None:
        candidates.append((g(starts[-1]), starts[-1]))
    need_golden = False
    for z in starts:
        for _ in range(max_iter):
            gp, g0, gm = g(z + h), g(z), g(z - h)
            d1 = (gp - gm) / (2 * h)
            d2 = (gp - 2 * g0 + gm) / (h * h)
            if not (math.isfinite(d1) and math.isfinite(d2)) or d2 >= 0:
                need_golden = True
                break
            z_new = min(max(z - d1 / d2, zmin), zmax)
            if abs(z_new - z) < 1e-10:
                z = z_new
                break
            z = z_new
        candidates.append((g(z), z))
    if need_golden:
        zg, fg = _golden_max(g, zmin, zmax)
        candidates.append((fg, zg))
    best_g, best_z = max(candidates, key=lambda c: c[0])
    at_bound = best_z <= zmin + 1e-9 or best_z >= zmax - 1e-9
    k = k_min if best_z <= zmin else k_max if best_z >= zmax else math.exp(best_z)
    return k, at_bound


def _segment_stats(terms, seg: Segmentation):
    c, p, q = terms
    lab = seg.labels[1:-1]
    out = []
    for j in range(1, seg.M + 1):
        m = lab == j
        cj, pj, qj = c[m], p[m], q[m]
        out.append([
            ((cj * cj).sum(), (pj * pj).sum(), (qj * qj).sum(), (cj * pj).sum(),
             (cj * qj).sum(), (pj * qj).sum(), int(m.sum()))
            for cj, pj, qj in zip(cj.T, pj.T, qj.T)
        ])
    return out


def icsld_mstep(traj: Trajectory, seg: Segmentation, kappa: float, bounds=(10.0, 1000.0), Lambda=1.0,
                previous=None, terms=None):
    """Per-segment, per-axis stiffness maximizing the EM objective.

    Returns ``(K, at_bound)`` with ``K`` of shape ``(M, n_axes)``.
    """
    k_min, k_max = bounds
    terms = icsld_terms(traj, Lambda) if terms is None else terms
    K = np.empty((seg.M, traj.n_axes))
    flags = np.zeros_like(K, dtype=bool)
    for j, per_axis in enumerate(_segment_stats(terms, seg)):
        for a, stats in enumerate(per_axis):
            prev = None if previous is None else previous[j, a]
            K[j, a], flags[j, a] = fit_stiffness(stats, kappa, k_min, k_max, prev)
    return K, flags


@dataclass
class ICSLDModel:
    K: np.ndarray
    kappa: float
    Lambda: np.ndarray
    segmentation: Segmentation
    objective: float
    at_bound: np.ndarray
    history: list = field(default_factory=list)
    restart_histories: list = field(default_factory=list)
    method: str = "icsld"


def _icsld_em(traj, seg, kappa, bounds, Lambda, terms, max_iters, tol):
    K, flags = icsld_mstep(traj, seg, kappa, bounds, Lambda, terms=terms)
    J = segment_objective(traj, seg, K, kappa, terms=terms)
    history = [J]
    for _ in range(max_iters):
        new_seg = icsld_estep(traj, K, kappa, seg.M, terms=terms)
        if segment_objective(traj, new_seg, K, kappa, terms=terms) > J:
            seg = new_seg
        J_e = segment_objective(traj, seg, K, kappa, terms=terms)
        new_K, new_flags = icsld_mstep(traj, seg, kappa, bounds, Lambda, previous=K, terms=terms)
        J_m = segment_objective(traj, seg, new_K, kappa, terms=terms)
        if J_m >= J_e:
            K, flags, J_new = new_K, new_flags, J_m
        else:
            J_new = J_e
        history.append(J_new)
        done = abs(J_new - J) < tol
        J = J_new
        if done:
            break
    return K, flags, seg, J, history


def icsld_fit(traj: Trajectory, M: int, kappa: float = KAPPA_SIM, max_iters: int = 50, tol: float = 1e-10,
              stream: RandomStream | None = None, bounds=(10.0, 1000.0), Lambda=1.0, restarts: int = 5) -> ICSLDModel:
    """Fit IC-SLD by hard EM from uniform and jittered initial boundaries."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if traj.T - 2 < M:
        raise InfeasibleSegmentCount(f"M={M} needs at least {M + 2} samples, trajectory has {traj.T}")
    terms = icsld_terms(traj, Lambda)
    best = None
    histories = []
    for seg0 in _restart_segmentations(traj.T, M, stream, restarts):
        K, flags, seg, J, history = _icsld_em(traj, seg0, kappa, bounds, Lambda, terms, max_iters, tol)
        histories.append(history)
        if best is None or J > best[3]:
            best = (K, flags, seg, J, history)
    K, flags, seg, J, history = best
    return ICSLDModel(K, kappa, _lambda(Lambda, traj.n_axes).copy(), seg, J, flags, history, histories)


def prior_from_segmentation(traj: Trajectory, seg: Segmentation, kappa: float = KAPPA_SIM,
                            bounds=(10.0, 1000.0), Lambda=1.0):
    """Stiffness estimate for a fixed segmentation: one M-step. Returns ``(K, at_bound)``."""
    return icsld_mstep(traj, seg, kappa, bounds, Lambda)


# --------------------------------------------------------------------------
# impedance-unaware SLD baseline


@dataclass
class SLDModel:
    """Per-segment diagonal dynamics ``v_{t+1} = a v_t + b dx_t + b' F_t + noise``.

    ``coef`` has shape ``(M, n_axes, 3)`` holding ``(a, b, b')``; ``var`` is
    ``(M, n_axes)``.
    """

    coef: np.ndarray
    var: np.ndarray
    segmentation: Segmentation
    objective: float
    history: list = field(default_factory=list)
    method: str = "sld"


def sld_design(traj: Trajectory):
    """Targets ``(T-2, n)`` and regressors ``(T-2, n, 3)`` for interior samples."""
    v = traj.velocities()
    dx = traj.x[2:] - traj.x[1:-1]
    X = np.stack([v[1:-1], dx, traj.F[1:-1]], axis=2)
    return v[2:], X


def _sld_costs(y, X, coef, var):
    pred = np.einsum("tak,jak->tja", X, coef)
    r = y[:, None, :] - pred
    return (-0.5 * (r * r / var[None] + np.log(2 * np.pi * var[None]))).sum(axis=2)


def _sld_objective(y, X, seg, coef, var):
    costs = _sld_costs(y, X, coef, var)
    lab = seg.labels[1:-1] - 1
    return float(costs[np.arange(len(lab)), lab].sum())


def _sld_mstep(y, X, seg, var_floor=1e-12):
    M, n = seg.M, y.shape[1]
    coef = np.zeros((M, n, 3))
    var = np.ones((M, n))
    lab = seg.labels[1:-1]
    for j in range(M):
        m = lab == j + 1
        for a in range(n):
            if m.sum() == 0:
                continue
            A, b = X[m, a, :], y[m, a]
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            coef[j, a] = sol
            var[j, a] = max(float(np.mean((b - A @ sol) ** 2)), var_floor)
    return coef, var


def sld_fit(traj: Trajectory, M: int, max_iters: int = 50, tol: float = 1e-10, stream: RandomStream | None = None,
            restarts: int = 5):
    """Hard-EM fit of the impedance-unaware baseline. Returns ``(SLDModel, Segmentation)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if traj.T - 2 < M:
        raise InfeasibleSegmentCount(f"M={M} needs at least {M + 2} samples, trajectory has {traj.T}")
    y, X = sld_design(traj)
    best = None
    for seg in _restart_segmentations(traj.T, M, stream, restarts):
        coef, var = _sld_mstep(y, X, seg)
        J = _sld_objective(y, X, seg, coef, var)
        history = [J]
        for _ in range(max_iters):
            new_seg = Segmentation(left_to_right_path(_with_endpoints(_sld_costs(y, X, coef, var))), M)
            if _sld_objective(y, X, new_seg, coef, var) > J:
                seg = new_seg
            J_e = _sld_objective(y, X, seg, coef, var)
            new_coef, new_var = _sld_mstep(y, X, seg)
            J_m = _sld_objective(y, X, seg, new_coef, new_var)
            if J_m >= J_e:
                coef, var, J_new = new_coef, new_var, J_m
            else:
                J_new = J_e
            history.append(J_new)
            done = abs(J_new - J) < tol
            J = J_new
            if done:
                break
        if best is None or J > best.objective:
            best = SLDModel(coef, var, seg, J, history)
    return best, best.segmentation


# --------------------------------------------------------------------------
# GMM baseline


@dataclass
class GMMModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float
    history: list = field(default_factory=list)
    raw_labels: np.ndarray | None = None
    method: str = "gmm"


def gmm_features(traj: Trajectory) -> np.ndarray:
    """``(x, xdot, xddot, F)`` per sample with central differences."""
    v = np.gradient(traj.x, traj.dt, axis=0)
    a = np.gradient(v, traj.dt, axis=0)
    return np.hstack([traj.x, v, a, traj.F])


def _gauss_logpdf(X, mean, cov):
    d = X.shape[1]
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (X - mean).T)
    return -0.5 * (z * z).sum(axis=0) - np.log(np.diag(L)).sum() - 0.5 * d * np.log(2 * np.pi)


def _kmeanspp(X, M, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, M):
        d2 = np.min([((X - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers)


def monotonize(raw_labels, M: int) -> Segmentation:
    """Closest left-to-right segmentation to arbitrary cluster labels.

    Clusters are first ordered by the mean time index of their members, then
    the monotone relabeling with the fewest disagreements is found exactly.
    """
    raw = np.asarray(raw_labels, dtype=int)
    T = raw.size
    t = np.arange(T)
    mean_time = np.array([t[raw == j].mean() if np.any(raw == j) else np.inf for j in range(M)])
    rank = np.empty(M, dtype=int)
    rank[np.argsort(mean_time, kind="stable")] = np.arange(M)
    ordered = rank[raw]
    costs = (ordered[:, None] == np.arange(M)[None]).astype(float)
    return Segmentation(left_to_right_path(costs), M)


def gmm_fit(traj: Trajectory, M: int, max_iters: int = 200, tol: float = 1e-8, stream: RandomStream | None = None,
            reg: float = 1e-6):
    """Full-covariance GMM over trajectory features. Returns ``(GMMModel, Segmentation)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    X = gmm_features(traj)
    T, d = X.shape
    if T < M:
        raise InfeasibleSegmentCount(f"cannot fit {M} components to {T} samples")
    rng = (stream or RandomStream(0, "gmm")).generator()
    eye = reg * np.eye(d)
    centers = _kmeanspp(X, M, rng)
    hard = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.eye(M)[hard]

    def mstep(resp):
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        means = resp.T @ X / nk[:, None]
        covs = np.empty((M, d, d))
        for j in range(M):
            D = X - means[j]
            covs[j] = (resp[:, j, None] * D).T @ D / nk[j] + eye
        return nk / T, means, covs

    weights, means, covs = mstep(resp)
    history = []
    for _ in range(max_iters):
        logp = np.stack([np.log(weights[j]) + _gauss_logpdf(X, means[j], covs[j]) for j in range(M)], axis=1)
        norm = logsumexp(logp, axis=1)
        history.append(float(norm.sum()))
        resp = np.exp(logp - norm[:, None])
        weights, means, covs = mstep(resp)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break
    logp = np.stack([np.log(weights[j]) + _gauss_logpdf(X, means[j], covs[j]) for j in range(M)], axis=1)
    ll = float(logsumexp(logp, axis=1).sum())
    history.append(ll)
    if np.any(weights < 1e-8):
        raise DegenerateComponent(f"component weights {weights} collapsed")
    raw = np.argmax(logp, axis=1)
    model = GMMModel(weights, means, covs, ll, history, raw)
    return model, monotonize(raw, M)
