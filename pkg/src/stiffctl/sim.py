"""Discrete-time Cartesian impedance simulator and desk-scale task environments.

The closed loop is the mass-spring-damper

    Lambda * xddot = K (x_d - x) - 2 sqrt(K) xdot + F_env

integrated with explicit Euler (position advanced with the pre-step velocity).
``F_env`` is the force the environment exerts on the end-effector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .core import RandomStream, Segmentation, StiffctlError, StiffnessParams, Trajectory

DOOR, WIPE, TRACK = 0, 1, 2
KINDS = {"door1d": DOOR, "wipe2d": WIPE, "track": TRACK}


class IntegrationDiverged(StiffctlError):
    def __init__(self, step: int):
        super().__init__(f"integration diverged at simulator step {step}")
        self.step = step


@dataclass(frozen=True)
class ImpedanceState:
    x: np.ndarray
    xdot: np.ndarray


@dataclass(frozen=True)
class ImpedanceConfig:
    """Controller and integrator settings.

    ``max_offset`` saturates the attractor distance ``|x_d - x|`` per axis
    (meters), as position-delta controllers do; ``None`` disables it.
    """

    n_axes: int = 1
    Lambda: tuple = (1.0,)
    dt_sim: float = 1e-3
    dt: float = 0.05
    max_offset: float | None = None

    def __post_init__(self):
        lam = tuple(float(v) for v in np.broadcast_to(np.asarray(self.Lambda, float), (self.n_axes,)))
        object.__setattr__(self, "Lambda", lam)
        if min(lam) <= 0:
            raise ValueError("inertia entries must be positive")
        if not self.dt_sim > 0 or not self.dt > 0:
            raise ValueError("time steps must be positive")

    @property
    def substeps(self) -> int:
        n = round(self.dt / self.dt_sim)
        if n < 1 or abs(n * self.dt_sim - self.dt) > 1e-9 * self.dt:
            raise ValueError(f"dt_sim={self.dt_sim} does not divide dt={self.dt}")
        return n

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.Lambda)


@dataclass(frozen=True, eq=False)
class TaskEnv:
    """Environment geometry and reward definition.

    door1d: a latch spring at ``latch`` resists motion beyond it until the
        contact force reaches ``release_force``; reward 1 per control step
        with the hand past ``open_at``.
    wipe2d: axes are (horizontal, vertical); a table spring occupies z < 0;
        reward 1 the first time the hand comes within ``radius`` of each
        dirt site. A constant ``disturbance`` force acts during the middle
        third of the episode.
    track: reward is the negative squared distance to ``reference`` at every
        control step; ``disturbance`` acts during the middle third.
    """

    kind: str
    n_axes: int
    latch: float = 0.0
    k_obs: float = 0.0
    release_force: float = 0.0
    open_at: float = 0.0
    sites: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radius: float = 0.0
    disturbance: np.ndarray | None = None
    reference: np.ndarray | None = None
    error_bound: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; valid kinds: {sorted(KINDS)}")
        if self.kind == "wipe2d" and len(self.sites) < 1:
            raise ValueError("wipe2d needs at least one dirt site")
        if self.kind == "door1d" and not self.release_force > 0:
            raise ValueError("door1d release force must be positive")
        if self.kind == "track" and self.reference is None:
            raise ValueError("track env needs a reference trajectory")

    @property
    def max_reward(self) -> float:
        """Upper bound of the summed reward over ``reference``-length episodes."""
        if self.kind == "wipe2d":
            return float(len(self.sites))
        if self.kind == "track":
            return 0.0
        return np.nan  # depends on the episode length

    def with_disturbance(self, force) -> TaskEnv:
        return replace(self, disturbance=None if force is None else np.asarray(force, float))


def step(state: ImpedanceState, x_d, K, F_env, cfg: ImpedanceConfig, index: int = 0) -> ImpedanceState:
    """One explicit-Euler step of the impedance dynamics."""
    x = np.asarray(state.x, float)
    v = np.asarray(state.xdot, float)
    K = np.asarray(K, float)
    offset = np.asarray(x_d, float) - x
    if cfg.max_offset is not None:
        offset = np.clip(offset, -cfg.max_offset, cfg.max_offset)
    acc = (K * offset - 2.0 * np.sqrt(K) * v + np.asarray(F_env, float)) / cfg.lam
    v_new = v + acc * cfg.dt_sim
    x_new = x + v * cfg.dt_sim
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise IntegrationDiverged(index)
    return ImpedanceState(x_new, v_new)


@numba.njit(cache=True)
def _simulate(kind, x0, v0, xd, Kt, lam, dt_sim, n_sub, max_off,
              latch, k_obs, release, open_at, sites, radius, dist, t_on, t_off, ref, ext):
    T, n = xd.shape
    X = np.empty((T, n))
    V = np.empty((T, n))
    Fr = np.empty((T, n))
    R = np.zeros(T)
    x = x0.copy()
    v = v0.copy()
    f = np.zeros(n)
    engaged = True
    collected = np.zeros(sites.shape[0], dtype=np.bool_)
    step_i = 0
    for t in range(T):
        for s in range(n_sub):
            # environment force at the current state
            for a in range(n):
                f[a] = ext[t, a]
            if kind == 0:
                if engaged and x[0] > latch:
                    f[0] -= k_obs * (x[0] - latch)
                    if k_obs * (x[0] - latch) >= release:
                        engaged = False
            elif kind == 1:
                if x[1] < 0.0:
                    f[1] -= k_obs * x[1]
            if t >= t_on and t < t_off:
                for a in range(n):
                    f[a] += dist[a]
            if s == 0:
                for a in range(n):
                    X[t, a] = x[a]
                    V[t, a] = v[a]
                    Fr[t, a] = f[a]
            if kind == 1:
                for i in range(sites.shape[0]):
                    if not collected[i]:
                        d2 = 0.0
                        for a in range(n):
                            d2 += (x[a] - sites[i, a]) ** 2
                        if d2 <= radius * radius:
                            collected[i] = True
                            R[t] += 1.0
            for a in range(n):
                off = xd[t, a] - x[a]
                if max_off > 0.0:
                    if off > max_off:
                        off = max_off
                    elif off < -max_off:
                        off = -max_off
                k = Kt[t, a]
                acc = (k * off - 2.0 * np.sqrt(k) * v[a] + f[a]) / lam[a]
                x[a] = x[a] + v[a] * dt_sim
                v[a] = v[a] + acc * dt_sim
                if not (np.isfinite(x[a]) and np.isfinite(v[a])) or abs(x[a]) > 1e6:
                    return X, V, Fr, R, step_i
            step_i += 1
        if kind == 0:
            if X[t, 0] >= open_at:
                R[t] = 1.0
        elif kind == 2:
            e = 0.0
            for a in range(n):
                e += (X[t, a] - ref[t, a]) ** 2
            R[t] = -e
    return X, V, Fr, R, -1


def simulate(env: TaskEnv, x_d, K_sched, cfg: ImpedanceConfig, x0=None, v0=None, ext_force=None):
    """Roll the closed loop over ``len(x_d)`` control periods.

    ``x_d`` and ``K_sched`` are ``(T, n_axes)`` and held constant over each
    control period. Returns ``(Trajectory, rewards)``; the trajectory records
    the state and the environment force at the start of every period.
    """
    xd = np.ascontiguousarray(np.asarray(x_d, float).reshape(-1, cfg.n_axes))
    T, n = xd.shape
    Kt = np.ascontiguousarray(np.broadcast_to(np.asarray(K_sched, float), (T, n)))
    x0 = xd[0].copy() if x0 is None else np.asarray(x0, float).reshape(n).copy()
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, float).reshape(n).copy()
    ext = np.zeros((T, n)) if ext_force is None else np.ascontiguousarray(np.asarray(ext_force, float).reshape(T, n))
    dist = np.zeros(n) if env.disturbance is None else np.asarray(env.disturbance, float).reshape(n)
    t_on, t_off = (T // 3, (2 * T) // 3) if env.disturbance is not None else (0, 0)
    ref = np.zeros((T, n)) if env.reference is None else np.asarray(env.reference, float)[:T]
    if ref.shape[0] < T:
        raise ValueError("reference trajectory shorter than the episode")
    sites = np.asarray(env.sites, float).reshape(-1, 2)[:, :n] if env.kind == "wipe2d" else np.zeros((0, n))
    X, V, F, R, bad = _simulate(
        KINDS[env.kind], x0, v0, xd, Kt, cfg.lam, cfg.dt_sim, cfg.substeps,
        0.0 if cfg.max_offset is None else float(cfg.max_offset),
        float(env.latch), float(env.k_obs), float(env.release_force), float(env.open_at),
        np.ascontiguousarray(sites), float(env.radius), dist, t_on, t_off, np.ascontiguousarray(ref), ext,
    )
    if bad >= 0:
        raise IntegrationDiverged(int(bad))
    return Trajectory(cfg.dt, X, F, V), R


def rollout(env: TaskEnv, seg: Segmentation, theta: StiffnessParams, attractors, cfg: ImpedanceConfig,
            stream: RandomStream | None = None, x0=None, v0=None, force_noise: float = 0.0):
    """Execute a stiffness schedule against ``env``.

    Each ``(x_d,t, K_{s_t})`` pair is held for one control period. With
    ``force_noise > 0`` a Gaussian force perturbation drawn from ``stream`` is
    added per control period; otherwise the rollout is deterministic.
    """
    attractors = np.asarray(attractors, float).reshape(-1, cfg.n_axes)
    if len(attractors) != seg.T:
        raise ValueError(f"{len(attractors)} attractors for a {seg.T}-step segmentation")
    ext = None
    if force_noise > 0:
        if stream is None:
            raise ValueError("force noise requires a random stream")
        ext = force_noise * stream.generator().standard_normal(attractors.shape)
    return simulate(env, attractors, theta.per_step(seg), cfg, x0=x0, v0=v0, ext_force=ext)


def euler_derivatives(x: np.ndarray, dt: float):
    """Velocity and acceleration consistent with the simulator's Euler update.

    ``xdot_t = (x_{t+1} - x_t) / dt`` and ``xddot_t = (xdot_{t+1} - xdot_t) / dt``;
    the last samples reuse the nearest available difference.
    """
    x = np.asarray(x, float)
    v = np.empty_like(x)
    v[:-1] = np.diff(x, axis=0) / dt
    v[-1] = v[-2]
    a = np.empty_like(x)
    a[:-2] = (v[1:-1] - v[:-2]) / dt
    a[-2:] = a[-3]
    return v, a


def attractor_from_derivatives(x, xdot, xddot, F, K, Lambda):
    """``x_d = x + K^-1 (2 K^1/2 xdot + Lambda xddot - F)`` elementwise."""
    K = np.asarray(K, float)
    return np.asarray(x) + (2.0 * np.sqrt(K) * xdot + np.asarray(Lambda) * xddot - F) / K


def compute_attractors(demo: Trajectory, seg: Segmentation, theta: StiffnessParams, cfg: ImpedanceConfig):
    """Attractor trajectory that reproduces ``demo`` under stiffness ``theta``.

    Derivatives come from :func:`euler_derivatives`, so with ``dt_sim == dt``
    and no offset saturation a rollout reproduces the demonstrated positions
    exactly.
    """
    v, a = euler_derivatives(demo.x, demo.dt)
    return attractor_from_derivatives(demo.x, v, a, demo.F, theta.per_step(seg), cfg.lam)


def initial_velocity(demo: Trajectory) -> np.ndarray:
    """Start velocity matching :func:`compute_attractors`."""
    return (demo.x[1] - demo.x[0]) / demo.dt


def interpolate_script(script, dt: float, n_axes: int) -> np.ndarray:
    """Piecewise-linear waypoints ``[(time, position), ...]`` sampled every ``dt``."""
    times = np.array([float(w[0]) for w in script])
    pos = np.array([np.broadcast_to(np.asarray(w[1], float), (n_axes,)) for w in script])
    if np.any(np.diff(times) <= 0):
        raise ValueError("waypoint times must be strictly increasing")
    T = int(round((times[-1] - times[0]) / dt)) + 1
    t = times[0] + dt * np.arange(T)
    return np.stack([np.interp(t, times, pos[:, a]) for a in range(n_axes)], axis=1)


def generate_demonstration(env: TaskEnv, script, cfg: ImpedanceConfig, stiffness: float = 1000.0,
                           stream: RandomStream | None = None, noise: float = 0.0,
                           workspace: float = 2.0) -> Trajectory:
    """Scripted stand-in for a human demonstration.

    Drives the simulator along the interpolated waypoints with a fixed high
    stiffness and records positions, velocities and environment forces at the
    control period. ``noise`` adds Gaussian position noise (meters) from ``stream``.
    The disturbance of ``env`` is not applied during demonstrations.
    """
    path = interpolate_script(script, cfg.dt, cfg.n_axes)
    if np.any(np.abs(path) > workspace):
        raise ValueError(f"waypoints leave the workspace |x| <= {workspace} m")
    quiet = env.with_disturbance(None)
    if quiet.kind == "track" and len(quiet.reference) < len(path):
        quiet = replace(quiet, reference=np.zeros_like(path))
    traj, _ = simulate(quiet, path, stiffness, cfg, x0=path[0])
    if noise > 0:
        if stream is None:
            raise ValueError("demonstration noise requires a random stream")
        noisy = traj.x + noise * stream.generator().standard_normal(traj.x.shape)
        traj = Trajectory(traj.dt, noisy, traj.F, traj.xdot)
    return traj


# Desk-scale task presets -----------------------------------------------------

DOOR_SCRIPT = [(0.0, 0.0), (0.5, 0.0), (2.5, 0.1), (3.0, 0.13), (4.2, 0.3), (5.5, 0.3)]
WIPE_SCRIPT = [
    (0.0, (0.0, 0.08)), (0.5, (0.0, 0.08)), (2.0, (0.0, -0.006)),
    (5.5, (0.4, -0.006)), (6.0, (0.4, -0.006)),
]


def door1d(**overrides) -> TaskEnv:
    params = dict(kind="door1d", n_axes=1, latch=0.1, k_obs=200.0, release_force=2.5, open_at=0.25)
    params.update(overrides)
    return TaskEnv(**params)


def wipe2d(**overrides) -> TaskEnv:
    params = dict(
        kind="wipe2d", n_axes=2, k_obs=2000.0,
        sites=np.array([[0.05, 0.0], [0.1, 0.0], [0.17, 0.0], [0.23, 0.0], [0.3, 0.0], [0.35, 0.0]]),
        radius=0.004, disturbance=np.array([0.0, 6.0]),
    )
    params.update(overrides)
    return TaskEnv(**params)


def track(reference, disturbance=None, error_bound: float = 1.0) -> TaskEnv:
    ref = np.asarray(reference, float)
    ref = ref[:, None] if ref.ndim == 1 else ref
    return TaskEnv(kind="track", n_axes=ref.shape[1], reference=ref,
                   disturbance=None if disturbance is None else np.asarray(disturbance, float),
                   error_bound=error_bound)
