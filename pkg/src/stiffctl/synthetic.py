"""Synthetic trajectories with known generating parameters."""

from __future__ import annotations

import numpy as np

from .core import RandomStream, Segmentation, Trajectory, fd_velocities


def smooth_motion(T: int, n_axes: int, dt: float, stream: RandomStream, amplitude=0.06, freqs=(0.8, 4.0),
                  n_terms: int = 4) -> np.ndarray:
    """Sum of random sinusoids per axis, ``(T, n_axes)`` positions in meters."""
    rng = stream.generator()
    t = dt * np.arange(T)
    x = np.zeros((T, n_axes))
    for a in range(n_axes):
        f = rng.uniform(*freqs, size=n_terms)
        ph = rng.uniform(0, 2 * np.pi, size=n_terms)
        amp = amplitude * rng.uniform(0.5, 1.0, size=n_terms) / np.sqrt(n_terms)
        x[:, a] = (amp[None] * np.sin(2 * np.pi * f[None] * t[:, None] + ph[None])).sum(axis=1)
    return x


def icsld_forces(x: np.ndarray, K_sched: np.ndarray, dt: float, Lambda=1.0) -> np.ndarray:
    """Forces that make the impedance-model velocity residual vanish.

    ``K_sched`` is the ``(T, n_axes)`` stiffness in effect at each sample.
    Forces at the two endpoints carry no residual and are set to zero.
    """
    lam = np.broadcast_to(np.asarray(Lambda, float), (x.shape[1],))
    v = fd_velocities(x, dt)
    F = np.zeros_like(x)
    K = K_sched[1:-1]
    dx = x[2:] - x[1:-1]
    F[1:-1] = lam * (v[2:] - v[1:-1]) / dt - K * dx + 2.0 * np.sqrt(K) * v[1:-1]
    return F


def phased_trajectory(K_phases, boundaries, T: int, dt: float, stream: RandomStream, Lambda=1.0, noise=0.0,
                      **motion):
    """Noiseless (unless ``noise``) trajectory whose phases follow IC-SLD exactly.

    ``K_phases`` is ``(M, n_axes)``; returns ``(Trajectory, Segmentation)``.
    """
    K_phases = np.atleast_2d(np.asarray(K_phases, float))
    seg = Segmentation.from_boundaries(T, boundaries)
    x = smooth_motion(T, K_phases.shape[1], dt, stream.fork("motion"), **motion)
    F = icsld_forces(x, K_phases[seg.labels - 1], dt, Lambda)
    if noise > 0:
        x = x + noise * stream.fork("noise").generator().standard_normal(x.shape)
    return Trajectory(dt, x, F), seg


def three_phase(seed: int, T: int = 120, boundaries=(40, 70), K=(50.0, 400.0, 100.0), n_axes: int = 2,
                dt: float = 0.05):
    """The 3-phase recovery benchmark: stiffness per phase, equal on every axis."""
    K_phases = np.repeat(np.asarray(K, float)[:, None], n_axes, axis=1)
    return phased_trajectory(K_phases, boundaries, T, dt, RandomStream(seed, "three-phase"))


def linear_regime_trajectory(coefs, boundaries, T: int, dt: float, stream: RandomStream):
    """Trajectory with recorded velocities following ``v_{t+1} = a v_t + b dx_t + b' F_t`` per regime.

    ``coefs`` is ``(M, 3)`` (shared across a single axis). Positions follow a
    random walk and forces are random, so the regressors are not collinear.
    """
    coefs = np.atleast_2d(np.asarray(coefs, float))
    seg = Segmentation.from_boundaries(T, boundaries)
    rng = stream.generator()
    x = np.cumsum(0.01 * rng.standard_normal((T, 1)), axis=0)
    F = rng.standard_normal((T, 1))
    v = np.zeros((T, 1))
    v[:2] = rng.standard_normal((2, 1))
    for t in range(1, T - 1):
        a, b, bp = coefs[seg.labels[t] - 1]
        v[t + 1] = a * v[t] + b * (x[t + 1] - x[t]) + bp * F[t]
    return Trajectory(dt, x, F, v), seg
