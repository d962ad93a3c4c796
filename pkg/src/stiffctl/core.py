"""Shared domain types: trajectories, segmentations, stiffness parameters and
seeded random streams.

Units are SI throughout: meters, seconds, newtons, newtons/meter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class StiffctlError(Exception):
    """Base class for errors raised by this package."""


class InfeasibleSegmentCount(StiffctlError):
    """Raised when a trajectory is too short for the requested segment count."""


def _as_2d(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a (T, n_axes) array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped end-effector positions and sensed external forces.

    ``x`` and ``F`` are ``(T, n_axes)`` arrays sampled every ``dt`` seconds.
    ``xdot`` is optional; when absent, :meth:`velocities` reconstructs it by
    backward differences with a zero initial velocity.
    """

    dt: float
    x: np.ndarray
    F: np.ndarray
    xdot: np.ndarray | None = None

    def __post_init__(self):
        x = _as_2d(self.x, "x")
        F = _as_2d(self.F, "F")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "F", F)
        if self.xdot is not None:
            object.__setattr__(self, "xdot", _as_2d(self.xdot, "xdot"))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if x.shape[0] < 3:
            raise ValueError(f"trajectory needs T >= 3 samples, got {x.shape[0]}")
        if F.shape != x.shape:
            raise ValueError(f"F shape {F.shape} does not match x shape {x.shape}")
        if self.xdot is not None and self.xdot.shape != x.shape:
            raise ValueError(f"xdot shape {self.xdot.shape} does not match x shape {x.shape}")

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def n_axes(self) -> int:
        return self.x.shape[1]

    def velocities(self) -> np.ndarray:
        """Recorded velocities if present, else backward differences."""
        if self.xdot is not None:
            return self.xdot
        return fd_velocities(self.x, self.dt)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        same_xdot = (self.xdot is None and other.xdot is None) or (
            self.xdot is not None and other.xdot is not None and np.array_equal(self.xdot, other.xdot)
        )
        return (
            self.dt == other.dt
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.F, other.F)
            and same_xdot
        )


def fd_velocities(x: np.ndarray, dt: float) -> np.ndarray:
    """Backward-difference velocities ``(x_t - x_{t-1}) / dt`` with ``v_1 = 0``."""
    v = np.zeros_like(x)
    v[1:] = np.diff(x, axis=0) / dt
    return v


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Left-to-right phase labels ``1..M`` for every sample of a trajectory."""

    labels: np.ndarray
    M: int = field(default=0)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int).ravel()
        M = int(self.M) if self.M else int(labels.max())
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "M", M)
        if labels.size == 0:
            raise ValueError("empty segmentation")
        if labels[0] != 1 or labels[-1] != M:
            raise ValueError(f"labels must start at 1 and end at M={M}")
        steps = np.diff(labels)
        if np.any(steps < 0) or np.any(steps > 1):
            raise ValueError("labels must be non-decreasing in unit steps (left-to-right)")

    @classmethod
    def from_boundaries(cls, T: int, boundaries) -> Segmentation:
        """Build from 0-based start indices of segments 2..M."""
        labels = np.ones(T, dtype=int)
        for b in boundaries:
            labels[int(b):] += 1
        return cls(labels, len(boundaries) + 1)

    @classmethod
    def uniform(cls, T: int, M: int) -> Segmentation:
        return cls.from_boundaries(T, [round(j * T / M) for j in range(1, M)])

    @property
    def T(self) -> int:
        return self.labels.size

    @property
    def boundaries(self) -> list[int]:
        """0-based index of the first sample of each segment after the first."""
        return [int(i) + 1 for i in np.flatnonzero(np.diff(self.labels))]

    def lengths(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.M + 1)[1:]

    def __eq__(self, other):
        if not isinstance(other, Segmentation):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class StiffnessParams:
    """Per-segment diagonal stiffness, stored as an ``(M, n_axes)`` array."""

    K: np.ndarray
    k_min: float = 10.0
    k_max: float = 1000.0

    def __post_init__(self):
        K = _as_2d(self.K, "K")
        object.__setattr__(self, "K", K)
        if not self.k_min > 0:
            raise ValueError(f"k_min must be positive, got {self.k_min}")
        if self.k_max < self.k_min:
            raise ValueError("k_max must be >= k_min")
        # tolerate round-off from the log-space search mapping
        tol = 1e-9 * self.k_max
        if np.any(K < self.k_min - tol) or np.any(K > self.k_max + tol):
            raise ValueError(f"stiffness entries must lie in [{self.k_min}, {self.k_max}]")
        object.__setattr__(self, "K", np.clip(K, self.k_min, self.k_max))

    @classmethod
    def constant(cls, M: int, n_axes: int, k: float, k_min=10.0, k_max=1000.0) -> StiffnessParams:
        return cls(np.full((M, n_axes), float(k)), k_min, k_max)

    @property
    def M(self) -> int:
        return self.K.shape[0]

    @property
    def n_axes(self) -> int:
        return self.K.shape[1]

    @property
    def damping(self) -> np.ndarray:
        return 2.0 * np.sqrt(self.K)

    def per_step(self, seg: Segmentation) -> np.ndarray:
        """``(T, n_axes)`` stiffness schedule ``K_{s_t}``."""
        if seg.M != self.M:
            raise ValueError(f"segmentation has M={seg.M} but stiffness has M={self.M}")
        return self.K[seg.labels - 1]

    def flat(self) -> np.ndarray:
        return self.K.ravel()


class ObjectivePoint(NamedTuple):
    """Task and compliance objective values; both are maximized."""

    y_T: float
    y_C: float


class RandomStream:
    """Named, reproducible random stream.

    Identical ``(seed, label)`` pairs give identical draws on every platform
    (PCG64 seeded through :class:`numpy.random.SeedSequence`).
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = str(label)

    def _key(self) -> tuple[int, ...]:
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self._key())
        return np.random.default_rng(ss)

    def fork(self, label: str) -> RandomStream:
        return RandomStream(self.seed, f"{self.label}/{label}")

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, label={self.label!r})"
