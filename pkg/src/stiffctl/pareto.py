"""Bi-objective Pareto arithmetic under the maximization convention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ObjectivePoint


def dominates(a, b) -> bool:
    """True iff ``a`` is at least as good as ``b`` everywhere and better somewhere."""
    return (a[0] >= b[0] and a[1] >= b[1]) and (a[0] > b[0] or a[1] > b[1])


def pareto_indices(points) -> list[int]:
    """Indices of the non-dominated points, sorted ascending by ``y_C``.

    Duplicates keep their earliest occurrence.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return []
    n = len(pts)
    # descending y_T, then descending y_C, then evaluation order
    order = np.lexsort((np.arange(n), -pts[:, 1], -pts[:, 0]))
    keep = []
    best_c = -np.inf
    for i in order:
        if pts[i, 1] > best_c:
            keep.append(int(i))
            best_c = pts[i, 1]
    return keep


def pareto_front(points) -> list[ObjectivePoint]:
    return [ObjectivePoint(*map(float, points[i])) for i in pareto_indices(points)]


def hypervolume(front, ref) -> float:
    """Exact area dominated by ``front`` and bounded below by ``ref``.

    Points that do not dominate ``ref`` are clamped onto it, so they add nothing.
    """
    pts = np.asarray(front, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return 0.0
    r = np.asarray(ref, dtype=float)
    pts = np.maximum(pts, r)
    pts = pts[pareto_indices(pts)]
    # ascending y_C == descending y_T: sweep the staircase
    area = 0.0
    prev_c = r[1]
    for y_t, y_c in pts:
        area += (y_t - r[0]) * (y_c - prev_c)
        prev_c = y_c
    return float(area)


class Staircase:
    """Precomputed front geometry for vectorized hypervolume improvement.

    ``improvement(Y)`` returns ``HV(front + {y}) - HV(front)`` for every row of
    ``Y`` in O(log |front|) per row.
    """

    def __init__(self, front, ref):
        r = np.asarray(ref, dtype=float)
        pts = np.asarray(front, dtype=float).reshape(-1, 2)
        if len(pts):
            pts = np.maximum(pts, r)
            pts = pts[pareto_indices(pts)][::-1]  # ascending y_T, descending y_C
        self.r = r
        self.q = np.concatenate([[r[0]], pts[:, 0]])  # knots of the dominance profile
        self.w = pts[:, 1]  # profile height on (q[i], q[i+1]]
        # H[i] = integral of the profile from r[0] to q[i]
        self.H = np.concatenate([[0.0], np.cumsum(self.w * np.diff(self.q))])
        self._neg_w = -self.w

    def _integral(self, u):
        # profile integral from r[0] to u (u >= r[0])
        k = len(self.w)
        idx = np.searchsorted(self.q, u, side="left")  # q[idx-1] < u <= q[idx]
        idx = np.clip(idx, 1, k + 1)
        out = np.empty_like(u)
        inside = idx <= k
        i = idx[inside]
        out[inside] = self.H[i - 1] + self.w[i - 1] * (u[inside] - self.q[i - 1])
        out[~inside] = self.H[k] + self.r[1] * (u[~inside] - self.q[k])
        return out

    def improvement(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        y1 = np.maximum(Y[..., 0], self.r[0]).ravel()
        y2 = np.maximum(Y[..., 1], self.r[1]).ravel()
        # profile heights >= y2 block the new point up to u_star
        n_block = np.searchsorted(self._neg_w, -y2, side="right")
        u_star = self.q[n_block]
        gain = np.zeros_like(y1)
        m = y1 > u_star
        if np.any(m):
            a, b, h = u_star[m], y1[m], y2[m]
            gain[m] = h * (b - a) - (self._integral(b) - self._integral(a))
        return np.maximum(gain, 0.0).reshape(np.shape(Y)[:-1])


def hypervolume_improvement(front, ref, Y) -> np.ndarray:
    return Staircase(front, ref).improvement(Y)


@dataclass
class ParetoArchive:
    """Evaluated parameter vectors and their objective values.

    ``reference`` and ``ideal`` define the affine map of both objectives onto
    ``[0, 1]``; hypervolumes are reported in that normalized space.
    """

    reference: ObjectivePoint
    ideal: ObjectivePoint
    thetas: list = field(default_factory=list)
    points: list = field(default_factory=list)

    def normalize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo = np.asarray(self.reference, dtype=float)
        hi = np.asarray(self.ideal, dtype=float)
        return (y - lo) / (hi - lo)

    def add(self, theta, point: ObjectivePoint):
        self.thetas.append(theta)
        self.points.append(ObjectivePoint(float(point[0]), float(point[1])))

    def normalized(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 2))
        return np.clip(self.normalize(np.asarray(self.points)), 0.0, None)

    def front_indices(self) -> list[int]:
        return pareto_indices(self.points)

    def front(self):
        return [(self.thetas[i], self.points[i]) for i in self.front_indices()]

    def hypervolume(self) -> float:
        return hypervolume(self.normalized(), (0.0, 0.0))

    def __len__(self):
        return len(self.points)
