"""Bernstein basis and piecewise Bezier curves.

Curves are stored as control points plus a segment duration; evaluation is
always on the normalized parameter tau = (t - t0) / duration.  Derivative
curves (hodographs) and closed-form integral cost matrices are the building
blocks for the trajectory optimizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def bernstein(k: int, n: int, tau: float) -> float:
    """Bernstein basis polynomial B_k^n(tau) = C(n,k) (1-tau)^(n-k) tau^k."""
    if not 0 <= k <= n:
        raise ValueError(f"basis index k={k} out of range for order n={n}")
    return math.comb(n, k) * (1.0 - tau) ** (n - k) * tau**k


def bernstein_row(n: int, tau: float) -> np.ndarray:
    """All n+1 basis values at tau, as a vector."""
    return np.array([bernstein(k, n, tau) for k in range(n + 1)])


@dataclass
class BezierSegment:
    """Single Bezier segment of order n with n+1 control points.

    control_points has shape (n+1, d); duration is the segment's time span
    in seconds.  Evaluation at tau=0 returns the first control point, at
    tau=1 the last.
    """

    control_points: np.ndarray
    duration: float

    def __post_init__(self):
        self.control_points = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        if self.control_points.shape[0] < 2:
            raise ValueError("a Bezier segment needs at least 2 control points (order >= 1)")
        if not self.duration > 0.0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")

    @property
    def order(self) -> int:
        return self.control_points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def eval_tau(self, tau: float) -> np.ndarray:
        """Value at normalized parameter tau in [0, 1]."""
        return bernstein_row(self.order, tau) @ self.control_points

    def eval(self, t: float) -> np.ndarray:
        """Value at segment-local time t in [0, duration]."""
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"time {t} outside segment span [0, {self.duration}]")
        tau = min(max(t / self.duration, 0.0), 1.0)
        return self.eval_tau(tau)

    def derivative(self) -> "BezierSegment":
        """Hodograph: order n-1 segment whose evaluation is d/dt of self."""
        n = self.order
        cps = n * np.diff(self.control_points, axis=0) / self.duration
        if n == 1:
            # derivative of a linear segment is constant; keep 2 equal points
            cps = np.vstack([cps, cps])
        return BezierSegment(cps, self.duration)


@dataclass
class PiecewiseBezier:
    """M Bezier segments laid end to end, starting at start_time."""

    segments: list
    start_time: float = 0.0
    validate_joints: bool = True

    def __post_init__(self):
        if len(self.segments) < 1:
            raise ValueError("piecewise curve needs at least one segment")
        if not self.validate_joints:
            return
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if not np.allclose(a.control_points[-1], b.control_points[0], atol=1e-9):
                raise ValueError("adjacent segments must share their joint control point")

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    @property
    def dim(self) -> int:
        return self.segments[0].dim

    def segment_start_times(self) -> np.ndarray:
        durs = [s.duration for s in self.segments]
        return self.start_time + np.concatenate([[0.0], np.cumsum(durs)])

    def locate(self, t: float):
        """Segment index and local time for absolute time t."""
        if t < self.start_time - 1e-9 or t > self.end_time + 1e-9:
            raise ValueError(f"time {t} outside curve span [{self.start_time}, {self.end_time}]")
        rel = min(max(t - self.start_time, 0.0), self.duration)
        for j, seg in enumerate(self.segments):
            if rel <= seg.duration or j == len(self.segments) - 1:
                return j, min(rel, seg.duration)
            rel -= seg.duration
        raise AssertionError("unreachable")

    def eval(self, t: float) -> np.ndarray:
        j, tl = self.locate(t)
        return self.segments[j].eval(tl)

    def derivative(self) -> "PiecewiseBezier":
        # the hodograph of a merely C0 curve is discontinuous at joints;
        # evaluation at a joint time uses the left segment
        segs = [s.derivative() for s in self.segments]
        return PiecewiseBezier(segs, self.start_time, validate_joints=False)

    def sample(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.eval(t) for t in times])


def _difference_operator(n: int) -> np.ndarray:
    """Matrix mapping order-n control points to unscaled forward differences."""
    d = np.zeros((n, n + 1))
    for k in range(n):
        d[k, k] = -n
        d[k, k + 1] = n
    return d


def bernstein_gram(n: int) -> np.ndarray:
    """G_ij = integral_0^1 B_i^n B_j^n dtau, in closed form."""
    g = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for j in range(n + 1):
            g[i, j] = (
                math.comb(n, i) * math.comb(n, j) / (math.comb(2 * n, i + j) * (2 * n + 1))
            )
    return g


def derivative_cost_matrix(n: int, duration: float, r: int) -> np.ndarray:
    """Quadratic form H with c^T H c = integral over the segment of the
    squared r-th time derivative, for one scalar axis of an order-n segment.

    Exact via Bernstein product integrals; zero matrix when r > n.
    """
    if not duration > 0.0:
        raise ValueError("duration must be positive")
    if r < 1:
        raise ValueError("derivative order must be >= 1")
    if n < r:
        return np.zeros((n + 1, n + 1))
    m = np.eye(n + 1)
    for i in range(r):
        m = _difference_operator(n - i) @ m
    g = bernstein_gram(n - r)
    # r difference passes carry 1/duration^r; the dt integral contributes
    # one factor of duration
    return m.T @ g @ m / duration ** (2 * r - 1)


def snap_cost_matrix(n: int, duration: float) -> np.ndarray:
    """H with c^T H c = integral of the squared 4th derivative (snap)."""
    return derivative_cost_matrix(n, duration, 4)
