"""Covisibility yaw waypoint sampling and continuous yaw optimization.

Waypoint yaws at the position-trajectory joints are chosen so consecutive
views share enough feature quality; the continuous yaw profile between
them minimizes a perceptual bearing-rate tracking cost plus a yaw-rate
smoothness term, as a convex QP over Bezier control points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bezier import BezierSegment, PiecewiseBezier, bernstein_row, derivative_cost_matrix
from .frontier import PlannerParams
from .position import PositionTrajectory
from .qp import QuadraticProgram, solve_qp
from .world import CameraModel, FeatureMap, Viewpoint, VoxelGrid, visible_features, wrap_angle

QUAD_NODES = 16
MAX_YAW_STEPS = 10  # extra candidate yaws tried per joint before fallback


@dataclass
class YawPlanInput:
    position_trajectory: PositionTrajectory
    start_yaw: float
    goal_yaw: float
    feature_map: FeatureMap
    grid: VoxelGrid
    camera: CameraModel
    params: PlannerParams


@dataclass
class YawTrajectory:
    """Scalar yaw profile sharing segment count and durations with the
    position trajectory (durations may be dilated; see `dilation`)."""

    curve: PiecewiseBezier
    waypoint_yaws: np.ndarray  # unwrapped, length M + 1
    covisible_sets: list  # per segment: {feature_id: score}
    dilation: np.ndarray = None  # per-segment duration scale, ones if unchanged
    _rate: PiecewiseBezier = field(default=None, repr=False)
    _acc: PiecewiseBezier = field(default=None, repr=False)

    def __post_init__(self):
        if self.dilation is None:
            self.dilation = np.ones(len(self.curve.segments))
        self._rate = self.curve.derivative()
        self._acc = self._rate.derivative()

    def yaw(self, t: float) -> float:
        return wrap_angle(float(self.curve.eval(t)[0]))

    def yaw_unwrapped(self, t: float) -> float:
        return float(self.curve.eval(t)[0])

    def yaw_rate(self, t: float) -> float:
        return float(self._rate.eval(t)[0])

    def yaw_acceleration(self, t: float) -> float:
        return float(self._acc.eval(t)[0])

    @property
    def dilated(self) -> bool:
        return bool(np.any(self.dilation > 1.0))


def _default_visible(inp: YawPlanInput):
    def fn(position, yaw):
        # trajectory joints may sit on the arena boundary up to solver
        # tolerance; nudge them inside before the visibility query
        position = np.clip(position, inp.grid.origin + 1e-9,
                           inp.grid.max_corner - 1e-9)
        ids = visible_features(inp.feature_map, inp.grid,
                               Viewpoint(position, wrap_angle(yaw)), inp.camera)
        return {int(i): inp.feature_map.score_of({i}) for i in ids}
    return fn


def covisibility_sampling(inp: YawPlanInput, visible_fn=None):
    """Waypoint yaws and covisible feature sets at the trajectory joints.

    At each interior joint the yaw starts from the previously accepted one
    and steps toward the goal yaw until the feature quality shared with
    the previous view exceeds tau_cov; after the step budget runs out the
    joint falls back to linear interpolation toward the goal with an empty
    covisible set.  Returns (waypoint_yaws, covisible_sets) with yaws on
    the unwrapped branch nearest the start yaw.
    """
    traj = inp.position_trajectory
    params = inp.params
    if visible_fn is None:
        visible_fn = _default_visible(inp)
    m = len(traj.curve.segments)
    joint_times = np.append(traj.curve.segment_start_times(), traj.curve.end_time)
    joints = [traj.position(t) for t in joint_times]

    psi_c = float(inp.start_yaw)
    psi_g = psi_c + wrap_angle(inp.goal_yaw - psi_c)
    yaws = [psi_c]
    sets = []
    prev_view = None
    for j in range(1, m):
        if prev_view is None:
            prev_view = visible_fn(joints[0], psi_c)
        psi_last = yaws[-1]
        step = params.delta_psi if psi_g >= psi_last else -params.delta_psi
        psi_s = psi_last
        accepted = False
        for _ in range(MAX_YAW_STEPS + 1):
            view = visible_fn(joints[j], psi_s)
            w_cov = sum(s for i, s in view.items() if i in prev_view)
            if w_cov > params.tau_cov:
                yaws.append(psi_s)
                sets.append({i: s for i, s in view.items() if i in prev_view})
                prev_view = view
                accepted = True
                break
            psi_s += step
        if not accepted:
            psi_j = psi_last + (psi_g - psi_last) * j / m
            yaws.append(psi_j)
            sets.append({})
            prev_view = view  # last candidate view; no extra call spent
    yaws.append(psi_g)
    if m >= 2:
        # final segment tracks whatever stays covisible into the goal view
        view = visible_fn(joints[m], psi_g)
        sets.append({i: s for i, s in view.items() if i in prev_view})
    else:
        sets.append({})
    return np.array(yaws), sets


def desired_yaw_rate(p, v, f) -> float:
    """Time derivative of the horizontal bearing from p toward the static
    feature f while moving with velocity v."""
    p = np.asarray(p, float)
    v = np.asarray(v, float)
    d = np.asarray(f, float) - p
    horiz = d[0] * d[0] + d[1] * d[1]
    if np.linalg.norm(d) <= 1e-6 or horiz <= 1e-12:
        raise ValueError("feature too close to the camera axis; bearing undefined")
    return float((d[1] * v[0] - d[0] * v[1]) / horiz)


def _quadrature(seg_start: float, duration: float):
    nodes, weights = np.polynomial.legendre.leggauss(QUAD_NODES)
    t = seg_start + 0.5 * duration * (nodes + 1.0)
    w = 0.5 * duration * weights
    return t, w


def _segment_targets(pos_traj: PositionTrajectory, sets, fm: FeatureMap):
    """Per segment: quadrature times, weights and per-feature desired-rate
    rows (scores, rates (n_feat, n_nodes))."""
    out = []
    starts = pos_traj.curve.segment_start_times()
    for j, seg in enumerate(pos_traj.curve.segments):
        t, w = _quadrature(starts[j], seg.duration)
        scores = []
        rates = []
        for fid, s in sorted(sets[j].items()):
            fpos = fm.position_of(fid)
            row = np.empty(len(t))
            ok = True
            for i, ti in enumerate(t):
                try:
                    row[i] = desired_yaw_rate(pos_traj.position(ti),
                                              pos_traj.velocity(ti), fpos)
                except ValueError:
                    ok = False
                    break
            if ok:
                scores.append(s)
                rates.append(row)
        out.append((t, w, np.array(scores), np.array(rates).reshape(len(scores), len(t))))
    return out


def perceptual_cost(yaw_curve: PiecewiseBezier, pos_traj: PositionTrajectory,
                    sets, fm: FeatureMap) -> float:
    """Score-weighted squared mismatch between the yaw rate and each
    covisible feature's desired bearing rate, integrated per segment."""
    rate = yaw_curve.derivative()
    total = 0.0
    for t, w, scores, rates in _segment_targets(pos_traj, sets, fm):
        if len(scores) == 0:
            continue
        psi_dot = np.array([rate.eval(ti)[0] for ti in t])
        total += float(np.sum(w * (scores[:, None] * (rates - psi_dot) ** 2).sum(axis=0)))
    return total


def smoothness_cost(yaw_curve: PiecewiseBezier) -> float:
    """Integral of the squared yaw rate, in closed form."""
    total = 0.0
    for seg in yaw_curve.segments:
        n = seg.control_points.shape[0] - 1
        r = derivative_cost_matrix(n, seg.duration, 1)
        c = seg.control_points[:, 0]
        total += float(c @ r @ c)
    return total


def _rate_basis(n: int, duration: float, tau: float) -> np.ndarray:
    """d(yaw)/dt at local parameter tau as a linear form over the n+1
    segment control points."""
    b = bernstein_row(n - 1, tau)
    row = np.zeros(n + 1)
    row[1:] += n / duration * b
    row[:-1] -= n / duration * b
    return row


def perceptual_gradient(yaw_curve: PiecewiseBezier, pos_traj: PositionTrajectory,
                        sets, fm: FeatureMap) -> np.ndarray:
    """Gradient of perceptual_cost over the stacked yaw control points."""
    rate = yaw_curve.derivative()
    starts = yaw_curve.segment_start_times()
    npc = yaw_curve.segments[0].control_points.shape[0]
    grad = np.zeros(len(yaw_curve.segments) * npc)
    for j, (t, w, scores, rates) in enumerate(_segment_targets(pos_traj, sets, fm)):
        if len(scores) == 0:
            continue
        seg = yaw_curve.segments[j]
        dur = seg.duration
        for i, ti in enumerate(t):
            psi_dot = rate.eval(ti)[0]
            resid = 2.0 * np.sum(scores * (psi_dot - rates[:, i]))
            basis = _rate_basis(npc - 1, dur, (ti - starts[j]) / dur)
            grad[j * npc:(j + 1) * npc] += w[i] * resid * basis
    return grad


def _linear_curve(yaws: np.ndarray, times: np.ndarray, order: int,
                  start_time: float) -> PiecewiseBezier:
    """Piecewise-linear-in-time interpolant of the waypoint yaws, degree
    elevated so every segment shares the requested order."""
    segs = []
    for j in range(len(times)):
        cps = np.linspace(yaws[j], yaws[j + 1], order + 1)[:, None]
        segs.append(BezierSegment(cps, times[j]))
    return PiecewiseBezier(segs, start_time)


def optimize_yaw(inp: YawPlanInput, visible_fn=None) -> YawTrajectory:
    """Continuous yaw profile through the covisibility waypoints.

    Minimizes perceptual_cost + lambda_psi * smoothness_cost over Bezier
    control points with the waypoint yaws pinned and hodograph rate and
    acceleration bounds.  Segments whose required average yaw rate exceeds
    the limit are dilated (reported through YawTrajectory.dilation) so the
    piecewise-linear interpolant is always a feasible starting point.  In
    modes without continuous yaw optimization the interpolant itself is
    returned.
    """
    params = inp.params
    pos_traj = inp.position_trajectory
    yaws, sets = covisibility_sampling(inp, visible_fn)
    times = np.array([seg.duration for seg in pos_traj.curve.segments])
    m = len(times)
    needed = np.abs(np.diff(yaws)) / (0.99 * params.psi_dot_max)
    dilation = np.maximum(needed / times, 1.0)
    times = times * dilation
    start_time = pos_traj.curve.start_time
    n = params.yaw_order
    npc = n + 1
    linear = _linear_curve(yaws, times, n, start_time)
    if not params.continuous_yaw:
        return YawTrajectory(linear, yaws, sets, dilation)

    nv = m * npc
    h = np.zeros((nv, nv))
    g = np.zeros(nv)
    for j in range(m):
        h[j * npc:(j + 1) * npc, j * npc:(j + 1) * npc] += \
            2.0 * params.lambda_psi * derivative_cost_matrix(n, times[j], 1)
    # quadrature targets are evaluated on the original position timeline;
    # dilation only stretches the yaw curve clock
    targets = _segment_targets(pos_traj, sets, fm=inp.feature_map)
    for j, (t_pos, w, scores, rates) in enumerate(targets):
        if len(scores) == 0:
            continue
        s_total = float(np.sum(scores))
        tau = (t_pos - pos_traj.curve.segment_start_times()[j]) / pos_traj.curve.segments[j].duration
        for i in range(len(t_pos)):
            basis = np.zeros(nv)
            basis[j * npc:(j + 1) * npc] = _rate_basis(n, times[j], tau[i])
            h += 2.0 * w[i] * s_total * np.outer(basis, basis)
            g -= 2.0 * w[i] * float(np.sum(scores * rates[:, i])) * basis

    rows_eq, rhs_eq = [], []

    def pin(j, k, val):
        r = np.zeros(nv)
        r[j * npc + k] = 1.0
        rows_eq.append(r)
        rhs_eq.append(val)

    pin(0, 0, yaws[0])
    pin(m - 1, n, yaws[m])
    for j in range(m - 1):
        pin(j, n, yaws[j + 1])
        pin(j + 1, 0, yaws[j + 1])

    rows_in, rhs_in = [], []
    for j in range(m):
        t_j = times[j]
        for k in range(n):
            r = np.zeros(nv)
            r[j * npc + k + 1] = n / t_j
            r[j * npc + k] = -n / t_j
            rows_in.append(r); rhs_in.append(params.psi_dot_max)
            rows_in.append(-r); rhs_in.append(params.psi_dot_max)
        ca = n * (n - 1) / t_j**2
        for k in range(n - 1):
            r = np.zeros(nv)
            r[j * npc + k] = ca
            r[j * npc + k + 1] = -2 * ca
            r[j * npc + k + 2] = ca
            rows_in.append(r); rhs_in.append(params.psi_ddot_max)
            rows_in.append(-r); rhs_in.append(params.psi_ddot_max)

    qp = QuadraticProgram(h, g, a_eq=np.array(rows_eq), b_eq=np.array(rhs_eq),
                          a_in=np.array(rows_in), b_in=np.array(rhs_in))
    x0 = np.concatenate([seg.control_points[:, 0] for seg in linear.segments])
    res = solve_qp(qp, x0=x0)
    if res.status != "optimal" and qp.objective(res.x) > qp.objective(x0):
        return YawTrajectory(linear, yaws, sets, dilation)
    segs = [BezierSegment(res.x[j * npc:(j + 1) * npc][:, None], times[j]) for j in range(m)]
    return YawTrajectory(PiecewiseBezier(segs, start_time), yaws, sets, dilation)
