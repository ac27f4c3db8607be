"""Collision-free path search, safe-corridor construction and the
minimum-snap Bezier position trajectory.

The pipeline is: BFS over known-Free voxels, box-merge shortcutting,
axis-aligned corridor inflation, trapezoidal time allocation, then one
convex QP per axis (the axis-aligned corridor and the per-axis infinity
norm bound v_max / sqrt(3) decouple the axes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import FREE
from .bezier import BezierSegment, PiecewiseBezier, snap_cost_matrix
from .frontier import PlannerParams
from .qp import QuadraticProgram, solve_qp
from .world import Box, VoxelGrid


class PlanningError(RuntimeError):
    """Raised when no plan exists; the caller picks another subgoal."""


@dataclass
class Corridor:
    boxes: list  # of Box, one per trajectory segment

    def __len__(self):
        return len(self.boxes)


@dataclass
class BoundaryState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    @classmethod
    def at_rest(cls, p):
        return cls(np.asarray(p, float), np.zeros(3), np.zeros(3))


@dataclass
class PositionTrajectory:
    curve: PiecewiseBezier
    start_state: BoundaryState
    goal: np.ndarray
    corridor: Corridor | None = None
    _vel: PiecewiseBezier = field(default=None, repr=False)
    _acc: PiecewiseBezier = field(default=None, repr=False)

    def __post_init__(self):
        self._vel = self.curve.derivative()
        self._acc = self._vel.derivative()

    @property
    def duration(self) -> float:
        return self.curve.duration

    def position(self, t: float) -> np.ndarray:
        return self.curve.eval(t)

    def velocity(self, t: float) -> np.ndarray:
        return self._vel.eval(t)

    def acceleration(self, t: float) -> np.ndarray:
        return self._acc.eval(t)

    def joint_positions(self) -> np.ndarray:
        """Segment start points p_{j,0} plus the final endpoint."""
        pts = [seg.control_points[0] for seg in self.curve.segments]
        pts.append(self.curve.segments[-1].control_points[-1])
        return np.array(pts)


def _aabb_all_free(grid: VoxelGrid, a: np.ndarray, b: np.ndarray) -> bool:
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    il = grid.world_to_index(np.clip(lo, grid.origin, grid.max_corner - 1e-9))
    ih = grid.world_to_index(np.clip(hi, grid.origin, grid.max_corner - 1e-9))
    block = grid.cells[il[0]:ih[0] + 1, il[1]:ih[1] + 1, il[2]:ih[2] + 1]
    return bool(np.all(block == FREE))


def plan_path(grid: VoxelGrid, start, goal) -> list:
    """Waypoint chain through known-Free voxels from start to goal.

    BFS over 26-connected Free voxels, then greedy merging of consecutive
    waypoints whenever the axis-aligned bounding box of the merged edge is
    entirely Free (stronger than line-of-sight, so corridor seeding is
    always valid).
    """
    start = np.asarray(start, float)
    goal = np.asarray(goal, float)
    si = grid.world_to_index(start)
    gi = grid.world_to_index(goal)
    if grid.cells[si] != FREE or grid.cells[gi] != FREE:
        raise PlanningError("start or goal not in known-Free space")
    if si == gi:
        return [start] if np.allclose(start, goal) else [start, goal]
    ny, nz = grid.dims[1], grid.dims[2]
    flat = lambda i: (i[0] * ny + i[1]) * nz + i[2]
    parents = np.full(int(np.prod(grid.dims)), -1, dtype=np.int64)
    found = _kernels.bfs_path(grid.cells, flat(si), flat(gi), parents)
    if not found:
        raise PlanningError("no path through known-Free space")
    chain = []
    cur = flat(gi)
    s = flat(si)
    while cur != s:
        chain.append(cur)
        cur = int(parents[cur])
    chain.append(s)
    chain.reverse()
    pts = [start]
    for f in chain[1:-1]:
        idx = (f // (ny * nz), (f // nz) % ny, f % nz)
        pts.append(grid.index_to_world(idx))
    pts.append(goal)
    # shortcut: jump to the furthest waypoint whose merged AABB is free
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _aabb_all_free(grid, pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def subdivide_path(path: list, max_edge: float = 1.2) -> list:
    """Split edges longer than max_edge into equal pieces.

    A single Bezier segment with pinned rest endpoints cannot sustain
    cruise speed over a long edge (the velocity control net is pinched at
    both ends), so bounded edge lengths keep the per-segment QPs feasible.
    """
    out = [np.asarray(path[0], float)]
    for a, b in zip(path[:-1], path[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        pieces = max(int(math.ceil(np.linalg.norm(b - a) / max_edge)), 1)
        for k in range(1, pieces + 1):
            out.append(a + (b - a) * (k / pieces))
    return out


def build_corridor(path: list, grid: VoxelGrid, max_inflation: float = 1.0) -> Corridor:
    """One axis-aligned box per path edge, inflated face by face until
    blocked by non-Free voxels or the inflation bound."""
    if len(path) < 2:
        raise PlanningError("corridor needs at least one edge")
    res = grid.resolution
    dims = np.array(grid.dims)
    boxes = []
    for a, b in zip(path[:-1], path[1:]):
        lo_w = np.minimum(a, b)
        hi_w = np.maximum(a, b)
        il = np.array(grid.world_to_index(np.clip(lo_w, grid.origin, grid.max_corner - 1e-9)))
        ih = np.array(grid.world_to_index(np.clip(hi_w, grid.origin, grid.max_corner - 1e-9)))
        if not np.all(grid.cells[il[0]:ih[0] + 1, il[1]:ih[1] + 1, il[2]:ih[2] + 1] == FREE):
            raise PlanningError("corridor seed box not free; path invalid")
        max_steps = int(max_inflation / res)
        grown = True
        steps = np.zeros((3, 2), dtype=int)
        while grown:
            grown = False
            for axis in range(3):
                for side in range(2):  # 0: grow lo, 1: grow hi
                    if steps[axis, side] >= max_steps:
                        continue
                    il2, ih2 = il.copy(), ih.copy()
                    if side == 0:
                        if il[axis] == 0:
                            continue
                        il2[axis] -= 1
                        sl = [slice(il2[0], ih2[0] + 1), slice(il2[1], ih2[1] + 1), slice(il2[2], ih2[2] + 1)]
                        sl[axis] = slice(il2[axis], il2[axis] + 1)
                    else:
                        if ih[axis] == dims[axis] - 1:
                            continue
                        ih2[axis] += 1
                        sl = [slice(il2[0], ih2[0] + 1), slice(il2[1], ih2[1] + 1), slice(il2[2], ih2[2] + 1)]
                        sl[axis] = slice(ih2[axis], ih2[axis] + 1)
                    if np.all(grid.cells[tuple(sl)] == FREE):
                        il, ih = il2, ih2
                        steps[axis, side] += 1
                        grown = True
        box = Box(grid.origin + il * res, grid.origin + (ih + 1) * res)
        if np.any(box.hi - box.lo < res - 1e-9):
            raise PlanningError("corridor box collapsed below minimum volume")
        boxes.append(box)
    return Corridor(boxes)


def allocate_times(path: list, v_max: float, a_max: float, floor: float = 0.5) -> np.ndarray:
    """Trapezoidal-profile duration per edge with a per-segment floor."""
    times = []
    for a, b in zip(path[:-1], path[1:]):
        length = float(np.linalg.norm(np.asarray(b) - np.asarray(a)))
        if length <= 0.0:
            raise ValueError("consecutive waypoints must be distinct")
        if length >= v_max**2 / a_max:
            t = length / v_max + v_max / a_max
        else:
            t = 2.0 * math.sqrt(length / a_max)
        times.append(max(t, floor))
    return np.array(times)


def _axis_qp(n_order, times, boxes, start, goal, v_bound, a_bound, axis):
    """Assemble the per-axis min-snap QP over stacked control points."""
    m = len(times)
    npc = n_order + 1
    nv = m * npc
    h = np.zeros((nv, nv))
    for j, t in enumerate(times):
        h[j * npc:(j + 1) * npc, j * npc:(j + 1) * npc] = snap_cost_matrix(n_order, t)

    rows_eq, rhs_eq = [], []

    def row(j, coeffs):
        r = np.zeros(nv)
        for k, c in coeffs:
            r[j * npc + k] = c
        return r

    n = n_order
    # boundary: position, velocity, acceleration at start and end
    rows_eq.append(row(0, [(0, 1.0)])); rhs_eq.append(start.position[axis])
    rows_eq.append(row(0, [(0, -n / times[0]), (1, n / times[0])])); rhs_eq.append(start.velocity[axis])
    c2 = n * (n - 1) / times[0] ** 2
    rows_eq.append(row(0, [(0, c2), (1, -2 * c2), (2, c2)])); rhs_eq.append(start.acceleration[axis])
    rows_eq.append(row(m - 1, [(n, 1.0)])); rhs_eq.append(goal[axis])
    rows_eq.append(row(m - 1, [(n - 1, -n / times[-1]), (n, n / times[-1])])); rhs_eq.append(0.0)
    c2 = n * (n - 1) / times[-1] ** 2
    rows_eq.append(row(m - 1, [(n - 2, c2), (n - 1, -2 * c2), (n, c2)])); rhs_eq.append(0.0)
    # joint continuity up to the second derivative
    for j in range(m - 1):
        r = row(j, [(n, 1.0)]) - row(j + 1, [(0, 1.0)])
        rows_eq.append(r); rhs_eq.append(0.0)
        r = row(j, [(n - 1, -n / times[j]), (n, n / times[j])]) - row(
            j + 1, [(0, -n / times[j + 1]), (1, n / times[j + 1])]
        )
        rows_eq.append(r); rhs_eq.append(0.0)
        ca = n * (n - 1) / times[j] ** 2
        cb = n * (n - 1) / times[j + 1] ** 2
        r = row(j, [(n - 2, ca), (n - 1, -2 * ca), (n, ca)]) - row(
            j + 1, [(0, cb), (1, -2 * cb), (2, cb)]
        )
        rows_eq.append(r); rhs_eq.append(0.0)

    rows_in, rhs_in = [], []
    for j, t in enumerate(times):
        lo, hi = boxes[j].lo[axis], boxes[j].hi[axis]
        for k in range(npc):
            rows_in.append(row(j, [(k, 1.0)])); rhs_in.append(hi)
            rows_in.append(row(j, [(k, -1.0)])); rhs_in.append(-lo)
        for k in range(n):
            r = row(j, [(k, -n / t), (k + 1, n / t)])
            rows_in.append(r); rhs_in.append(v_bound)
            rows_in.append(-r); rhs_in.append(v_bound)
        ca = n * (n - 1) / t**2
        for k in range(n - 1):
            r = row(j, [(k, ca), (k + 1, -2 * ca), (k + 2, ca)])
            rows_in.append(r); rhs_in.append(a_bound)
            rows_in.append(-r); rhs_in.append(a_bound)

    return QuadraticProgram(
        h, np.zeros(nv),
        a_eq=np.array(rows_eq), b_eq=np.array(rhs_eq),
        a_in=np.array(rows_in), b_in=np.array(rhs_in),
    )


def optimize_position(corridor: Corridor, times: np.ndarray, start_state: BoundaryState,
                      goal, params: PlannerParams, start_time: float = 0.0) -> PositionTrajectory:
    """Minimum-snap trajectory through the corridor: boundary states, C2
    joints, per-axis corridor containment and conservative dynamic limits."""
    goal = np.asarray(goal, float)
    times = np.asarray(times, float)
    if len(times) != len(corridor):
        raise ValueError("one duration per corridor box required")
    if np.any(times <= 0):
        raise ValueError("durations must be positive")
    n = params.position_order
    v_bound = params.v_max / math.sqrt(3.0)
    a_bound = params.a_max / math.sqrt(3.0)
    m = len(times)
    npc = n + 1
    cps = np.zeros((m, npc, 3))
    for axis in range(3):
        qp = _axis_qp(n, times, corridor.boxes, start_state, goal, v_bound, a_bound, axis)
        res = solve_qp(qp)
        if res.status == "infeasible":
            raise PlanningError(f"position QP infeasible on axis {axis} "
                                "(corridor or dynamic-limit constraints)")
        if res.status == "max_iter":
            raise PlanningError(f"position QP failed to converge on axis {axis}")
        cps[:, :, axis] = res.x.reshape(m, npc)
    # snap shared joints exactly (solver leaves ~1e-10 residuals)
    for j in range(m - 1):
        mid = 0.5 * (cps[j, -1] + cps[j + 1, 0])
        cps[j, -1] = mid
        cps[j + 1, 0] = mid
    segs = [BezierSegment(cps[j], times[j]) for j in range(m)]
    return PositionTrajectory(PiecewiseBezier(segs, start_time), start_state, goal, corridor)


def plan_position_trajectory(grid: VoxelGrid, start_state: BoundaryState, goal,
                             params: PlannerParams, start_time: float = 0.0,
                             time_scale: float = 1.0) -> PositionTrajectory:
    """Full pipeline: path, corridor, times, QP.  One dilation retry when
    the QP is infeasible with the nominal time allocation."""
    path = plan_path(grid, start_state.position, goal)
    if len(path) == 1:
        path = [path[0], path[0] + 1e-6]
    path = subdivide_path(path)
    corridor = build_corridor(path, grid)
    # allocate against the per-axis bounds the QP enforces, not the
    # Euclidean limits, so axis-aligned cruise edges stay feasible
    times = allocate_times(
        path, params.v_max / math.sqrt(3.0), params.a_max / math.sqrt(3.0)
    ) * time_scale
    # pinned rest endpoints shrink the usable velocity control net, so
    # tight allocations can be infeasible; progressively dilate
    last_err = None
    for _ in range(4):
        try:
            return optimize_position(corridor, times, start_state, goal, params, start_time)
        except PlanningError as err:
            last_err = err
            times = times * 1.5
    raise last_err
