import numpy as np
import pytest
from scipy.linalg import lstsq, null_space
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra

from paex.frontier import PlannerParams
from paex.position import (
    BoundaryState,
    Corridor,
    PlanningError,
    allocate_times,
    build_corridor,
    optimize_position,
    plan_path,
    plan_position_trajectory,
    subdivide_path,
)
from paex.world import FREE, OCCUPIED, UNKNOWN, Box, VoxelGrid


def free_grid(dims=(40, 40, 10), res=0.1):
    g = VoxelGrid(np.zeros(3), res, dims)
    g.cells[:] = FREE
    return g


class TestPlanPath:
    def test_start_equals_goal(self):
        g = free_grid()
        p = np.array([1.0, 1.0, 0.5])
        assert len(plan_path(g, p, p)) == 1

    def test_straight_corridor_two_waypoints(self):
        g = free_grid()
        path = plan_path(g, [0.25, 2.0, 0.5], [3.75, 2.0, 0.5])
        assert len(path) == 2

    def test_no_path_raises(self):
        g = free_grid((20, 20, 5))
        g.cells[10, :, :] = OCCUPIED
        with pytest.raises(PlanningError):
            plan_path(g, [0.5, 1.0, 0.25], [1.5, 1.0, 0.25])

    def test_start_in_unknown_raises(self):
        g = free_grid((20, 20, 5))
        g.cells[2, 10, 2] = UNKNOWN
        with pytest.raises(PlanningError):
            plan_path(g, [0.25, 1.05, 0.25], [1.5, 1.0, 0.25])

    def test_u_shape_vs_dijkstra_oracle(self):
        g = free_grid((30, 30, 3))
        # U-shaped wall around the goal
        g.cells[10:20, 10, :] = OCCUPIED
        g.cells[10, 10:20, :] = OCCUPIED
        g.cells[19, 10:20, :] = OCCUPIED
        start = np.array([1.45, 0.55, 0.15])
        goal = np.array([1.45, 1.45, 0.15])
        path = plan_path(g, start, goal)
        # every consecutive pair is box-free, hence collision-free
        from paex.position import _aabb_all_free

        for a, b in zip(path[:-1], path[1:]):
            assert _aabb_all_free(g, a, b)
        length = sum(np.linalg.norm(b - a) for a, b in zip(path[:-1], path[1:]))

        # exhaustive grid-graph shortest path oracle (26-connectivity)
        dims = g.dims
        nfree = np.prod(dims)
        graph = lil_matrix((nfree, nfree))
        flat = lambda i, j, k: (i * dims[1] + j) * dims[2] + k
        for i in range(dims[0]):
            for j in range(dims[1]):
                for k in range(dims[2]):
                    if g.cells[i, j, k] != FREE:
                        continue
                    for di in (-1, 0, 1):
                        for dj in (-1, 0, 1):
                            for dk in (-1, 0, 1):
                                if di == dj == dk == 0:
                                    continue
                                a, b, c = i + di, j + dj, k + dk
                                if 0 <= a < dims[0] and 0 <= b < dims[1] and 0 <= c < dims[2]:
                                    if g.cells[a, b, c] == FREE:
                                        w = g.resolution * np.sqrt(di * di + dj * dj + dk * dk)
                                        graph[flat(i, j, k), flat(a, b, c)] = w
        si = flat(*g.world_to_index(start))
        gi = flat(*g.world_to_index(goal))
        dist = dijkstra(graph.tocsr(), indices=si)[gi]
        # geodesic between voxel centers; allow endpoint offsets
        assert length >= dist - 2 * g.resolution * np.sqrt(3)


class TestBuildCorridor:
    def test_open_space_inflates_to_bound(self):
        g = free_grid((60, 60, 40))
        path = [np.array([2.95, 2.95, 1.95]), np.array([3.05, 3.05, 2.05])]
        cor = build_corridor(path, g, max_inflation=1.0)
        box = cor.boxes[0]
        assert np.all(box.hi - box.lo >= 2.0)  # 1 m inflation each side

    def test_box_flush_against_wall(self):
        g = free_grid((40, 40, 10))
        g.cells[20:, :, :] = OCCUPIED  # wall at x = 2.0
        path = [np.array([1.85, 1.0, 0.5]), np.array([1.85, 2.0, 0.5])]
        cor = build_corridor(path, g)
        box = cor.boxes[0]
        assert box.hi[0] == pytest.approx(2.0, abs=1e-9)
        # voxel membership scan: every voxel in the box is Free
        il = g.world_to_index(box.lo + 1e-6)
        ih = g.world_to_index(box.hi - 1e-6)
        assert np.all(g.cells[il[0]:ih[0] + 1, il[1]:ih[1] + 1, il[2]:ih[2] + 1] == FREE)

    def test_boxes_contain_endpoints(self):
        rng = np.random.default_rng(0)
        g = free_grid((40, 40, 10))
        g.cells[rng.random((40, 40, 10)) < 0.05] = OCCUPIED
        start = np.array([0.55, 0.55, 0.55])
        goal = np.array([3.45, 3.45, 0.55])
        g.cells[g.world_to_index(start)] = FREE
        g.cells[g.world_to_index(goal)] = FREE
        try:
            path = plan_path(g, start, goal)
        except PlanningError:
            pytest.skip("random grid disconnected")
        cor = build_corridor(path, g)
        for box, (a, b) in zip(cor.boxes, zip(path[:-1], path[1:])):
            assert box.contains(a, margin=1e-9) and box.contains(b, margin=1e-9)


class TestAllocateTimes:
    def test_triangular_profile(self):
        v, a = 1.5, 2.0
        t = allocate_times([np.zeros(3), np.array([v * v / a, 0, 0])], v, a, floor=0.0)
        assert t[0] == pytest.approx(2 * v / a)

    def test_long_edge(self):
        v, a = 1.5, 2.0
        t = allocate_times([np.zeros(3), np.array([30.0, 0, 0])], v, a, floor=0.0)
        assert t[0] == pytest.approx(30.0 / v + v / a)

    def test_cruise_scaling(self):
        v, a = 1.0, 2.0
        e1 = allocate_times([np.zeros(3), np.array([10.0, 0, 0])], v, a, floor=0.0)[0]
        e2 = allocate_times([np.zeros(3), np.array([20.0, 0, 0])], v, a, floor=0.0)[0]
        # in the cruise regime doubling length adds exactly length/v
        assert e2 - e1 == pytest.approx(10.0 / v)

    def test_floor(self):
        t = allocate_times([np.zeros(3), np.array([0.01, 0, 0])], 1.5, 2.0)
        assert t[0] == 0.5

    def test_zero_edge_rejected(self):
        with pytest.raises(ValueError):
            allocate_times([np.zeros(3), np.zeros(3)], 1.0, 1.0)


def wide_corridor(m=1):
    boxes = [Box([-10.0, -10.0, -10.0], [10.0, 10.0, 10.0]) for _ in range(m)]
    return Corridor(boxes)


class TestOptimizePosition:
    def params(self):
        return PlannerParams()

    def test_constant_when_start_is_goal(self):
        p = np.array([0.3, -0.2, 1.0])
        traj = optimize_position(wide_corridor(), [1.0], BoundaryState.at_rest(p), p, self.params())
        for t in np.linspace(0, 1, 10):
            assert np.allclose(traj.position(t), p, atol=1e-8)

    def test_endpoints_and_continuity(self):
        start = BoundaryState(np.array([0.0, 0.0, 0.5]), np.array([0.3, 0.0, 0.0]), np.zeros(3))
        goal = np.array([2.0, 1.0, 0.7])
        times = [2.5, 2.5]
        traj = optimize_position(wide_corridor(2), times, start, goal, self.params())
        assert np.linalg.norm(traj.position(0.0) - start.position) <= 1e-8
        assert np.linalg.norm(traj.position(5.0) - goal) <= 1e-8
        assert np.linalg.norm(traj.velocity(0.0) - start.velocity) <= 1e-7
        assert np.linalg.norm(traj.velocity(5.0)) <= 1e-7
        assert np.linalg.norm(traj.acceleration(5.0)) <= 1e-6
        tj = 2.5
        for f in (traj.position, traj.velocity, traj.acceleration):
            assert np.linalg.norm(f(tj - 1e-9) - f(tj + 1e-9)) <= 1e-6

    def test_dynamic_limits_sampled(self):
        params = self.params()
        start = BoundaryState.at_rest([0.0, 0.0, 0.0])
        goal = np.array([4.0, 2.0, 0.0])
        path = subdivide_path([start.position, goal])
        times = allocate_times(
            path, params.v_max / np.sqrt(3), params.a_max / np.sqrt(3)
        )
        traj = optimize_position(wide_corridor(len(times)), times, start, goal, params)
        for t in np.linspace(0, traj.duration, 200):
            assert np.linalg.norm(traj.velocity(t)) <= params.v_max + 1e-6
            assert np.linalg.norm(traj.acceleration(t)) <= params.a_max + 1e-6

    def test_samples_inside_boxes(self):
        boxes = [Box([-0.2, -0.2, -0.2], [1.2, 0.4, 0.4]), Box([0.8, -0.2, -0.2], [2.2, 1.2, 0.4])]
        start = BoundaryState.at_rest([0.0, 0.0, 0.0])
        goal = np.array([2.0, 1.0, 0.0])
        traj = optimize_position(Corridor(boxes), [2.5, 2.5], start, goal, self.params())
        for t in np.linspace(0, traj.duration, 100):
            p = traj.position(t)
            assert any(b.contains(p, margin=1e-8) for b in boxes)

    def test_single_segment_matches_variational_oracle(self):
        # dense finite-difference discretization of the min-snap problem
        t_total = 2.0
        a, b = 0.0, 1.0
        n_grid = 400
        h = t_total / n_grid
        npts = n_grid + 1
        k4 = np.zeros((npts - 4, npts))
        for i in range(npts - 4):
            k4[i, i:i + 5] = [1.0, -4.0, 6.0, -4.0, 1.0]
        rows = []
        rhs = []
        e = lambda i: np.eye(npts)[i]
        rows += [e(0), e(npts - 1)]
        rhs += [a, b]
        rows.append((-3 * e(0) + 4 * e(1) - e(2)) / (2 * h)); rhs.append(0.0)
        rows.append((3 * e(npts - 1) - 4 * e(npts - 2) + e(npts - 3)) / (2 * h)); rhs.append(0.0)
        rows.append((2 * e(0) - 5 * e(1) + 4 * e(2) - e(3)) / h**2); rhs.append(0.0)
        rows.append((2 * e(npts - 1) - 5 * e(npts - 2) + 4 * e(npts - 3) - e(npts - 4)) / h**2); rhs.append(0.0)
        amat = np.array(rows)
        # null-space least squares keeps the ill-conditioned 4th-difference
        # operator out of the normal equations
        p0 = np.linalg.lstsq(amat, np.array(rhs), rcond=None)[0]
        z = null_space(amat)
        y = lstsq(k4 @ z, -k4 @ p0)[0]
        oracle = p0 + z @ y

        start = BoundaryState.at_rest([a, 0.0, 0.0])
        goal = np.array([b, 0.0, 0.0])
        traj = optimize_position(
            wide_corridor(), [t_total], start, goal, PlannerParams(v_max=10.0, a_max=10.0)
        )
        idx = np.linspace(0, n_grid, 50).astype(int)
        for i in idx:
            assert traj.position(i * h)[0] == pytest.approx(oracle[i], abs=1e-4)


def test_pipeline_in_grid():
    g = free_grid((40, 40, 10))
    g.cells[20, 5:35, :] = OCCUPIED
    params = PlannerParams()
    start = BoundaryState.at_rest([1.0, 1.0, 0.5])
    goal = np.array([3.0, 1.0, 0.5])
    traj = plan_position_trajectory(g, start, goal, params)
    assert np.linalg.norm(traj.position(traj.curve.end_time) - goal) <= 1e-7
    # safety: every sample in known-Free space
    for t in np.linspace(0, traj.duration, 150):
        assert g.cells[g.world_to_index(traj.position(t))] == FREE
