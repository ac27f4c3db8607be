import math

import numpy as np
import pytest
from scipy.integrate import simpson

from paex.bezier import BezierSegment, PiecewiseBezier
from paex.frontier import PlannerParams
from paex.position import BoundaryState, Corridor, optimize_position
from paex.world import FREE, Box, CameraModel, FeatureMap, VoxelGrid, wrap_angle
from paex.yaw import (
    YawPlanInput,
    YawTrajectory,
    covisibility_sampling,
    desired_yaw_rate,
    optimize_yaw,
    perceptual_cost,
    perceptual_gradient,
    smoothness_cost,
)


def free_grid(dims=(60, 60, 10), res=0.1):
    g = VoxelGrid(np.zeros(3), res, dims)
    g.cells[:] = FREE
    return g


def straight_trajectory(length=3.0, segments=3, speed=0.5):
    """Constant-ish velocity pass along +x at y=1, z=0.5."""
    params = PlannerParams(v_max=1.5, a_max=2.0)
    boxes = [Box([-1.0, 0.0, 0.0], [length + 1.0, 2.0, 1.0])] * segments
    times = [length / speed / segments] * segments
    start = BoundaryState.at_rest([0.0, 1.0, 0.5])
    return optimize_position(Corridor(boxes), times, start,
                             [length, 1.0, 0.5], params)


def joined_random_curve(rng, times, order=4):
    """Random yaw control points sharing their joint values, plus the map
    from free parameters (shared joints counted once) to stacked indices."""
    m = len(times)
    npc = order + 1
    values = rng.normal(size=(m, npc))
    for j in range(m - 1):
        values[j + 1, 0] = values[j, -1]
    segs = [BezierSegment(values[j][:, None], times[j]) for j in range(m)]
    return PiecewiseBezier(segs, 0.0), values


def rebuild(values, times):
    segs = [BezierSegment(values[j][:, None], times[j]) for j in range(len(times))]
    return PiecewiseBezier(segs, 0.0)


def make_input(pos_traj, fm=None, start_yaw=0.0, goal_yaw=0.0, **kw):
    params = PlannerParams(**kw)
    return YawPlanInput(pos_traj, start_yaw, goal_yaw, fm or FeatureMap(),
                        free_grid(), CameraModel(), params)


def yaw_curve_from(values, times, order=4, start_time=0.0):
    segs = []
    for j in range(len(times)):
        cps = np.linspace(values[j], values[j + 1], order + 1)[:, None]
        segs.append(BezierSegment(cps, times[j]))
    return PiecewiseBezier(segs, start_time)


class TestDesiredYawRate:
    def test_radial_motion_zero(self):
        assert desired_yaw_rate([0, 0, 0], [0.7, 0, 0], [2, 0, 0]) == pytest.approx(0.0)

    def test_matches_bearing_derivative(self):
        rng = np.random.default_rng(0)
        dt = 1e-6
        for _ in range(100):
            p = rng.normal(size=3)
            v = rng.normal(size=3)
            f = p + rng.normal(size=3)
            d = f - p
            if math.hypot(d[0], d[1]) < 0.1:
                continue
            bearing = lambda q: math.atan2(f[1] - q[1], f[0] - q[0])
            want = wrap_angle(bearing(p + dt * v) - bearing(p - dt * v)) / (2 * dt)
            assert desired_yaw_rate(p, v, f) == pytest.approx(want, abs=1e-5)

    def test_unit_cases(self):
        assert desired_yaw_rate([0, 0, 0], [0, 1, 0], [1, 0, 0]) == pytest.approx(-1.0)
        assert desired_yaw_rate([0, 0, 0], [0, 1, 0], [2, 0, 0]) == pytest.approx(-0.5)

    def test_degenerate_raises(self):
        with pytest.raises(ValueError):
            desired_yaw_rate([0, 0, 0], [1, 0, 0], [0, 0, 0])
        with pytest.raises(ValueError):
            desired_yaw_rate([0, 0, 0], [1, 0, 0], [0, 0, 2.0])  # overhead


class TestCovisibilitySampling:
    def test_rich_field_accepts_immediately(self):
        traj = straight_trajectory()
        inp = make_input(traj)
        calls = []

        def vis(pos, yaw):
            calls.append((tuple(pos), yaw))
            return {0: 1.0, 1: 2.0}  # everything always visible, plenty of quality

        yaws, sets = covisibility_sampling(inp, vis)
        m = len(traj.curve.segments)
        assert len(yaws) == m + 1
        assert np.allclose(yaws, 0.0)
        # accepted on first try at every interior joint, plus the start and
        # goal views
        assert len(calls) == 1 + (m - 1) + 1
        assert sets[0] == {0: 1.0, 1: 2.0}
        assert sets[-1] == {0: 1.0, 1: 2.0}

    def test_featureless_fallback(self):
        traj = straight_trajectory()
        inp = make_input(traj, goal_yaw=1.2)
        yaws, sets = covisibility_sampling(inp, lambda p, y: {})
        m = len(traj.curve.segments)
        assert all(s == {} for s in sets)
        # linear interpolation toward the goal from each previous waypoint
        want = [0.0]
        for j in range(1, m):
            want.append(want[-1] + (1.2 - want[-1]) * j / m)
        want.append(1.2)
        assert np.allclose(yaws, want)

    def test_call_budget(self):
        traj = straight_trajectory(segments=4)
        inp = make_input(traj, goal_yaw=2.0)
        n_calls = [0]

        def vis(p, y):
            n_calls[0] += 1
            return {}

        covisibility_sampling(inp, vis)
        m = len(traj.curve.segments)
        assert n_calls[0] <= 11 * (m - 1) + m

    def test_matches_grid_search_oracle(self):
        """Single joint: acceptance must match an exhaustive scan of the
        11-step delta-psi grid for the first yaw with w_cov > tau_cov."""
        traj = straight_trajectory(segments=2)
        inp = make_input(traj, goal_yaw=3.0, tau_cov=0.5, delta_psi=0.3)

        def vis(p, yaw):
            # contrived gate: covisible quality only in a yaw window
            return {7: 0.9} if 0.85 <= yaw <= 1.5 else {7: 0.2}

        # oracle: w_cov(yaw) = 0.9 iff both prev view and current are in the
        # window... prev view at joint 0 has yaw 0 -> {7: 0.2}; intersection
        # always contains id 7, score from current view
        grid = [0.0 + 0.3 * k for k in range(11)]
        want = next((y for y in grid if (0.9 if 0.85 <= y <= 1.5 else 0.2) > 0.5), None)
        yaws, sets = covisibility_sampling(inp, vis)
        assert yaws[1] == pytest.approx(want)
        assert sets[0] == {7: 0.9}

    def test_wrap_branch(self):
        traj = straight_trajectory(segments=2)
        inp = make_input(traj, start_yaw=3.0, goal_yaw=-3.0)
        yaws, _ = covisibility_sampling(inp, lambda p, y: {})
        # goal lifted to the branch nearest the start: -3 + 2pi
        assert yaws[-1] == pytest.approx(-3.0 + 2 * math.pi)
        assert np.all(np.diff(yaws) >= -1e-12)


class TestCosts:
    def test_empty_sets_zero(self):
        curve = yaw_curve_from([0.0, 0.5, 1.0], [1.0, 1.0])
        traj = straight_trajectory(segments=2)
        assert perceptual_cost(curve, traj, [{}, {}], FeatureMap()) == 0.0
        assert np.allclose(perceptual_gradient(curve, traj, [{}, {}], FeatureMap()), 0.0)

    def test_perfect_tracking_zero(self):
        # feature far away on +x, viewer moving along +x: desired rate ~ 0
        traj = straight_trajectory(segments=1, speed=0.3)
        fm = FeatureMap([[1000.0, 1.0, 0.5]], [1.0], [5])
        curve = yaw_curve_from([0.0, 0.0], [traj.duration])
        cost = perceptual_cost(curve, traj, [{5: 1.0}], fm)
        assert cost == pytest.approx(0.0, abs=1e-9)

    @staticmethod
    def _dense_oracle(curve, traj, sets, fm):
        want = 0.0
        starts = curve.segment_start_times()
        for j, seg in enumerate(curve.segments):
            rate_seg = seg.derivative()  # yaw rate may jump at joints
            ts = np.linspace(starts[j], starts[j] + seg.duration, 10001)
            vals = np.zeros_like(ts)
            for i, t in enumerate(ts):
                pd = rate_seg.eval(t - starts[j])[0]
                for fid, s in sets[j].items():
                    hat = desired_yaw_rate(traj.position(t), traj.velocity(t),
                                           fm.position_of(fid))
                    vals[i] += s * (hat - pd) ** 2
            want += simpson(vals, x=ts)
        return want

    def test_matches_dense_oracle_smooth_target(self):
        # distant features: the bearing-rate target is near-polynomial over
        # the segment, so the fixed 16-node rule is effectively exact
        rng = np.random.default_rng(1)
        traj = straight_trajectory(segments=2)
        fm = FeatureMap([[1.5, 400.0, 0.5], [300.0, -300.0, 0.6]], [0.8, 1.7], [0, 1])
        sets = [{0: 0.8}, {0: 0.8, 1: 1.7}]
        times = [seg.duration for seg in traj.curve.segments]
        curve, _ = joined_random_curve(rng, times)
        got = perceptual_cost(curve, traj, sets, fm)
        assert got == pytest.approx(self._dense_oracle(curve, traj, sets, fm), rel=1e-6)

    def test_matches_dense_oracle_nearby_features(self):
        # nearby features make the target rational in t; the 16-node rule is
        # a fixed-cost approximation, accurate to ~1e-3 relative here
        rng = np.random.default_rng(1)
        traj = straight_trajectory(segments=2)
        fm = FeatureMap([[1.5, 3.0, 0.5], [3.0, -1.0, 0.6]], [0.8, 1.7], [0, 1])
        sets = [{0: 0.8}, {0: 0.8, 1: 1.7}]
        times = [seg.duration for seg in traj.curve.segments]
        curve, _ = joined_random_curve(rng, times)
        got = perceptual_cost(curve, traj, sets, fm)
        assert got == pytest.approx(self._dense_oracle(curve, traj, sets, fm), rel=1e-3)

    def test_smoothness_linear_closed_form(self):
        a, b, t = 0.3, 1.7, 2.5
        curve = yaw_curve_from([a, b], [t])
        assert smoothness_cost(curve) == pytest.approx((b - a) ** 2 / t)
        const = yaw_curve_from([0.7, 0.7], [1.0])
        assert smoothness_cost(const) == pytest.approx(0.0, abs=1e-15)

    def test_smoothness_random_quartic_vs_quadrature(self):
        rng = np.random.default_rng(2)
        cps = rng.normal(size=(5, 1))
        seg = BezierSegment(cps, 1.7)
        curve = PiecewiseBezier([seg], 0.0)
        rate = curve.derivative()
        ts = np.linspace(0, 1.7, 20001)
        vals = np.array([rate.eval(t)[0] ** 2 for t in ts])
        want = simpson(vals, x=ts)
        assert smoothness_cost(curve) == pytest.approx(want, rel=1e-9)


class TestPerceptualGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        traj = straight_trajectory(segments=2)
        fm = FeatureMap([[1.5, 3.0, 0.5], [3.0, -1.0, 0.6]], [0.8, 1.7], [0, 1])
        sets = [{0: 0.8}, {0: 0.8, 1: 1.7}]
        times = [seg.duration for seg in traj.curve.segments]
        eps = 1e-6
        for _ in range(20):
            curve, values = joined_random_curve(rng, times)
            grad = perceptual_gradient(curve, traj, sets, fm)
            # free parameters: every control point, shared joints once; a
            # joint parameter's derivative sums both adjacent components
            free = [((0, k), grad[k]) for k in range(4)]
            free.append(((0, 4), grad[4] + grad[5]))
            free += [((1, k), grad[5 + k]) for k in range(1, 5)]
            for (j, k), g in free:
                hi = values.copy(); hi[j, k] += eps
                lo = values.copy(); lo[j, k] -= eps
                if (j, k) == (0, 4):
                    hi[1, 0] += eps
                    lo[1, 0] -= eps
                fd = (perceptual_cost(rebuild(hi, times), traj, sets, fm)
                      - perceptual_cost(rebuild(lo, times), traj, sets, fm)) / (2 * eps)
                assert g == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestOptimizeYaw:
    def test_constant_when_featureless_same_endpoints(self):
        traj = straight_trajectory(segments=2)
        inp = make_input(traj, start_yaw=0.4, goal_yaw=0.4)
        out = optimize_yaw(inp, lambda p, y: {})
        for t in np.linspace(0, traj.duration, 30):
            assert out.yaw(t) == pytest.approx(0.4, abs=1e-6)

    def test_tracks_analytic_bearing_profile(self):
        # single feature abeam of a straight pass: between the waypoints the
        # optimized yaw rate should follow the analytic bearing derivative.
        # Visibility gates acceptance to a narrow window around the true
        # bearing so the covisibility waypoints themselves stay on profile.
        fpos = np.array([1.5, 3.0, 0.5])
        # two segments with the feature exactly abeam at the joint, so the
        # yaw step grid lands on the true bearing there
        traj = straight_trajectory(length=3.0, segments=2, speed=0.5)

        def bearing(p):
            return math.atan2(fpos[1] - p[1], fpos[0] - p[0])

        def vis(p, yaw):
            return {0: 5.0} if abs(wrap_angle(yaw - bearing(p))) <= 1e-6 else {}

        start_yaw = bearing(traj.position(0.0))
        goal_yaw = bearing(traj.position(traj.duration))
        mid_bearing = bearing(traj.position(0.5 * traj.duration))
        fm = FeatureMap([fpos], [5.0], [0])
        inp = make_input(traj, fm=fm, start_yaw=start_yaw, goal_yaw=goal_yaw,
                         lambda_psi=1e-4, tau_cov=0.5, yaw_order=6,
                         delta_psi=(mid_bearing - start_yaw) / 8)
        out = optimize_yaw(inp, vis)
        assert not out.dilated
        assert out.waypoint_yaws[1] == pytest.approx(mid_bearing, abs=1e-6)
        ts = np.linspace(0.0, traj.duration, 120)
        got = np.array([out.yaw_rate(t) for t in ts])
        want = np.array([desired_yaw_rate(traj.position(t), traj.velocity(t), fpos)
                         for t in ts])
        rms = np.sqrt(np.mean((got - want) ** 2))
        scale = np.sqrt(np.mean(want ** 2))
        assert rms <= 0.05 * scale

    def test_rate_clamped(self):
        # feature passing close abeam: peak required bearing rate ~ 2 rad/s
        traj = straight_trajectory(length=3.0, segments=3, speed=0.5)
        fm = FeatureMap([[1.5, 1.25, 0.5]], [50.0], [0])
        inp = make_input(traj, fm=fm, lambda_psi=1e-4)
        out = optimize_yaw(inp, lambda p, y: {0: 50.0})
        p = inp.params
        for t in np.linspace(0, out.curve.duration, 400):
            assert abs(out.yaw_rate(t)) <= p.psi_dot_max + 1e-6
            assert abs(out.yaw_acceleration(t)) <= p.psi_ddot_max + 1e-6

    def test_objective_not_worse_than_linear_interpolant(self):
        rng = np.random.default_rng(4)
        for trial in range(8):
            traj = straight_trajectory(segments=3)
            fpos = rng.uniform([0, -2, 0.2], [4, 4, 0.8], size=(3, 3))
            fm = FeatureMap(fpos, rng.uniform(0.3, 1.5, 3), [0, 1, 2])
            vis_ids = set(rng.choice(3, size=2, replace=False).tolist())

            def vis(p, y):
                return {int(i): float(fm.score_of({i})) for i in vis_ids}

            inp = make_input(traj, fm=fm, goal_yaw=float(rng.uniform(-1, 1)),
                             tau_cov=0.5)
            out = optimize_yaw(inp, vis)
            yaws, sets = covisibility_sampling(inp, vis)
            times = [seg.duration for seg in out.curve.segments]
            linear = yaw_curve_from(yaws, times)

            def objective(curve):
                return (perceptual_cost(curve, traj, sets, fm)
                        + inp.params.lambda_psi * smoothness_cost(curve))

            assert objective(out.curve) <= objective(linear) + 1e-9

    def test_no_yaw_opt_mode_linear(self):
        traj = straight_trajectory(segments=2)
        inp = make_input(traj, goal_yaw=0.8, mode="no_yaw_opt")
        out = optimize_yaw(inp, lambda p, y: {})
        yaws, _ = covisibility_sampling(inp, lambda p, y: {})
        starts = out.curve.segment_start_times()
        for j, seg in enumerate(out.curve.segments):
            for tau in np.linspace(0, 1, 7):
                want = yaws[j] + (yaws[j + 1] - yaws[j]) * tau
                got = out.curve.eval(starts[j] + tau * seg.duration)[0]
                assert got == pytest.approx(want, abs=1e-9)

    def test_duration_dilation_reported(self):
        # 0.5 s segment asked to turn 3 rad: needs dilation to respect 1.5 rad/s
        params = PlannerParams()
        boxes = [Box([-5.0, -5, -5], [5.0, 5, 5])] * 2
        start = BoundaryState.at_rest([0.0, 0.0, 0.0])
        traj = optimize_position(Corridor(boxes), [0.6, 0.6], start,
                                 [0.2, 0.0, 0.0], params)
        inp = make_input(traj, start_yaw=0.0, goal_yaw=3.0)
        out = optimize_yaw(inp, lambda p, y: {})
        assert out.dilated
        for t in np.linspace(0, out.curve.duration, 300):
            assert abs(out.yaw_rate(t)) <= params.psi_dot_max + 1e-6
        assert out.yaw(out.curve.end_time) == pytest.approx(wrap_angle(3.0), abs=1e-6)

    def test_convexity_witness(self):
        """Total objective Hessian over control points is PSD."""
        rng = np.random.default_rng(5)
        traj = straight_trajectory(segments=2)
        fm = FeatureMap([[1.5, 3.0, 0.5]], [1.0], [0])
        sets = [{0: 1.0}, {0: 1.0}]
        times = [seg.duration for seg in traj.curve.segments]
        lam = 0.1
        nv = 9  # shared joint counted once
        eps = 1e-4

        def build(v):
            a = v[:5][:, None]
            b = v[4:][:, None]
            return PiecewiseBezier([BezierSegment(a, times[0]),
                                    BezierSegment(b, times[1])], 0.0)

        def objective(v):
            c = build(v)
            return perceptual_cost(c, traj, sets, fm) + lam * smoothness_cost(c)

        x = rng.normal(size=nv)
        hess = np.zeros((nv, nv))
        for i in range(nv):
            for j in range(nv):
                xpp = x.copy(); xpp[i] += eps; xpp[j] += eps
                xpm = x.copy(); xpm[i] += eps; xpm[j] -= eps
                xmp = x.copy(); xmp[i] -= eps; xmp[j] += eps
                xmm = x.copy(); xmm[i] -= eps; xmm[j] -= eps
                hess[i, j] = (objective(xpp) - objective(xpm)
                              - objective(xmp) + objective(xmm)) / (4 * eps * eps)
        assert np.min(np.linalg.eigvalsh(0.5 * (hess + hess.T))) >= -1e-6
