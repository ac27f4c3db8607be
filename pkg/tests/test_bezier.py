import math

import numpy as np
import pytest

from paex.bezier import (
    BezierSegment,
    PiecewiseBezier,
    bernstein,
    bernstein_row,
    derivative_cost_matrix,
    snap_cost_matrix,
)


def de_casteljau(cps, tau):
    """Independent recursive evaluation oracle."""
    pts = np.array(cps, dtype=float)
    while len(pts) > 1:
        pts = (1 - tau) * pts[:-1] + tau * pts[1:]
    return pts[0]


class TestBernstein:
    def test_endpoint_interpolation(self):
        assert bernstein(0, 3, 0.0) == 1.0
        assert bernstein(3, 3, 1.0) == 1.0
        assert bernstein(1, 3, 0.0) == 0.0

    def test_direct_value(self):
        # C(2,1) * 0.5 * 0.5
        assert bernstein(1, 2, 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_out_of_range_index(self):
        with pytest.raises(ValueError):
            bernstein(4, 3, 0.5)
        with pytest.raises(ValueError):
            bernstein(-1, 3, 0.5)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            tau = float(rng.random())
            assert abs(sum(bernstein(k, n, tau) for k in range(n + 1)) - 1.0) <= 1e-12


class TestSegment:
    def test_constant_curve(self):
        seg = BezierSegment(np.tile([1.0, -2.0, 0.5], (4, 1)), 2.0)
        for t in [0.0, 0.7, 2.0]:
            assert np.allclose(seg.eval(t), [1.0, -2.0, 0.5], atol=1e-14)

    def test_endpoints(self):
        cps = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]])
        seg = BezierSegment(cps, 1.5)
        assert np.allclose(seg.eval(0.0), cps[0])
        assert np.allclose(seg.eval(1.5), cps[-1])

    def test_matches_de_casteljau(self):
        rng = np.random.default_rng(1)
        cps = rng.normal(size=(4, 3))
        seg = BezierSegment(cps, 1.0)
        assert np.allclose(seg.eval_tau(0.3), de_casteljau(cps, 0.3), atol=1e-12)

    def test_outside_span_raises(self):
        seg = BezierSegment(np.zeros((3, 2)), 1.0)
        with pytest.raises(ValueError):
            seg.eval(1.5)
        with pytest.raises(ValueError):
            seg.eval(-0.1)

    def test_convex_hull_box(self):
        rng = np.random.default_rng(2)
        cps = rng.normal(size=(6, 3))
        seg = BezierSegment(cps, 1.0)
        lo, hi = cps.min(axis=0), cps.max(axis=0)
        for tau in np.linspace(0, 1, 40):
            v = seg.eval_tau(tau)
            assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)


class TestDerivative:
    def test_constant_to_zero(self):
        seg = BezierSegment(np.full((4, 2), 3.0), 1.0)
        d = seg.derivative()
        assert np.allclose(d.control_points, 0.0, atol=1e-14)

    def test_linear_segment(self):
        a, b = np.array([0.0, 1.0]), np.array([2.0, -3.0])
        seg = BezierSegment(np.array([a, b]), 4.0)
        d = seg.derivative()
        assert np.allclose(d.eval(2.0), (b - a) / 4.0, atol=1e-14)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(3)
        seg = BezierSegment(rng.normal(size=(6, 3)), 1.7)
        d = seg.derivative()
        eps = 1e-6
        for t in np.linspace(2 * eps, 1.7 - 2 * eps, 20):
            fd = (seg.eval(t + eps) - seg.eval(t - eps)) / (2 * eps)
            assert np.allclose(d.eval(t), fd, atol=1e-7)

    def test_second_derivative_consistency(self):
        rng = np.random.default_rng(4)
        seg = BezierSegment(rng.normal(size=(6, 2)), 0.9)
        dd = seg.derivative().derivative()
        eps = 1e-5
        for t in np.linspace(2 * eps, 0.9 - 2 * eps, 10):
            fd = (seg.eval(t + eps) - 2 * seg.eval(t) + seg.eval(t - eps)) / eps**2
            assert np.allclose(dd.eval(t), fd, atol=1e-4 * (1 + np.abs(fd).max()))


class TestPiecewise:
    def test_joint_sharing_required(self):
        s1 = BezierSegment(np.array([[0.0], [1.0]]), 1.0)
        s2 = BezierSegment(np.array([[2.0], [3.0]]), 1.0)
        with pytest.raises(ValueError):
            PiecewiseBezier([s1, s2])

    def test_eval_across_segments(self):
        s1 = BezierSegment(np.array([[0.0], [1.0]]), 1.0)
        s2 = BezierSegment(np.array([[1.0], [3.0]]), 2.0)
        pw = PiecewiseBezier([s1, s2], start_time=5.0)
        assert pw.eval(5.0) == pytest.approx(0.0)
        assert pw.eval(6.0) == pytest.approx(1.0)
        assert pw.eval(8.0) == pytest.approx(3.0)
        assert pw.duration == pytest.approx(3.0)
        with pytest.raises(ValueError):
            pw.eval(4.0)


class TestSnapCost:
    def test_cubic_zero(self):
        assert np.allclose(snap_cost_matrix(3, 1.0), 0.0)

    def test_cubic_nullspace(self):
        h = snap_cost_matrix(7, 2.0)
        # control points of any cubic expressed in the order-7 basis
        taus = np.arange(8) / 7.0
        for coeffs in [(1, 0, 0, 0), (0, 1, 0, 0), (1, -2, 3, 0.5)]:
            # degree elevation: sample-based fit of the cubic in Bernstein-7
            a = np.array([bernstein_row(7, t) for t in np.linspace(0, 1, 8)])
            vals = np.polyval(coeffs, np.linspace(0, 1, 8))
            c = np.linalg.solve(a, vals)
            assert c @ h @ c == pytest.approx(0.0, abs=1e-8)

    def test_psd(self):
        h = snap_cost_matrix(7, 0.8)
        w = np.linalg.eigvalsh(h)
        assert w.min() >= -1e-6 * max(1.0, w.max())

    @pytest.mark.parametrize("n,duration", [(5, 1.0), (7, 2.3)])
    def test_matches_quadrature(self, n, duration):
        rng = np.random.default_rng(5)
        c = rng.normal(size=n + 1)
        seg = BezierSegment(c[:, None], duration)
        d4 = seg.derivative().derivative().derivative().derivative()
        # high-order Gauss-Legendre quadrature oracle
        nodes, weights = np.polynomial.legendre.leggauss(30)
        ts = 0.5 * duration * (nodes + 1.0)
        val = 0.5 * duration * np.sum(weights * np.array([d4.eval(t)[0] ** 2 for t in ts]))
        h = snap_cost_matrix(n, duration)
        assert c @ h @ c == pytest.approx(val, rel=1e-8)

    def test_rate_cost_linear(self):
        # linear yaw a -> b over T has integral (b-a)^2 / T
        a, b, t = 0.3, 1.7, 2.5
        c = np.linspace(a, b, 5)
        h = derivative_cost_matrix(4, t, 1)
        assert c @ h @ c == pytest.approx((b - a) ** 2 / t, rel=1e-12)
