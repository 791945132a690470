import math

import numpy as np
import pytest

from geom.connection import covderiv_vector_field_at, vector_field
from geom.errors import MaxSteps, OutOfChart, OutOfInterval, SingularFrame
from geom.linalg import orthonormal_basis
from geom.manifold import metric_at, preset
from geom.rng import Lcg64
from geom.transport import (
    AnalyticCurve,
    NumericCurve,
    SolverConfig,
    Trajectory,
    covderiv_along_curve,
    curve,
    curve_length,
    curve_state,
    family,
    family_covderivs,
    family_velocity_covderivs,
    geodesic_shoot,
    parallel_frame,
    parallel_transport,
    speed_at,
    transport_limit_covderiv,
    transport_matrix,
)
from oracles import sphere_latitude_angle

from conftest import interior_points

TWO_PI = 2 * math.pi


def latitude(spec, theta0):
    return curve(spec, [repr(theta0), "t"], (0.0, TWO_PI))


def orthonormal_angle(v, theta0):
    """Angle of a tangent vector at latitude theta0 in the frame (d_theta, d_phi / sin theta0)."""
    return math.atan2(v[1] * math.sin(theta0), v[0])


def random_segment(spec, rng, p, scale=0.5):
    d = scale * np.array([rng.normal() for _ in range(spec.dim)])
    while not spec.contains(p + d):
        d *= 0.5
    exprs = [f"({float(p[i])!r}) + ({float(d[i])!r})*t" for i in range(spec.dim)]
    exprs[0] += " + 0.1*sin(3*t)"
    return AnalyticCurve(exprs, (0.0, 1.0))


class TestCurves:
    def test_straight_line(self):
        c = AnalyticCurve(["t", "0"], (0.0, 5.0))
        p, v = curve_state(c, 2.0)
        assert list(p) == [2.0, 0.0] and list(v) == [1.0, 0.0]

    def test_latitude(self, sphere):
        p, v = curve_state(latitude(sphere, math.pi / 3), 1.0, sphere)
        np.testing.assert_allclose(p, [math.pi / 3, 1.0])
        assert list(v) == [0.0, 1.0]

    def test_out_of_interval(self, sphere):
        with pytest.raises(OutOfInterval):
            curve_state(latitude(sphere, 1.0), 7.0)

    def test_out_of_chart(self, halfplane):
        c = curve(halfplane, ["0", "1 - t"], (0.0, 2.0))
        with pytest.raises(OutOfChart):
            curve_state(c, 1.5, halfplane)

    def test_parameters_available(self):
        spec = preset("sphere", r=2.0)
        c = curve(spec, ["r/2", "t"], (0.0, 1.0))
        assert curve_state(c, 0.0)[0][0] == 1.0

    def test_numeric_curve_hermite(self, sphere):
        traj = geodesic_shoot(sphere, [1.0, 0.0], [0.3, 1.0], (0.0, 2.0), SolverConfig(dt=0.01))
        nc = NumericCurve(traj)
        p, v = nc.state(traj.t[37])
        np.testing.assert_allclose(p, traj.x[37], atol=1e-14)
        np.testing.assert_allclose(v, traj.v[37], atol=1e-12)
        # between samples the cubic interpolant is O(h^4) accurate
        fine = geodesic_shoot(sphere, [1.0, 0.0], [0.3, 1.0], (0.0, 2.0), SolverConfig(dt=0.005))
        p, v = nc.state(fine.t[75])
        np.testing.assert_allclose(p, fine.x[75], atol=1e-8)
        np.testing.assert_allclose(v, fine.v[75], atol=1e-5)


class TestCovariantDerivativeAlongCurve:
    def test_flat_constant(self, minkowski):
        c = curve(minkowski, ["t", "t^2", "sin(t)", "1"], (0.0, 1.0))
        assert not np.any(covderiv_along_curve(minkowski, c, ["1", "2", "3", "4"], 0.5).comp)

    def test_extendible_field(self, sphere):
        """V = X(c(t)) gives D V = nabla_{c'} X."""
        c = curve(sphere, ["1 + 0.3*sin(t)", "2*t"], (0.0, 3.0))
        x_exprs = ["cos(phi)*theta", "sin(theta)^2 + phi"]
        X = vector_field(sphere, x_exprs)
        v_exprs = [e.replace("theta", "(1 + 0.3*sin(t))").replace("phi", "(2*t)") for e in x_exprs]
        rng = Lcg64(70)
        for _ in range(20):
            t = rng.uniform(0.0, 3.0)
            p, vel = c.state(t)
            lhs = covderiv_along_curve(sphere, c, v_exprs, t).comp
            rhs = covderiv_vector_field_at(sphere, vel, X, p).comp
            assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_product_rule(self, sphere):
        c = curve(sphere, ["1.2", "t"], (0.0, 2.0))
        w = ["cos(t)", "t^2"]
        f, df = "exp(t)", lambda t: math.exp(t)
        fw = [f"({f})*({e})" for e in w]
        for t in (0.3, 1.1, 1.7):
            lhs = covderiv_along_curve(sphere, c, fw, t).comp
            wv = np.array([math.cos(t), t * t])
            rhs = df(t) * wv + math.exp(t) * covderiv_along_curve(sphere, c, w, t).comp
            assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_metric_compatibility(self, schwarzschild):
        """d/dt <V, W> = <DV, W> + <V, DW>."""
        c = curve(schwarzschild, ["t", "5 + sin(t)", "1 + 0.2*t", "t^2"], (0.0, 1.0))
        V, W = ["1", "t", "cos(t)", "0.5"], ["t^2", "1", "0", "sin(t)"]

        def inner(t):
            p, _ = c.state(t)
            v = np.array([1.0, t, math.cos(t), 0.5])
            w = np.array([t * t, 1.0, 0.0, math.sin(t)])
            return v @ metric_at(schwarzschild, p) @ w

        t, h = 0.4, 1e-5
        lhs = (inner(t + h) - inner(t - h)) / (2 * h)
        p, _ = c.state(t)
        g = metric_at(schwarzschild, p)
        v = np.array([1.0, t, math.cos(t), 0.5])
        w = np.array([t * t, 1.0, 0.0, math.sin(t)])
        rhs = covderiv_along_curve(schwarzschild, c, V, t).comp @ g @ w + v @ g @ covderiv_along_curve(schwarzschild, c, W, t).comp
        assert abs(lhs - rhs) <= 1e-5


class TestParallelTransport:
    def test_flat_identity(self, minkowski):
        c = curve(minkowski, ["t", "sin(t)", "t^2", "cos(t)"], (0.0, 2.0))
        v = np.array([1.0, -2.0, 0.5, 3.0])
        assert np.array_equal(parallel_transport(minkowski, c, 0.0, 2.0, v, SolverConfig(dt=0.01)), v)

    def test_empty_interval(self, sphere):
        v = np.array([0.3, 0.7])
        assert np.array_equal(parallel_transport(sphere, latitude(sphere, 1.0), 1.0, 1.0, v), v)

    def test_latitude_loop_pi_over_3(self, sphere):
        out = parallel_transport(sphere, latitude(sphere, math.pi / 3), 0.0, TWO_PI, [1.0, 0.0], SolverConfig(dt=1e-4))
        np.testing.assert_allclose(out, [-1.0, 0.0], atol=1e-6)

    def test_latitude_loop_angle(self, sphere):
        for theta0 in (0.5, math.pi / 4, 1.2, 2.0):
            out = parallel_transport(sphere, latitude(sphere, theta0), 0.0, TWO_PI, [1.0, 0.0], SolverConfig(dt=1e-3))
            ang = orthonormal_angle(out, theta0)
            expected = sphere_latitude_angle(theta0)
            assert abs(math.remainder(ang - expected, TWO_PI)) <= 1e-8

    def test_closed_form_along_loop(self, sphere):
        # in the orthonormal frame the vector turns at rate -cos(theta0)
        theta0 = 1.0
        c = latitude(sphere, theta0)
        for t in (0.5, 2.0, 4.5):
            out = parallel_transport(sphere, c, 0.0, t, [1.0, 0.0], SolverConfig(dt=1e-3))
            a = -math.cos(theta0) * t
            np.testing.assert_allclose(out, [math.cos(a), math.sin(a) / math.sin(theta0)], atol=1e-10)

    def test_inverse_and_composition(self, any_preset):
        rng = Lcg64(71)
        cfg = SolverConfig(dt=1e-3)
        for p in interior_points(any_preset, 4, rng):
            c = random_segment(any_preset, rng, p)
            fwd = transport_matrix(any_preset, c, 0.0, 1.0, cfg)
            back = transport_matrix(any_preset, c, 1.0, 0.0, cfg)
            assert np.max(np.abs(back @ fwd - np.eye(any_preset.dim))) <= 1e-8
            first = transport_matrix(any_preset, c, 0.0, 0.4, cfg)
            second = transport_matrix(any_preset, c, 0.4, 1.0, cfg)
            assert np.max(np.abs(second @ first - fwd)) <= 1e-8

    def test_isometry(self, any_preset):
        rng = Lcg64(72)
        cfg = SolverConfig(dt=1e-4)
        m = any_preset.dim
        for p in interior_points(any_preset, 5, rng):
            c = random_segment(any_preset, rng, p)
            v, w = rng.normals(m), rng.normals(m)
            pv = parallel_transport(any_preset, c, 0.0, 1.0, v, cfg)
            pw = parallel_transport(any_preset, c, 0.0, 1.0, w, cfg)
            g0 = metric_at(any_preset, c.state(0.0)[0])
            g1 = metric_at(any_preset, c.state(1.0)[0])
            assert abs(pv @ g1 @ pw - v @ g0 @ w) <= 1e-7

    def test_rk4_order(self, sphere):
        theta0 = math.pi / 4
        ang = sphere_latitude_angle(theta0)
        exact = np.array([math.cos(ang), math.sin(ang) / math.sin(theta0)])
        c = latitude(sphere, theta0)
        errs = [np.linalg.norm(parallel_transport(sphere, c, 0.0, TWO_PI, [1.0, 0.0], SolverConfig(dt)) - exact)
                for dt in (0.1, 0.05, 0.025)]
        for a, b in zip(errs, errs[1:]):
            assert 12 <= a / b <= 20

    def test_leaves_chart(self, halfplane):
        c = curve(halfplane, ["0", "1 - t"], (0.0, 2.0))
        with pytest.raises(OutOfChart):
            parallel_transport(halfplane, c, 0.0, 2.0, [1.0, 0.0])

    def test_max_steps(self, sphere):
        with pytest.raises(MaxSteps):
            parallel_transport(sphere, latitude(sphere, 1.0), 0.0, 1.0, [1.0, 0.0], SolverConfig(dt=1e-3, max_steps=10))

    def test_interval_check(self, sphere):
        with pytest.raises(OutOfInterval):
            parallel_transport(sphere, latitude(sphere, 1.0), 0.0, 7.0, [1.0, 0.0])


class TestParallelFrame:
    def test_flat_constant(self):
        spec = preset("semi_euclidean", dim=2, index=1)
        c = curve(spec, ["t", "t^2"], (0.0, 1.0))
        fr = parallel_frame(spec, c, 0.0, np.eye(2), SolverConfig(dt=0.1))
        assert len(fr.t) == 11 and fr.t[-1] == 1.0
        assert all(np.array_equal(f, np.eye(2)) for f in fr.frames)

    def test_singular(self, sphere):
        with pytest.raises(SingularFrame):
            parallel_frame(sphere, latitude(sphere, 1.0), 0.0, np.array([[1.0, 2.0], [1.0, 2.0]]))

    def test_latitude_rotation(self, sphere):
        theta0 = 1.1
        b, _ = orthonormal_basis(metric_at(sphere, [theta0, 0.0]))
        fr = parallel_frame(sphere, latitude(sphere, theta0), 0.0, b, SolverConfig(dt=1e-3))
        end = fr.frames[-1]
        first = orthonormal_angle(end[:, 0], theta0) - orthonormal_angle(b[:, 0], theta0)
        assert abs(math.remainder(first - sphere_latitude_angle(theta0), TWO_PI)) <= 1e-8

    def test_orthonormal_preserved(self, any_preset):
        rng = Lcg64(73)
        p = interior_points(any_preset, 1, rng)[0]
        c = random_segment(any_preset, rng, p)
        b, eps = orthonormal_basis(metric_at(any_preset, p))
        fr = parallel_frame(any_preset, c, 0.0, b, SolverConfig(dt=1e-3))
        pts, _ = c.states(fr.t)
        for x, f in zip(pts, fr.frames):
            assert np.max(np.abs(f.T @ metric_at(any_preset, x) @ f - np.diag(eps))) <= 1e-7


class TestGeodesics:
    def test_flat_exact_line(self, minkowski):
        p = np.array([0.5, -1.0, 2.0, 0.0])
        v = np.array([1.0, 0.25, -0.5, 2.0])
        tr = geodesic_shoot(minkowski, p, v, (0.0, 2.0), SolverConfig(dt=0.25))
        assert tr.termination == "completed"
        np.testing.assert_array_equal(tr.x, p + tr.t[:, None] * v)
        assert np.all(tr.v == v)

    def test_equator(self, sphere):
        tr = geodesic_shoot(sphere, [math.pi / 2, 0.0], [0.0, 1.0], (0.0, 5.0), SolverConfig(dt=1e-2))
        np.testing.assert_allclose(tr.x[:, 0], math.pi / 2, atol=1e-15)
        np.testing.assert_allclose(tr.x[:, 1], tr.t, atol=1e-9)

    def test_halfplane_vertical(self, halfplane):
        tr = geodesic_shoot(halfplane, [0.0, 1.0], [0.0, 1.0], (0.0, 1.0), SolverConfig(dt=1e-3))
        np.testing.assert_allclose(tr.x[-1], [0.0, math.e], atol=1e-6)
        c = NumericCurve(tr)
        for t in (0.1, 0.5, 0.9):
            assert speed_at(halfplane, c, t) == pytest.approx(1.0, abs=1e-6)

    def test_constant_speed(self, any_preset):
        rng = Lcg64(74)
        for p in interior_points(any_preset, 3, rng, margin=0.3):
            u = rng.normals(any_preset.dim)
            tr = geodesic_shoot(any_preset, p, u, (0.0, 3.0), SolverConfig(dt=1e-3))
            s = np.einsum("ni,nij,nj->n", tr.v, np.array([metric_at(any_preset, x) for x in tr.x]), tr.v)
            assert np.max(np.abs(s - s[0])) <= 1e-6 * abs(s[0])

    def test_great_circle_order(self, sphere):
        a, b, T = 0.6, 0.8, 2.0
        x = math.cos(T) * np.array([1.0, 0, 0]) + math.sin(T) * np.array([0.0, b, -a])
        exact = np.array([math.acos(x[2]), math.atan2(x[1], x[0])])
        errs = [np.linalg.norm(geodesic_shoot(sphere, [math.pi / 2, 0.0], [a, b], (0.0, T), SolverConfig(dt)).x[-1] - exact)
                for dt in (0.1, 0.05, 0.025)]
        for e1, e2 in zip(errs, errs[1:]):
            assert 12 <= e1 / e2 <= 20

    def test_backward(self, sphere):
        cfg = SolverConfig(dt=1e-3)
        fwd = geodesic_shoot(sphere, [1.0, 0.0], [0.4, 1.0], (0.0, 1.0), cfg)
        back = geodesic_shoot(sphere, fwd.x[-1], fwd.v[-1], (1.0, 0.0), cfg)
        assert back.t[-1] == 0.0 and np.all(np.diff(back.t) < 0)
        np.testing.assert_allclose(back.x[-1], [1.0, 0.0], atol=1e-10)

    def test_radial_plunge_escapes(self, schwarzschild):
        tr = geodesic_shoot(schwarzschild, [0.0, 10.0, math.pi / 2, 0.0], [1.0, -0.5, 0.0, 0.0], (0.0, 100.0), SolverConfig(dt=1e-2))
        assert tr.termination == "domain_escape"
        assert tr.t_exit == tr.t[-1] < 100.0
        assert np.all(tr.x[:, 1] > 2.1)

    def test_max_steps(self, sphere):
        tr = geodesic_shoot(sphere, [1.0, 0.0], [0.0, 1.0], (0.0, 1.0), SolverConfig(dt=0.01, max_steps=10))
        assert tr.termination == "max_steps" and len(tr) == 11

    def test_start_outside(self, sphere):
        with pytest.raises(OutOfChart):
            geodesic_shoot(sphere, [0.0, 0.0], [0.0, 1.0], (0.0, 1.0))

    def test_csv(self):
        tr = Trajectory(np.array([0.0, 0.5]), np.array([[1.0, 2.0], [1.5, 2.0]]), np.array([[1.0, 0.0], [1.0, 0.1]]),
                        "domain_escape", 0.5)
        lines = tr.to_csv().splitlines()
        assert lines[0] == "t,x1,x2,v1,v2"
        assert lines[2] == "0.5,1.5,2,1,0.10000000000000001"
        assert lines[-1] == "# termination=domain_escape t_exit=0.5"


class TestLength:
    def test_flat(self):
        spec = preset("semi_euclidean", dim=2, index=0)
        assert curve_length(spec, AnalyticCurve(["t", "0"], (0.0, 3.0)), 0.0, 3.0, 2) == pytest.approx(3.0, abs=1e-15)

    def test_equator(self):
        spec = preset("sphere", r=2.0)
        c = curve(spec, ["pi/2", "t"], (0.0, TWO_PI))
        assert curve_length(spec, c, 0.0, TWO_PI, 7) == pytest.approx(4 * math.pi, abs=1e-8)
        assert speed_at(spec, c, 1.0) == pytest.approx(2.0)

    def test_simpson_accuracy(self, sphere):
        # length of a latitude arc is sin(theta0) * span
        c = curve(sphere, ["1 + 0*t", "t^2"], (0.0, 2.0))
        assert curve_length(sphere, c, 0.0, 2.0, 100) == pytest.approx(4 * math.sin(1.0), abs=1e-12)

    def test_out_of_interval(self, sphere):
        with pytest.raises(OutOfInterval):
            curve_length(sphere, latitude(sphere, 1.0), 0.0, 10.0)


class TestTransportLimit:
    def test_flat_exact(self):
        spec = preset("semi_euclidean", dim=2, index=0)
        c = AnalyticCurve(["t", "0"], (-1.0, 1.0))
        out = transport_limit_covderiv(spec, c, ["t", "1"], 0.0, 0.01)
        np.testing.assert_allclose(out.comp, [1.0, 0.0], atol=1e-13)

    def test_first_order(self, sphere):
        c = curve(sphere, ["1 + 0.4*sin(t)", "t"], (0.0, 2.0))
        V = ["cos(t)", "t^2 - 1"]
        exact = covderiv_along_curve(sphere, c, V, 1.0).comp
        for h in (1e-2, 1e-3, 1e-4):
            err = np.linalg.norm(transport_limit_covderiv(sphere, c, V, 1.0, h).comp - exact)
            assert err <= 5 * h

    def test_parallel_field(self, sphere):
        # a field transported along the curve has quotient O(h)
        c = latitude(sphere, 1.0)
        v1 = parallel_transport(sphere, c, 0.0, 1.01, [0.5, 1.0], SolverConfig(dt=1e-4))
        v0 = parallel_transport(sphere, c, 0.0, 1.0, [0.5, 1.0], SolverConfig(dt=1e-4))
        moved = parallel_transport(sphere, c, 1.01, 1.0, v1, SolverConfig(dt=1e-4))
        assert np.linalg.norm((moved - v0) / 0.01) <= 1e-6


class TestFamilies:
    def test_flat_constant(self, minkowski):
        fam = family(minkowski, ["s", "t", "s*t", "1"], (-1, 1), (-1, 1))
        d1, d2 = family_covderivs(minkowski, fam, ["1", "2", "3", "4"], 0.2, 0.3)
        assert not np.any(d1.comp) and not np.any(d2.comp)

    def test_acceleration_symmetry(self, sphere):
        fam = family(sphere, ["1 + 0.3*s*t + 0.1*t^2", "t + s^2 - s*t"], (-1, 1), (-1, 1))
        rng = Lcg64(75)
        for _ in range(10):
            s, t = rng.uniform(-1, 1), rng.uniform(-1, 1)
            a, b = family_velocity_covderivs(sphere, fam, s, t)
            assert np.max(np.abs(a - b)) <= 1e-9

    def test_accelerations_differ_in_general(self, sphere):
        # the two accelerations along the coordinate curves are not the same vector
        fam = family(sphere, ["1 + 0.3*s*t + 0.1*t^2", "t + s^2 - s*t"], (-1, 1), (-1, 1))
        _, d2_dt = family_covderivs(sphere, fam, ["0.3*s + 0.2*t", "1 - s"], 0.2, 0.1)
        d1_ds, _ = family_covderivs(sphere, fam, ["0.3*t", "2*s - t"], 0.2, 0.1)
        assert np.max(np.abs(d2_dt.comp - d1_ds.comp)) > 1e-3

    def test_matches_curve_derivative(self, sphere):
        fam = family(sphere, ["1 + 0.3*s*t", "t + s^2"], (-1, 1), (-1, 1))
        W = ["s*t", "s^2 + t"]
        s0 = 0.4
        c = fam.longitudinal_curve(s0)
        d1, d2 = family_covderivs(sphere, fam, W, s0, 0.3)
        along = covderiv_along_curve(sphere, c, [w.replace("s", repr(s0)) for w in W], 0.3)
        np.testing.assert_allclose(d2.comp, along.comp, atol=1e-13)

    def test_out_of_rectangle(self, sphere):
        fam = family(sphere, ["1 + s", "t"], (0, 0.1), (0, 0.1))
        with pytest.raises(OutOfInterval):
            family_covderivs(sphere, fam, ["1", "0"], 0.5, 0.0)
