import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from affgeom.atlas import HOPF_DECK, builtin_manifold
from affgeom.connection import levi_civita, metric_interpolate
from affgeom.transport import (
    COMPLETED,
    ESCAPED,
    Curve,
    Segment,
    TransportError,
    bump_circle_loop,
    build_parallel_frame,
    geodesic_integrate,
    holonomy,
    holonomy_map_experiment,
    hopf_core_loop,
    latitude_loop,
    parallel_transport,
    random_loops,
    rectangle_loop,
    straight_curve,
    transport_pair,
)

TOL = 1e-9


def latitude_oracle(lc, theta0):
    # along phi = s the transport ODE has the constant matrix -Gamma(c)(d_phi, .)
    A = -lc.gamma("S", np.array([theta0, 0.0]))[:, 1, :]
    return expm(2 * math.pi * A)


def rotation(angle):
    return np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])


def orthonormal_holonomy(H, theta0):
    L = np.diag([1.0, math.sin(theta0)])
    return L @ H @ np.linalg.inv(L)


# --------------------------------------------------------------------------
# curves


def test_generated_loops_are_closed_and_consistent(torus):
    for lp in random_loops("U", [3.0, 3.0], 30, seed=1):
        lp.validate(torus.atlas)
        assert lp.velocity_defect() <= 1e-6


def test_hopf_core_loop_validates(hopf):
    lp = hopf_core_loop(hopf)
    lp.validate(hopf.atlas)
    lp.reversed().validate(hopf.atlas)
    assert lp.velocity_defect() <= 1e-6


def test_discontinuous_curve_rejected(torus):
    a = straight_curve("U", [1.0, 1.0], [2.0, 1.0]).segments[0]
    b = straight_curve("U", [2.5, 1.0], [3.0, 1.0]).segments[0]
    with pytest.raises(TransportError):
        Curve((a, b)).validate(torus.atlas)


def test_curve_leaving_chart_rejected():
    box = builtin_manifold("open_box_2d")
    with pytest.raises(TransportError):
        parallel_transport(box.affine, straight_curve("B", [0.5, 0.5], [1.5, 0.5]), [1.0, 0.0])
    with pytest.raises(TransportError):
        parallel_transport(box.affine, straight_curve("Q", [0.5, 0.5], [0.6, 0.5]), [1.0, 0.0])


def test_open_loop_rejected(torus):
    c = Curve((straight_curve("U", [1.0, 1.0], [2.0, 1.0]).segments[0],), closed=True)
    with pytest.raises(TransportError):
        holonomy(torus.affine, c)


def test_empty_segment_rejected():
    with pytest.raises(ValueError):
        Segment("U", 1.0, 1.0, lambda s: s, lambda s: s)


# --------------------------------------------------------------------------
# parallel transport and holonomy


def test_flat_transport_is_identity(torus):
    v = np.array([0.3, -1.2])
    for lp in random_loops("U", [2.0, 4.0], 5, seed=2):
        np.testing.assert_array_equal(parallel_transport(torus.affine, lp, v), v)


def test_latitude_holonomy_matches_matrix_exponential(sphere_lc):
    for theta0 in (0.4, math.pi / 3, 1.2, math.pi / 2, 2.5):
        H = holonomy(sphere_lc, latitude_loop(theta0), TOL).matrix
        np.testing.assert_allclose(H, latitude_oracle(sphere_lc, theta0), atol=1e-7)


def test_latitude_pi_over_three_rotates_by_pi(sphere_lc):
    H = holonomy(sphere_lc, latitude_loop(math.pi / 3), TOL).matrix
    R = orthonormal_holonomy(H, math.pi / 3)
    np.testing.assert_allclose(R, rotation(math.pi), atol=1e-6)


def test_latitude_rotation_angle(sphere, sphere_lc):
    for theta0 in (0.3, 0.9, 1.4):
        el = holonomy(sphere_lc, latitude_loop(theta0), TOL)
        want = math.remainder(2 * math.pi * (1 - math.cos(theta0)), 2 * math.pi)
        assert abs(math.remainder(el.rotation_angle(sphere.metric) - want, 2 * math.pi)) <= 1e-6


def test_equator_holonomy_is_identity(sphere_lc):
    H = holonomy(sphere_lc, latitude_loop(math.pi / 2), TOL)
    assert H.distance_to_identity() <= 1e-6


def test_hopf_core_loop_holonomy(hopf):
    H = holonomy(hopf.affine, hopf_core_loop(hopf)).matrix
    # oracle: trivial in-chart transport composed with the deck jacobian I / lambda
    np.testing.assert_allclose(H, np.eye(2) / HOPF_DECK, atol=1e-12)
    Hr = holonomy(hopf.affine, hopf_core_loop(hopf, reverse=True)).matrix
    np.testing.assert_allclose(Hr, np.eye(2) * HOPF_DECK, rtol=1e-12)


def test_holonomy_is_orthogonal_for_levi_civita(sphere, sphere_lc):
    for lp in random_loops("S", [1.3, 2.0], 5, seed=3, max_size=0.8):
        el = holonomy(sphere_lc, lp, TOL)
        assert el.orthogonality_defect(sphere.metric) <= 1e-7


def test_holonomy_of_concatenation_is_product(sphere_lc):
    a, b = random_loops("S", [1.3, 2.0], 2, seed=4, max_size=0.8)
    Ha = holonomy(sphere_lc, a, TOL).matrix
    Hb = holonomy(sphere_lc, b, TOL).matrix
    Hab = holonomy(sphere_lc, a.then(b), TOL).matrix
    np.testing.assert_allclose(Hab, Hb @ Ha, atol=1e-7)


def test_hopf_concatenated_core_loops(hopf):
    lp = hopf_core_loop(hopf)
    two = lp.then(lp)
    two.validate(hopf.atlas)
    np.testing.assert_allclose(holonomy(hopf.affine, two).matrix, np.eye(2) / HOPF_DECK ** 2, rtol=1e-12)
    back = lp.then(hopf_core_loop(hopf, reverse=True))
    np.testing.assert_allclose(holonomy(hopf.affine, back).matrix, np.eye(2), atol=1e-12)


def test_reparametrization_invariance(sphere_lc):
    for lp in random_loops("S", [1.3, 2.0], 3, seed=5, max_size=0.8):
        H = holonomy(sphere_lc, lp, TOL).matrix
        Hs = holonomy(sphere_lc, lp.reparametrized(lambda u: u * u, lambda u: 2 * u), TOL).matrix
        np.testing.assert_allclose(Hs, H, atol=1e-8)


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_transport_linearity(seed, a, b):
    sphere = builtin_manifold("round_sphere_2d")
    lc = levi_civita(sphere.metric)
    rng = np.random.default_rng(seed)
    lp = random_loops("S", [1.4, 3.0], 1, seed=seed, max_size=0.7)[0]
    u, v = rng.normal(size=2), rng.normal(size=2)
    lhs = parallel_transport(lc, lp, a * u + b * v, TOL)
    rhs = a * parallel_transport(lc, lp, u, TOL) + b * parallel_transport(lc, lp, v, TOL)
    scale = max(1.0, np.max(np.abs(lhs)))
    assert np.max(np.abs(lhs - rhs)) <= 10 * TOL * scale


@given(st.integers(0, 10_000))
def test_transport_reversal(seed):
    sphere = builtin_manifold("round_sphere_2d")
    lc = levi_civita(sphere.metric)
    rng = np.random.default_rng(seed)
    start = np.array([rng.uniform(0.6, 2.5), rng.uniform(0, 6)])
    end = start + rng.uniform(-0.4, 0.4, size=2)
    c = straight_curve("S", start, end)
    v = rng.normal(size=2)
    back = parallel_transport(lc, c.reversed(), parallel_transport(lc, c, v, TOL), TOL)
    assert np.max(np.abs(back - v)) <= 10 * TOL * max(1.0, np.max(np.abs(v)))


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_transport_preserves_metric(seed, t):
    for key in ("round_sphere_2d", "flat_torus_2d"):
        m = builtin_manifold(key)
        metric = metric_interpolate(m.metric, m.alternate_metric, t)
        lc = levi_civita(metric)
        cid = m.base_chart
        lp = random_loops(cid, [1.5, 2.0], 1, seed=seed, max_size=0.7)[0]
        seg = lp.segments[0]
        v = np.random.default_rng(seed).normal(size=2)
        w = parallel_transport(lc, Curve((seg,)), v, TOL)
        x0, x1 = seg.point(seg.start), seg.point(seg.end)
        n0 = v @ metric.g(cid, x0) @ v
        n1 = w @ metric.g(cid, x1) @ w
        assert abs(n1 - n0) <= 10 * TOL * max(1.0, n0)


def test_flat_holonomy_trivial_on_random_loops(torus, hopf):
    for lp in random_loops("U", [3.0, 3.0], 100, seed=6):
        assert holonomy(torus.affine, lp).distance_to_identity() <= 1e-6
    for lp in random_loops("A", [1.5, 0.0], 100, seed=7, max_size=1.0):
        assert holonomy(hopf.affine, lp).distance_to_identity() <= 1e-6


def test_parallel_transport_dimension_check(torus):
    with pytest.raises(ValueError):
        parallel_transport(torus.affine, straight_curve("U", [1, 1], [2, 2]), [1.0, 0.0, 0.0])


# --------------------------------------------------------------------------
# transport_pair and the holonomy comparison map


def _torus_d(torus):
    return levi_civita(torus.alternate_metric)


def test_transport_pair_endpoints(torus):
    d = _torus_d(torus)
    lp = bump_circle_loop("U", [3.0, 3.0], 0.8, 0.2, 3)
    a = np.array([0.4, 1.1])
    v, w = transport_pair(lp, d, 0.0, a)
    np.testing.assert_array_equal(v, a)
    v, w = transport_pair(lp, d, 1.0, a)
    np.testing.assert_allclose(v, w, atol=1e-10)
    assert np.max(np.abs(w - a)) > 1e-4


def test_transport_pair_flat_d(torus):
    a = np.array([0.4, 1.1])
    lp = rectangle_loop("U", [3.0, 3.0], 0.5, -0.7)
    for t in (0.0, 0.3, 1.0):
        v, w = transport_pair(lp, torus.affine, t, a)
        np.testing.assert_array_equal(v, a)
        np.testing.assert_array_equal(w, a)


def test_transport_pair_errors(torus, sphere_lc, hopf):
    d = _torus_d(torus)
    with pytest.raises(TransportError):
        transport_pair(straight_curve("U", [1, 1], [2, 2]), d, 0.5, [1.0, 0.0])
    with pytest.raises(TransportError):
        transport_pair(latitude_loop(1.0), sphere_lc, 0.5, [1.0, 0.0])
    with pytest.raises(TransportError):
        transport_pair(hopf_core_loop(hopf), hopf.affine, 0.5, [1.0, 0.0])


def test_holonomy_map_flat_d(torus):
    loops = random_loops("U", [3.0, 3.0], 5, seed=8)
    rep = holonomy_map_experiment(torus.affine, torus.affine, 0.5, loops)
    assert rep.well_defined_pairs == 10 and rep.well_defined_defect == 0.0
    assert rep.injectivity_pairs == 10 and rep.injectivity_defect == 0.0


def test_holonomy_map_t_one(torus):
    d = _torus_d(torus)
    loops = random_loops("U", [3.0, 3.0], 6, seed=9)
    loops.append(loops[2].reparametrized(lambda u: u * u, lambda u: 2 * u))
    rep = holonomy_map_experiment(torus.affine, d, 1.0, loops)
    for a, b in zip(rep.h_dt, rep.h_d):
        np.testing.assert_array_equal(a, b)
    assert rep.well_defined_pairs >= 1 and rep.well_defined_defect <= 1e-8
    assert rep.homomorphism_defect_d <= 1e-8


def test_holonomy_map_generic_t(torus):
    d = _torus_d(torus)
    loops = random_loops("U", [3.0, 3.0], 6, seed=10)
    loops.append(loops[0].reparametrized(lambda u: u * u, lambda u: 2 * u))
    rep = holonomy_map_experiment(torus.affine, d, 0.4, loops)
    np.testing.assert_allclose(rep.h_d[-1], rep.h_d[0], atol=1e-8)
    assert rep.well_defined_pairs >= 1 and rep.well_defined_defect <= 1e-8
    assert rep.injectivity_pairs >= 1 and rep.injectivity_defect <= 1e-8
    assert rep.homomorphism_defect_dt <= 1e-8 and rep.homomorphism_defect_d <= 1e-8
    assert json.dumps(rep.summary())


def test_holonomy_map_requires_common_base(torus):
    d = _torus_d(torus)
    loops = random_loops("U", [3.0, 3.0], 2, seed=11) + random_loops("U", [2.0, 3.0], 1, seed=12)
    with pytest.raises(TransportError):
        holonomy_map_experiment(torus.affine, d, 0.5, loops)


# --------------------------------------------------------------------------
# geodesics


def test_flat_torus_geodesic_reaches_large_horizon(torus):
    rec = geodesic_integrate(torus.affine, ("U", [1.0, 2.0]), [0.006, -0.008], 1e6)
    assert rec.status == COMPLETED
    assert rec.s[-1] == pytest.approx(1e6)
    assert rec.residual_max <= 10 * TOL


@given(st.floats(0.05, 6.2), st.floats(0.05, 6.2), st.floats(0, 2 * math.pi))
def test_flat_torus_geodesics_complete(x, y, angle):
    torus = builtin_manifold("flat_torus_2d")
    rec = geodesic_integrate(torus.affine, ("U", [x, y]), [math.cos(angle), math.sin(angle)], 50.0)
    assert rec.status == COMPLETED
    want = torus.chart("U").wrap(np.array([x, y]) + 50.0 * np.array([math.cos(angle), math.sin(angle)]))
    assert np.max(np.abs(torus.chart("U").displacement(rec.coords[-1], want))) <= 1e-9


def test_hopf_inward_geodesic_escapes(hopf):
    rec = geodesic_integrate(hopf.affine, ("A", [1.0, 0.0]), [-1.0, 0.0], 10.0)
    assert rec.status == ESCAPED
    assert abs(rec.escape_parameter - 1.0) <= 1e-6


@given(st.floats(1.0, HOPF_DECK * 0.99), st.floats(0, 2 * math.pi), st.floats(0.1, 10.0))
def test_hopf_inward_escape_parameter(radius, angle, speed):
    hopf = builtin_manifold("hopf_torus_2d")
    u = np.array([math.cos(angle), math.sin(angle)])
    rec = geodesic_integrate(hopf.affine, ("A", radius * u), -speed * u, 10 * radius / speed)
    assert rec.status == ESCAPED
    assert abs(rec.escape_parameter - radius / speed) <= 1e-5 * radius / speed


def test_hopf_outward_geodesic_uses_deck_transition(hopf):
    rec = geodesic_integrate(hopf.affine, ("A", [1.0, 0.0]), [1.0, 0.3], 2000.0)
    assert rec.status == COMPLETED and rec.transitions >= 1


def test_sphere_equator_geodesic_closes(sphere_lc):
    rec = geodesic_integrate(sphere_lc, ("S", [math.pi / 2, 0.0]), [0.0, 1.0], 2 * math.pi)
    assert rec.status == COMPLETED
    gap = builtin_manifold("round_sphere_2d").chart("S").displacement(rec.coords[-1], [math.pi / 2, 0.0])
    assert np.max(np.abs(gap)) <= 1e-6


def test_sphere_inclined_great_circle(sphere, sphere_lc):
    # oracle: the explicit great circle cos(s) e1 + sin(s) u in R^3
    alpha = 0.6
    u = np.array([0.0, math.cos(alpha), -math.sin(alpha)])
    e1 = np.array([1.0, 0.0, 0.0])
    rec = geodesic_integrate(sphere_lc, ("S", [math.pi / 2, 0.0]), [math.sin(alpha), math.cos(alpha)], 1.2)
    assert rec.status == COMPLETED
    assert rec.residual_max <= 10 * TOL
    for s, x in zip(rec.s, rec.coords):
        want = math.cos(s) * e1 + math.sin(s) * u
        assert np.max(np.abs(sphere.embedding(x) - want)) <= 1e-7


def test_geodesic_input_errors(torus, hopf):
    with pytest.raises(ValueError):
        geodesic_integrate(torus.affine, ("U", [1.0, 1.0]), [1.0, 0.0], 0.0)
    with pytest.raises(TransportError):
        geodesic_integrate(hopf.affine, ("A", [0.0, 0.0]), [1.0, 0.0], 1.0)
    with pytest.raises(TransportError):
        geodesic_integrate(hopf.affine, ("B", [1.0, 0.0]), [1.0, 0.0], 1.0)


def test_geodesic_exports(sphere_lc):
    rec = geodesic_integrate(sphere_lc, ("S", [1.0, 0.5]), [0.1, 0.7], 3.0)
    rows = list(csv.reader(io.StringIO(rec.to_csv())))
    assert rows[0] == ["s", "chart", "x0", "x1", "v0", "v1"]
    assert len(rows) == len(rec.s) + 1
    assert float(rows[-1][0]) == pytest.approx(3.0)
    summary = json.loads(rec.to_json())
    assert summary["status"] == COMPLETED and summary["escape_parameter"] is None


# --------------------------------------------------------------------------
# parallel frame


def test_flat_torus_frame_certificate(torus):
    base = ("U", np.array([3.0, 3.0]))
    loops = random_loops("U", base[1], 100, seed=13)
    rep = build_parallel_frame(torus.affine, base, np.array([[1.0, 0.5], [0.0, 2.0]]), loops)
    assert rep.path_independence_defect <= 1e-10
    assert rep.tree_defect <= 1e-10
    assert rep.coefficient_drift <= 1e-8
    assert rep.certified
    np.testing.assert_allclose(rep.frames, np.broadcast_to(rep.frames[0], rep.frames.shape))


def test_hopf_frame_does_not_globalize(hopf):
    rep = build_parallel_frame(hopf.affine, ("A", [1.0, 0.0]), np.eye(2), [hopf_core_loop(hopf)])
    want = np.linalg.norm(np.eye(2) / HOPF_DECK - np.eye(2), 2)
    assert rep.path_independence_defect == pytest.approx(want, rel=1e-9)
    assert not rep.certified


def test_open_box_frame_defect_zero():
    box = builtin_manifold("open_box_2d")
    loops = random_loops("B", [0.5, 0.5], 10, seed=14, max_size=0.4)
    rep = build_parallel_frame(box.affine, ("B", [0.5, 0.5]), np.eye(2), loops, geodesic_horizon=0.3)
    assert rep.path_independence_defect <= 1e-12 and rep.certified


def test_frame_errors(torus, sphere_lc):
    with pytest.raises(ValueError):
        build_parallel_frame(torus.affine, ("U", [3.0, 3.0]), np.ones((2, 2)))
    with pytest.raises(ValueError):
        build_parallel_frame(sphere_lc, ("S", [1.0, 1.0]), np.eye(2))
