import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from affgeom.atlas import AtlasError, builtin_manifold
from affgeom.connection import (
    MetricField,
    SingularMetricError,
    check_locally_metric,
    constant_metric_eval,
    convex_combine,
    flat_connection,
    levi_civita,
    metric_interpolate,
    riemann_tensor,
    second_difference,
)

METRIC_KEYS = [
    ("flat_torus_2d", "metric"),
    ("flat_torus_2d", "alternate_metric"),
    ("round_sphere_2d", "metric"),
    ("round_sphere_2d", "alternate_metric"),
    ("hopf_torus_2d", "metric"),
    ("hopf_manifold(3)", "metric"),
]


def oracle_christoffel(metric, chart, x, h=1e-5):
    """Independent route: differentiate g by hand, solve g_kl Gamma^l_ij = Gamma_{k,ij} per (i, j)."""
    n = len(x)
    G = metric.g(chart, x)
    dG = np.zeros((n, n, n))
    for m in range(n):
        e = np.zeros(n)
        e[m] = h
        dG[m] = (metric.g(chart, x + e) - metric.g(chart, x - e)) / (2 * h)
    out = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            rhs = np.array([0.5 * (dG[i, j, k] + dG[j, i, k] - dG[k, i, j]) for k in range(n)])
            out[:, i, j] = np.linalg.lstsq(G, rhs, rcond=None)[0]
    return out


def sample(m, count, seed=0):
    return m.atlas.sample_points(np.random.default_rng(seed), count)


# --------------------------------------------------------------------------
# flat connections


@pytest.mark.parametrize("key", ["flat_torus_2d", "hopf_torus_2d", "open_box_2d"])
def test_flat_connection_is_zero(key):
    m = builtin_manifold(key)
    conn = flat_connection(m.atlas)
    assert conn.kind == "flat_affine" and conn.symmetric
    for cid, pts in sample(m, 200).items():
        assert np.all(conn.gamma(cid, pts) == 0.0)
        assert np.all(conn.dgamma(cid, pts) == 0.0)


def test_flat_connection_rejects_non_affine(sphere):
    with pytest.raises(AtlasError):
        flat_connection(sphere.atlas)


# --------------------------------------------------------------------------
# Levi-Civita


def test_sphere_christoffels_closed_form(sphere_lc):
    pts = sample(builtin_manifold("round_sphere_2d"), 200)["S"]
    G = sphere_lc.gamma("S", pts)
    th = pts[:, 0]
    np.testing.assert_allclose(G[:, 0, 1, 1], -np.sin(th) * np.cos(th), atol=1e-14)
    np.testing.assert_allclose(G[:, 1, 0, 1], np.cos(th) / np.sin(th), rtol=1e-13)
    np.testing.assert_allclose(G[:, 1, 1, 0], np.cos(th) / np.sin(th), rtol=1e-13)
    assert np.all(G[:, 0, 0, 0] == 0) and np.all(G[:, 1, 1, 1] == 0)


@pytest.mark.parametrize("key,attr", METRIC_KEYS)
def test_levi_civita_matches_oracle(key, attr):
    m = builtin_manifold(key)
    metric = getattr(m, attr)
    lc = levi_civita(metric)
    for cid, pts in sample(m, 40, seed=1).items():
        for x in pts:
            scale = max(1.0, np.max(np.abs(lc.gamma(cid, x))))
            np.testing.assert_allclose(lc.gamma(cid, x), oracle_christoffel(metric, cid, x), atol=1e-7 * scale)


@pytest.mark.parametrize("key,attr", METRIC_KEYS)
def test_levi_civita_compatibility(key, attr):
    m = builtin_manifold(key)
    metric = getattr(m, attr)
    assert check_locally_metric(levi_civita(metric), metric, 1000, seed=2).max_defect <= 1e-8
    fd = levi_civita(metric, "finite_difference", step=1e-5)
    assert check_locally_metric(fd, metric, 1000, seed=2).max_defect <= 1e-5


@pytest.mark.parametrize("key,attr", METRIC_KEYS)
def test_torsion_free_exactly(key, attr):
    m = builtin_manifold(key)
    lc = levi_civita(getattr(m, attr))
    for cid, pts in sample(m, 1000, seed=3).items():
        G = lc.gamma(cid, pts)
        assert np.array_equal(G, np.swapaxes(G, -1, -2))


@pytest.mark.parametrize("key,attr", METRIC_KEYS)
def test_analytic_christoffel_derivative_matches_differences(key, attr):
    m = builtin_manifold(key)
    lc = levi_civita(getattr(m, attr))
    for cid, pts in sample(m, 100, seed=4).items():
        exact = lc.dgamma(cid, pts)
        fd = lc.dgamma(cid, pts, step=1e-5)
        scale = np.maximum(1.0, np.max(np.abs(exact), axis=(1, 2, 3, 4)))
        assert np.all(np.max(np.abs(exact - fd), axis=(1, 2, 3, 4)) <= 1e-5 * scale)


def test_levi_civita_modes(sphere):
    with pytest.raises(ValueError):
        levi_civita(sphere.metric, "symbolic")
    m = MetricField(sphere.atlas, {"S": constant_metric_eval(np.eye(2))})
    nodiff = MetricField(sphere.atlas, {"S": type(m.charts["S"])(g=m.charts["S"].g)})
    with pytest.raises(ValueError):
        levi_civita(nodiff, "analytic")
    assert np.allclose(levi_civita(nodiff).gamma("S", [1.0, 1.0]), 0.0)


def test_singular_metric_rejected(sphere):
    bad = MetricField(sphere.atlas, {"S": constant_metric_eval(np.diag([1.0, 1e-13]))})
    with pytest.raises(SingularMetricError):
        levi_civita(bad).gamma("S", np.array([1.0, 1.0]))


def test_flat_metric_gives_zero_christoffels(torus):
    lc = levi_civita(torus.metric)
    assert np.all(lc.gamma("U", sample(torus, 100)["U"]) == 0.0)


def test_interpolated_metric_at_one_reproduces_levi_civita(sphere):
    g, h = sphere.metric, sphere.alternate_metric
    pts = sample(sphere, 200)["S"]
    a = levi_civita(metric_interpolate(g, h, 1.0)).gamma("S", pts)
    np.testing.assert_allclose(a, levi_civita(g).gamma("S", pts), atol=1e-12)


def test_sphere_riemann_tensor(sphere_lc):
    pts = sample(builtin_manifold("round_sphere_2d"), 100)["S"]
    R = riemann_tensor(sphere_lc, "S", pts)
    # R^theta_{phi theta phi} = sin^2 theta for the unit sphere
    np.testing.assert_allclose(R[:, 0, 1, 0, 1], np.sin(pts[:, 0]) ** 2, atol=1e-12)
    np.testing.assert_allclose(R, -np.swapaxes(R, -1, -2), atol=1e-14)


# --------------------------------------------------------------------------
# convex combination and metric interpolation


def test_convex_combine_endpoints_and_scaling(torus):
    nabla = torus.affine
    d = levi_civita(torus.alternate_metric)
    pts = sample(torus, 300)["U"]
    assert np.max(np.abs(convex_combine(nabla, d, 0.0).gamma("U", pts))) <= 1e-14
    np.testing.assert_allclose(convex_combine(nabla, d, 1.0).gamma("U", pts), d.gamma("U", pts), atol=1e-14)
    np.testing.assert_allclose(convex_combine(nabla, d, 0.5).gamma("U", pts), 0.5 * d.gamma("U", pts), atol=1e-14)
    assert convex_combine(nabla, d, 0.3).provenance[:2] == ("convex_combination", 0.3)


@given(st.floats(0.0, 1.0), st.integers(0, 2 ** 31 - 1))
def test_convex_combination_pointwise_identity(t, seed):
    sphere = builtin_manifold("round_sphere_2d")
    a, b = levi_civita(sphere.metric), levi_civita(sphere.alternate_metric)
    pts = sphere.chart("S").sample(np.random.default_rng(seed), 20, margin=0.1)
    got = convex_combine(a, b, t).gamma("S", pts)
    want = (1 - t) * a.gamma("S", pts) + t * b.gamma("S", pts)
    assert np.max(np.abs(got - want)) <= 1e-14 * max(1.0, np.max(np.abs(want)))


def test_convex_combine_errors(torus, sphere, sphere_lc):
    d = levi_civita(torus.alternate_metric)
    with pytest.raises(AtlasError):
        convex_combine(torus.affine, sphere_lc, 0.5)
    with pytest.raises(ValueError):
        convex_combine(torus.affine, d, 1.5)
    with pytest.raises(ValueError):
        convex_combine(torus.affine, d, -0.1)


def test_metric_interpolate_examples(torus):
    two = MetricField(torus.atlas, {"U": constant_metric_eval(2 * np.eye(2))})
    one = torus.metric
    x = np.array([1.0, 2.0])
    np.testing.assert_array_equal(metric_interpolate(two, one, 0.0).g("U", x), one.g("U", x))
    np.testing.assert_allclose(metric_interpolate(two, one, 0.5).g("U", x), 1.5 * np.eye(2), atol=1e-15)
    g = metric_interpolate(torus.alternate_metric, one, 0.3)
    assert g.provenance[:2] == ("interpolated", 0.3)
    pts = sample(torus, 100)["U"]
    want = 0.3 * torus.alternate_metric.g("U", pts) + 0.7 * one.g("U", pts)
    assert np.max(np.abs(g.g("U", pts) - want)) <= 1e-14


def test_metric_interpolate_errors(torus, sphere):
    with pytest.raises(AtlasError):
        metric_interpolate(torus.metric, sphere.metric, 0.5)
    with pytest.raises(ValueError):
        metric_interpolate(torus.metric, torus.alternate_metric, 2.0)


@pytest.mark.parametrize("key", ["flat_torus_2d", "round_sphere_2d"])
def test_interpolation_eigenvalue_floor(key):
    m = builtin_manifold(key)
    cid = m.base_chart
    pts = m.chart(cid).sample(np.random.default_rng(5), 1000, margin=0.02)
    floors = [np.linalg.eigvalsh(f.g(cid, pts))[:, 0] for f in (m.metric, m.alternate_metric)]
    endpoint = np.minimum(*floors)
    for t in np.linspace(0.0, 1.0, 11):
        ev = np.linalg.eigvalsh(metric_interpolate(m.metric, m.alternate_metric, t).g(cid, pts))[:, 0]
        assert np.all(ev > 0)
        assert np.all(ev >= endpoint * (1 - 1e-12))


# --------------------------------------------------------------------------
# compatibility diagnostics


def test_flat_torus_compatibility_defect_zero(torus):
    assert check_locally_metric(torus.affine, torus.metric, 500).max_defect == 0.0


def test_hopf_flat_connection_not_globally_metric(hopf):
    report = check_locally_metric(hopf.affine, hopf.metric, 1000, seed=6)
    assert report.max_defect > 0.1
    # the Euclidean metric of the cover is the local compatible metric
    assert check_locally_metric(hopf.affine, hopf.local_metric, 1000).max_defect == 0.0


def test_nonconvexity_of_levi_civita_in_the_metric(sphere):
    g, h = sphere.metric, sphere.alternate_metric
    pts = sample(sphere, 500, seed=7)["S"]
    gap = 0.0
    for t in (0.25, 0.5, 0.75):
        a = levi_civita(metric_interpolate(g, h, t)).gamma("S", pts)
        b = convex_combine(levi_civita(h), levi_civita(g), t).gamma("S", pts)
        gap = max(gap, float(np.max(np.abs(a - b))))
    assert gap > 1e-3


def test_check_locally_metric_mismatched_atlas(torus, sphere):
    with pytest.raises(AtlasError):
        check_locally_metric(torus.affine, sphere.metric)


# --------------------------------------------------------------------------
# finite-difference fallbacks


def test_second_difference_hessian():
    def f(x):
        return np.stack([np.sin(x[..., 0]) * x[..., 1] ** 3, np.exp(x[..., 0] * x[..., 1])], axis=-1)

    x = np.random.default_rng(8).uniform(-1, 1, size=(30, 2))
    a, b = x[:, 0], x[:, 1]
    want = np.empty((30, 2, 2, 2))
    want[:, 0, 0, 0] = -np.sin(a) * b ** 3
    want[:, 0, 1, 0] = want[:, 1, 0, 0] = 3 * np.cos(a) * b ** 2
    want[:, 1, 1, 0] = 6 * np.sin(a) * b
    e = np.exp(a * b)
    want[:, 0, 0, 1] = b * b * e
    want[:, 0, 1, 1] = want[:, 1, 0, 1] = e * (1 + a * b)
    want[:, 1, 1, 1] = a * a * e
    np.testing.assert_allclose(second_difference(f, x, 1e-3), want, atol=1e-9)


def test_finite_difference_christoffel_derivative_near_pole(sphere, sphere_lc):
    fd = levi_civita(sphere.metric, "finite_difference")
    x = np.array([[0.01, 1.0], [0.05, 2.0], [3.1, 0.3]])
    exact = sphere_lc.dgamma("S", x)
    got = fd.dgamma("S", x)
    assert np.all(np.abs(got - exact) <= 1e-6 * np.maximum(1.0, np.abs(exact)))
