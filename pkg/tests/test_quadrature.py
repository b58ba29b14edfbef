import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutesdg import geometry as geo
from cutesdg.basis import dim_total, total_degree_exponents
from cutesdg.mesh import BackgroundGrid, build_cut_mesh, build_triangle_map
from cutesdg.quadrature import (QuadratureError, QuadratureRule, caratheodory_prune, composite_degree,
                                composite_volume_rule, cut_element_rule, exactness_error, face_rule,
                                prune_step, reference_rule)
from math import factorial

R = 0.331


def triangle_moment(i, j):
    """Integral of x^i y^j over the unit right triangle."""
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def test_interval_two_point_gauss():
    r = reference_rule("interval", 3)
    np.testing.assert_allclose(np.sort(r.points.ravel()), [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(r.weights, [1.0, 1.0], atol=1e-15)


def test_square_one_point():
    r = reference_rule("square", 1)
    assert len(r) == 1
    np.testing.assert_allclose(r.points, [[0.0, 0.0]], atol=1e-15)
    assert r.weights[0] == pytest.approx(4.0)


@pytest.mark.parametrize("degree", [2, 5, 9, 19])
def test_triangle_rule_moments(degree):
    r = reference_rule("triangle", degree)
    assert np.all(r.weights > 0)
    for i, j in total_degree_exponents(degree):
        got = r.weights @ (r.points[:, 0] ** i * r.points[:, 1] ** j)
        assert got == pytest.approx(triangle_moment(i, j), rel=1e-13, abs=1e-15)


def test_composite_degree_table_entry():
    # M = 2N - 1 = 5 through a degree-3 map
    assert composite_degree(5, 3) == 19
    assert composite_degree(5, 1) == 5


class _TwoTriangles:
    id = 0

    def __init__(self, N=1):
        self.triangles = [build_triangle_map([(0, 0), (1, 0), (1, 1)], N),
                          build_triangle_map([(0, 0), (1, 1), (0, 1)], N)]


def test_composite_rule_on_unit_square():
    rule = composite_volume_rule(_TwoTriangles(), 2)
    for i, j in total_degree_exponents(2):
        got = rule.weights @ (rule.points[:, 0] ** i * rule.points[:, 1] ** j)
        assert got == pytest.approx(1.0 / ((i + 1) * (j + 1)), abs=1e-13)


@pytest.mark.parametrize("N", [4, 5, 6])
def test_quarter_disk_area(N):
    # a circle centred on a grid node leaves each cell minus a quarter disk
    m = build_cut_mesh(BackgroundGrid((-1.0, 1.0, -1.0, 1.0), 2, 2), [geo.circle((0.0, 0.0), R)], N)
    assert len(m.cut_elements) == 4
    for el in m.cut_elements:
        rule = composite_volume_rule(el, 2 * N - 1)
        assert rule.weights.sum() == pytest.approx(1.0 - np.pi * R ** 2 / 4, abs=1e-8)


def test_prune_step_hand_example():
    alpha, w = prune_step(np.array([1.0, 1.0]), np.array([1.0, -1.0]), 0.0)
    assert alpha == -1.0
    np.testing.assert_array_equal(w, [2.0, 0.0])


def test_prune_twelve_point_composite():
    rule = composite_volume_rule(_TwoTriangles(), 2)
    assert len(rule) > dim_total(2) + 1
    pruned = caratheodory_prune(rule, 2)
    assert len(pruned) <= dim_total(2) + 1
    assert np.all(pruned.weights >= 0)
    for i, j in total_degree_exponents(2):
        got = pruned.weights @ (pruned.points[:, 0] ** i * pruned.points[:, 1] ** j)
        assert got == pytest.approx(1.0 / ((i + 1) * (j + 1)), abs=1e-13)


def test_prune_small_rule_unchanged():
    r = reference_rule("triangle", 1)
    assert len(r) <= dim_total(1) + 1
    assert caratheodory_prune(r, 1) is r


def test_negative_weights_rejected():
    with pytest.raises(QuadratureError):
        QuadratureRule(np.zeros((2, 2)), np.array([1.0, -1.0]), 1)


def test_straight_face_weights():
    class F:
        kind = "cartesian"
        start = np.array([0.0, 0.0])
        end = np.array([0.125, 0.0])
    r = face_rule(F(), 4)
    assert r.weights.sum() == pytest.approx(0.125, abs=1e-16)
    np.testing.assert_allclose(r.normals, [[0.0, -1.0]] * 4)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_cartesian_face_gauss_exactness(N):
    class F:
        kind = "cartesian"
        start = np.array([0.0, 0.0])
        end = np.array([1.0, 0.0])
    r = face_rule(F(), N + 1)
    assert r.weights @ r.points[:, 0] ** (2 * N) == pytest.approx(1.0 / (2 * N + 1), abs=1e-13)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_arc_face_length(N):
    theta = 0.7
    c = geo.circle((0.0, 0.0), R)
    seg = geo.CurveSegment(c, 0.1, 0.1 + theta / (2 * np.pi), geo.USER, geo.USER)

    class F:
        kind = "cut-curved"
        segment = seg
    r = face_rule(F(), 2 * N + 2)
    assert r.weights.sum() == pytest.approx(R * theta, abs=1e-12)


def test_exactness_error_exact_and_perturbed():
    ref = reference_rule("triangle", 6)
    assert exactness_error(ref, 3, ref) <= 1e-13
    w = ref.weights.copy()
    w[0] *= 1.0 + 1e-3
    bad = QuadratureRule(ref.points, w, 3)
    assert exactness_error(bad, 3, ref) >= 1e-4 * ref.weights[0] * 1e-3


@pytest.fixture(scope="module")
def random_cut_elements():
    rng = np.random.default_rng(7)
    out = []
    while len(out) < 6:
        c = geo.circle(tuple(rng.uniform(-0.3, 0.3, 2)), rng.uniform(0.2, 0.5))
        try:
            m = build_cut_mesh(BackgroundGrid((-1.0, 1.0, -1.0, 1.0), 8, 8), [c], 3)
        except geo.GeometryError:
            continue
        out.append(m)
    return out


def test_pruned_cut_rules(random_cut_elements):
    for m in random_cut_elements:
        for el in m.cut_elements[:4]:
            pruned, comp = cut_element_rule(el, 3, return_composite=True)
            M = 5
            assert len(pruned) <= dim_total(M) + 1
            assert np.all(pruned.weights >= 0)
            assert exactness_error(pruned, M, comp) <= 1e-12
            assert pruned.weights.sum() == pytest.approx(el.volume, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), M=st.integers(1, 4))
def test_prune_random_cloud_keeps_moments(seed, M):
    rng = np.random.default_rng(seed)
    n = dim_total(M) + 1 + rng.integers(1, 30)
    pts = rng.uniform(-1, 1, (n, 2))
    w = rng.uniform(0.1, 1.0, n)
    rule = QuadratureRule(pts, w, M)
    pruned = caratheodory_prune(rule, M)
    assert len(pruned) <= dim_total(M) + 1
    assert np.all(pruned.weights >= 0)
    for i, j in total_degree_exponents(M):
        f = lambda p: p[:, 0] ** i * p[:, 1] ** j  # noqa: E731
        assert pruned.weights @ f(pruned.points) == pytest.approx(w @ f(pts), abs=1e-11 * w.sum())
