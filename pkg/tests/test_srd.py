from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutesdg import geometry as geo
from cutesdg.basis import total_degree_exponents
from cutesdg.mesh import CARTESIAN, BackgroundGrid, build_cut_mesh
from cutesdg.operators import build_mesh_operators
from cutesdg.physics import Euler, ShallowWater
from cutesdg.solver import BoundaryCondition, Discretization
from cutesdg.srd import SRDError, StateRedistribution, apply_srd, build_neighborhoods


def discretize(mesh, law=None):
    law = law or ShallowWater()
    bcs = {t: BoundaryCondition("wall") for t in mesh.boundary_tags()}
    return Discretization(mesh, build_mesh_operators(mesh), law, bcs)


def square_slivers(a=0.49, N=2):
    # a square obstacle just short of the grid lines leaves thin L-shaped strips
    segs = [{"kind": "line", "start": p, "end": q} for p, q in
            [((-a, -a), (a, -a)), ((a, -a), (a, a)), ((a, a), (-a, a)), ((-a, a), (-a, -a))]]
    return build_cut_mesh(BackgroundGrid((-1.0, 1.0, -1.0, 1.0), 4, 4), [geo.piecewise(segs)], N)


@pytest.fixture(scope="module")
def random_discs():
    rng = np.random.default_rng(11)
    out = []
    while len(out) < 5:
        c = geo.circle(tuple(rng.uniform(-0.3, 0.3, 2)), rng.uniform(0.2, 0.55))
        try:
            mesh = build_cut_mesh(BackgroundGrid((-1.0, 1.0, -1.0, 1.0), 8, 8), [c], 3)
        except geo.GeometryError:
            continue
        disc = discretize(mesh)
        srd = StateRedistribution(disc)
        if srd.table.n_merged:
            out.append((disc, srd))
    return out


def test_uncut_mesh_has_only_singletons_and_identity():
    mesh = build_cut_mesh(BackgroundGrid((-1.0, 1.0, -1.0, 1.0), 3, 3), [], 2)
    disc = discretize(mesh)
    srd = StateRedistribution(disc)
    assert srd.table.n_merged == 0
    assert np.all(srd.table.overlap == 1)
    u = np.random.default_rng(0).normal(size=(disc.n_dofs, 3))
    np.testing.assert_allclose(srd(u), u, atol=1e-14)


def test_sliver_merges_with_cartesian_neighbor():
    mesh = square_slivers()
    table = build_neighborhoods(mesh, 0.5)
    cell = mesh.grid.cell_area
    slivers = [e for e in mesh.elements if e.volume < 0.5 * cell]
    assert len(slivers) == 4
    for el in slivers:
        nb = table.neighborhoods[el.id]
        assert nb.owner == el.id and nb.members[0] == el.id
        assert len(nb.members) == 2
        assert mesh.elements[nb.members[1]].kind == CARTESIAN
        assert nb.volume >= 0.5 * cell
        assert nb.volume == pytest.approx(sum(mesh.elements[m].volume for m in nb.members))


def test_overlap_counts_neighborhood_membership():
    mesh = square_slivers()
    table = build_neighborhoods(mesh, 0.5)
    for j in range(len(mesh.elements)):
        assert table.overlap[j] == sum(j in nb.members for nb in table.neighborhoods)
    assert table.overlap.max() == 2


def test_threshold_validation_and_isolated_element():
    mesh = square_slivers()
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(SRDError):
            build_neighborhoods(mesh, bad)
    lonely = SimpleNamespace(
        elements=[SimpleNamespace(id=0, volume=0.01)], faces=[],
        grid=SimpleNamespace(cell_area=1.0))
    with pytest.raises(SRDError):
        build_neighborhoods(lonely, 0.5)


def test_srd_changes_only_merged_elements():
    mesh = square_slivers()
    disc = discretize(mesh)
    srd = StateRedistribution(disc)
    u = np.random.default_rng(1).normal(size=(disc.n_dofs, 3))
    out = srd(u)
    touched = {m for nb in srd.table.neighborhoods if not nb.is_singleton for m in nb.members}
    for k in range(len(mesh.elements)):
        sl = disc.element_slice(k)
        if k not in touched:
            np.testing.assert_allclose(out[sl], u[sl], atol=1e-14)
    assert not np.allclose(out, u)


def test_conservation_on_random_meshes(random_discs):
    rng = np.random.default_rng(2)
    for disc, srd in random_discs:
        u = rng.normal(size=(disc.n_dofs, 3)) + 3.0
        before, after = disc.totals(u), disc.totals(srd(u))
        np.testing.assert_allclose(after, before, rtol=1e-12)


def test_polynomial_reproduction_on_random_meshes(random_discs):
    rng = np.random.default_rng(3)
    for disc, srd in random_discs:
        N = disc.mesh.N
        exps = total_degree_exponents(N)
        c = rng.normal(size=(len(exps), 3))

        def poly(x):
            return sum(np.outer(x[:, 0] ** a * x[:, 1] ** b, ci) for ci, (a, b) in zip(c, exps))
        u = disc.project(poly)
        assert np.abs(srd(u) - u).max() <= 1e-11 * np.abs(u).max()


def test_linearity_on_random_meshes(random_discs):
    rng = np.random.default_rng(4)
    for disc, srd in random_discs:
        u, w = rng.normal(size=(2, disc.n_dofs, 3))
        a, b = 0.7, -1.9
        lhs = srd(a * u + b * w)
        rhs = a * srd(u) + b * srd(w)
        assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(rhs).max()


def test_apply_srd_matches_precomputed_operator():
    mesh = square_slivers()
    disc = discretize(mesh, Euler())
    srd = StateRedistribution(disc)
    u = np.random.default_rng(5).normal(size=(disc.n_dofs, 4))
    np.testing.assert_allclose(apply_srd(disc, srd.table, u), srd(u), rtol=1e-15, atol=1e-15)


@settings(max_examples=8, deadline=None)
@given(a=st.floats(0.40, 0.495), threshold=st.floats(0.2, 1.0))
def test_neighborhoods_reach_threshold(a, threshold):
    mesh = square_slivers(a, N=1)
    table = build_neighborhoods(mesh, threshold)
    cell = mesh.grid.cell_area
    for el, nb in zip(mesh.elements, table.neighborhoods):
        assert el.id in nb.members
        assert nb.volume >= threshold * cell
        if el.volume >= threshold * cell:
            assert nb.is_singleton
