"""Shape functions, dof maps, and the H(div) element construction."""

import numpy as np
import pytest

from vardens import assemble
from vardens.mesh import unit_cube_mesh, unit_square_mesh
from vardens.quadrature import reference_simplex_measure, simplex_rule
from vardens.spaces import (FeField, MiniScalarSpace, MiniVectorSpace,
                            P1DGSpace, P1Space, P2DGSpace, RT1Space,
                            barycentric, eval_basis, make_space)


def test_make_space_rejects_unknown_kind():
    m = unit_square_mesh(1)
    with pytest.raises(ValueError, match="unknown space kind"):
        make_space("P3_hermite", m)


def test_p1_vertex_indicator_pattern():
    m = unit_square_mesh(2)
    space = P1Space(m)
    ref_vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    vals = space.ref_values(ref_vertices)
    assert np.allclose(vals, np.eye(3))


@pytest.mark.parametrize("dim", [2, 3])
def test_p2_nodal_property(dim):
    mesh = unit_square_mesh(1) if dim == 2 else unit_cube_mesh(1)
    space = P2DGSpace(mesh)
    if dim == 2:
        nodes = np.array([
            [0, 0], [1, 0], [0, 1],
            [0.5, 0], [0, 0.5], [0.5, 0.5],
        ], dtype=float)
    else:
        nodes = np.array([
            [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
            [0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5],
            [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5],
        ], dtype=float)
    vals = space.ref_values(nodes)
    assert np.allclose(vals, np.eye(len(nodes)), atol=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_bubble_is_one_at_barycenter_and_zero_on_faces(dim):
    mesh = unit_square_mesh(1) if dim == 2 else unit_cube_mesh(1)
    space = MiniScalarSpace(mesh)
    bary = np.full((1, dim), 1.0 / (dim + 1))
    vals = space.ref_values(bary)
    assert abs(vals[0, -1] - 1.0) < 1e-14
    # zero on each face of the reference simplex
    rng = np.random.default_rng(2)
    pts = rng.dirichlet(np.ones(dim + 1), size=50)
    for k in range(dim + 1):
        face = pts.copy()
        face[:, k] = 0.0
        face /= face.sum(axis=1)[:, None]
        face_pts = face[:, 1:]
        assert np.abs(space.ref_values(face_pts)[:, -1]).max() < 1e-14


def test_partition_of_unity_scalar_spaces():
    m = unit_cube_mesh(1)
    rng = np.random.default_rng(1)
    pts = rng.dirichlet(np.ones(4), size=20)[:, 1:]
    for cls in (P1Space, P1DGSpace, P2DGSpace):
        space = cls(m)
        assert np.abs(space.ref_values(pts).sum(axis=1) - 1.0).max() < 1e-13
        assert np.abs(space.ref_grads(pts).sum(axis=1)).max() < 1e-13


def test_dof_counts():
    m2, m3 = unit_square_mesh(3), unit_cube_mesh(2)
    assert P1Space(m2).n_dofs == m2.n_vertices
    assert P2DGSpace(m2).n_dofs == 6 * m2.n_cells
    assert P2DGSpace(m3).n_dofs == 10 * m3.n_cells
    assert MiniScalarSpace(m2).n_dofs == m2.n_vertices + m2.n_cells
    assert MiniVectorSpace(m2).n_dofs == 2 * (m2.n_vertices + m2.n_cells)
    assert RT1Space(m2).n_dofs == 2 * m2.n_facets + 2 * m2.n_cells
    assert RT1Space(m3).n_dofs == 3 * m3.n_facets + 3 * m3.n_cells
    assert RT1Space(m2).n_local == 8
    assert RT1Space(m3).n_local == 15


@pytest.mark.parametrize("make,n", [(unit_square_mesh, 2), (unit_cube_mesh, 1)])
def test_rt_facet_moments_reproduce_dofs(make, n):
    """Brute-force check that int_F (b_i . nu) m ds hits the dof pattern."""
    mesh = make(n)
    d = mesh.dim
    space = RT1Space(mesh)
    frule = simplex_rule(d - 1, 6)
    refmeas = reference_simplex_measure(d - 1)
    for c in (0, mesh.n_cells - 1):
        for loc in range(d + 1):
            f = mesh.cell_facets[c, loc]
            fv = mesh.vertices[mesh.facet_vertices[f]]
            edges = fv[1:] - fv[:1]
            pts = fv[0] + frule.points @ edges
            vals, _ = space.tabulate(np.array([c]), pts[None])
            flux = np.einsum("qid,d->qi", vals[0], mesh.facet_normals[f])
            moments = barycentric(frule.points, d - 1)
            got = np.einsum("q,qm,qi->mi", frule.weights / refmeas,
                            moments, flux)
            # rows: the d moment dofs of facet f; columns: all local dofs
            for mi in range(d):
                dof = f * d + mi
                expect = np.zeros(space.n_local)
                expect[np.where(space.cell_dofs[c] == dof)[0]] = 1.0
                assert np.abs(got[mi] - expect).max() < 1e-12


@pytest.mark.parametrize("make,n", [(unit_square_mesh, 3), (unit_cube_mesh, 2)])
def test_rt_normal_trace_continuity_random(make, n):
    mesh = make(n)
    space = RT1Space(mesh)
    rng = np.random.default_rng(42)
    fq = assemble.FacetQuadrature(mesh, 6)
    fi = mesh.interior_facets
    cm, cp = mesh.facet_minus[fi], mesh.facet_plus[fi]
    vm, _ = space.tabulate(cm, fq.points[fi])
    vp, _ = space.tabulate(cp, fq.points[fi])
    for _ in range(5):
        w = rng.standard_normal(space.n_dofs)
        fm = np.einsum("fqid,fd,fi->fq", vm, mesh.facet_normals[fi],
                       w[space.cell_dofs[cm]])
        fp = np.einsum("fqid,fd,fi->fq", vp, mesh.facet_normals[fi],
                       w[space.cell_dofs[cp]])
        assert np.abs(fm - fp).max() < 1e-12


def test_rt_divergence_theorem_per_basis_function():
    mesh = unit_square_mesh(2)
    space = RT1Space(mesh)
    geom = assemble.CellQuadrature(mesh, 6)
    fq = assemble.FacetQuadrature(mesh, 6)
    for c in (0, 3, 5):
        _, divs = space.tabulate(np.array([c]), geom.points[c][None])
        vol = np.einsum("q,qi->i", geom.wdet[c], divs[0])
        bnd = np.zeros(space.n_local)
        for f in mesh.cell_facets[c]:
            sign = 1.0 if mesh.facet_minus[f] == c else -1.0
            vals, _ = space.tabulate(np.array([c]), fq.points[f][None])
            bnd += sign * np.einsum("q,qid,d->i", fq.wscale[f], vals[0],
                                    mesh.facet_normals[f])
        assert np.abs(vol - bnd).max() < 1e-13


def test_eval_basis_dispatch():
    m = unit_square_mesh(2)
    pts = np.array([[0.25, 0.25], [1 / 3, 1 / 3]])
    vals, grads = eval_basis(make_space("P1", m), 0, pts)
    assert vals.shape == (2, 3) and grads.shape == (2, 3, 2)
    vals, divs = eval_basis(make_space("RT1", m), 0, pts)
    assert vals.shape == (2, 8, 2) and divs.shape == (2, 8)
    mini = make_space("P1b", m)
    vals, _ = eval_basis(mini, 1, np.array([[1 / 3, 1 / 3]]))
    assert abs(vals[0, -1] - 1.0) < 1e-14


def test_fe_field_length_check():
    m = unit_square_mesh(1)
    space = P1Space(m)
    with pytest.raises(ValueError):
        FeField(space, np.zeros(space.n_dofs + 1))


def test_boundary_dofs_are_boundary_vertices():
    m = unit_square_mesh(3)
    space = MiniScalarSpace(m)
    b = space.boundary_dofs()
    coords = m.vertices[b]
    on_bdry = ((np.abs(coords) < 1e-14) | (np.abs(coords - 1) < 1e-14)).any(axis=1)
    assert on_bdry.all()
    assert len(b) == 4 * 3  # perimeter vertices of a 3x3 grid
