"""Projection and interpolation operators used by the scheme.

* elementwise L2 projection onto the discontinuous P2 space,
* L2 projection onto the divergence-free, zero-normal-flux H(div) subspace,
  computed through the mixed saddle-point system with a piecewise-linear
  discontinuous multiplier whose constant mode is pinned to zero mean,
* nodal interpolation into the P1+bubble velocity space.

The mixed system is factorized once per mesh and reused for every time step.
"""

import warnings

import numpy as np
import scipy.sparse as sp

from . import assemble, linalg
from .spaces import (FeField, MiniVectorSpace, P1DGSpace, RT1Space)


def project_dg(tab, f):
    """Elementwise L2 projection onto the dG space tabulated in ``tab``.

    ``f`` is either a callable of physical points (vectorized over the last
    axis) or point values of shape (nc, nq).
    """
    geom = tab.geom
    values = f(geom.points) if callable(f) else np.asarray(f)
    local_mass = np.einsum("cq,qi,qj->cij", geom.wdet, tab.vals, tab.vals)
    rhs = np.einsum("cq,cq,qi->ci", geom.wdet, values, tab.vals)
    coeffs = np.linalg.solve(local_mass, rhs[..., None])[..., 0]
    return FeField(tab.space, coeffs.reshape(-1))


class RtProjectionWorkspace:
    """Factorized mixed system computing the divergence-free projection.

    Unknowns are the interior H(div) dofs (boundary normal-flux dofs are
    eliminated, enforcing zero normal trace exactly) plus the discontinuous
    P1 multiplier; the multiplier's mean is pinned through one bordered
    Lagrange row.  Reusable across time steps on a fixed mesh.
    """

    def __init__(self, mesh, geom=None, rt_space=None, rt_tab=None,
                 quad_degree=6):
        self.mesh = mesh
        self.geom = geom or assemble.CellQuadrature(mesh, quad_degree)
        self.rt_space = rt_space or RT1Space(mesh)
        self.rt_tab = rt_tab or assemble.RTTab(self.rt_space, self.geom)
        self.dg_space = P1DGSpace(mesh)
        self.dg_tab = assemble.ScalarTab(self.dg_space, self.geom)

        bdofs = self.rt_space.boundary_dofs()
        mask = np.ones(self.rt_space.n_dofs, dtype=bool)
        mask[bdofs] = False
        self.free = np.flatnonzero(mask)

        M = assemble.rt_mass_matrix(self.rt_tab)
        D = assemble.mixed_div_matrix(self.rt_tab, self.dg_tab)
        Mff = M[self.free, :][:, self.free]
        Df = D[:, self.free]
        K = sp.bmat([[Mff, Df.T], [Df, None]], format="csr")
        mean = assemble.load_vector(
            self.dg_tab, np.ones_like(self.geom.wdet)
        )
        constraint = np.concatenate([np.zeros(len(self.free)), mean])
        Kc, _ = linalg.augment_with_constraint(
            K, np.zeros(K.shape[0]), constraint
        )
        self.system_matrix = Kc
        self.lu = linalg.factorize(Kc)
        self.n_multiplier = self.dg_space.n_dofs
        self.last_report = None
        self._field_tabs = {}

    def _values_at_quad(self, v):
        if callable(v):
            return v(self.geom.points)
        if isinstance(v, np.ndarray):
            return v
        if isinstance(v, FeField):
            space = v.space
            if getattr(space, "mesh", None) is not self.mesh:
                raise ValueError("field lives on a different mesh")
            if isinstance(space, RT1Space):
                return assemble.eval_rt(self.rt_tab, v)
            if isinstance(space, MiniVectorSpace):
                key = id(space)
                if key not in self._field_tabs:
                    self._field_tabs[key] = assemble.ScalarTab(
                        space.scalar, self.geom
                    )
                return assemble.eval_mini_vector(self._field_tabs[key], v)
            raise ValueError(f"cannot project fields of kind {space.kind}")
        raise ValueError("expected a callable, point values, or FeField")

    def project(self, v, tol=1e-10):
        """Divergence-free, zero-flux projection of a square-integrable field."""
        values = self._values_at_quad(v)
        b = assemble.rt_load(self.rt_tab, values)
        rhs = np.concatenate(
            [b[self.free], np.zeros(self.n_multiplier), [0.0]]
        )
        x = self.lu.solve(rhs)
        res = np.linalg.norm(self.system_matrix @ x - rhs)
        nrm = np.linalg.norm(rhs)
        rel = res / nrm if nrm > 0 else res
        if rel > tol:
            raise linalg.ResidualError(
                f"mixed projection residual {rel:.3e} > {tol:.1e}"
            )
        coeffs = np.zeros(self.rt_space.n_dofs)
        coeffs[self.free] = x[: len(self.free)]
        self.last_report = linalg.SolveReport(rel, 0, 0.0, {
            "multiplier_mode": float(x[-1]),
        })
        return FeField(self.rt_space, coeffs)


def project_rt_divfree(workspace: RtProjectionWorkspace, v, tol=1e-10):
    return workspace.project(v, tol)


def rt_divergence_nodal(field):
    """Nodal values of div(sigma) on every cell (the P1 coefficients)."""
    space = field.space
    mesh = space.mesh
    verts = mesh.vertices[mesh.cells]  # (nc, d+1, d)
    _, divs = space.tabulate(np.arange(mesh.n_cells), verts)
    return np.einsum("ci,cqi->cq", field.coeffs[space.cell_dofs], divs)


def interpolate_mini(space: MiniVectorSpace, u0, boundary_tol=1e-12):
    """Nodal interpolation into the P1+bubble space; bubble dofs stay zero.

    Boundary vertex dofs are set exactly to zero; if ``u0`` is nonzero
    there beyond ``boundary_tol`` a warning is recorded.
    """
    mesh = space.mesh
    vals = np.asarray(u0(mesh.vertices), dtype=float)
    if vals.shape != (mesh.n_vertices, mesh.dim):
        raise ValueError("u0 must return one d-vector per vertex")
    bverts = np.unique(mesh.facet_vertices[mesh.boundary_facets].ravel())
    worst = float(np.abs(vals[bverts]).max()) if len(bverts) else 0.0
    if worst > boundary_tol:
        warnings.warn(
            f"interpolated velocity is nonzero on the boundary "
            f"(max {worst:.3e}); clamping to zero",
            stacklevel=2,
        )
    vals[bverts] = 0.0
    ns = space.scalar.n_dofs
    coeffs = np.zeros(space.n_dofs)
    for k in range(mesh.dim):
        coeffs[k * ns : k * ns + mesh.n_vertices] = vals[:, k]
    return FeField(space, coeffs)
