"""Global H(div) x L2 spaces on the active mesh.

Facet DOFs are normal-flux moments taken with a global facet normal (pointing
from the lower to the higher cell id) and a global tangent (from the lower to
the higher vertex id).  The global basis restricted to a cell is the Piola
image of the reference basis times the per-(cell, DOF) sign stored here, which
makes normal traces continuous by construction.
"""
import numpy as np
import scipy.sparse as sp

from .elements import FLUX_SPECS, div_to_pressure, element_pair, flux_element, pressure_element, ref_rule
from .errors import SingularMap
from .quadrature import interval_rule


def ref_basis(family, points, derivs=False):
    """Reference basis of a flux or pressure family at points (N, 2).

    Flux families return (values (N, n, 2), divergences (N, n)) and, with
    ``derivs``, gradients (N, n, comp, dir); pressure families return values
    (N, n) and optionally gradients (N, n, 2).
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if family in FLUX_SPECS:
        fe = flux_element(family)
        out = (fe.values(x), fe.divergence(x))
        return out + (fe.gradients(x),) if derivs else out
    pe = pressure_element(family)
    return (pe.values(x), pe.gradients(x)) if derivs else pe.values(x)


def piola_map(J, values, divergences=None):
    """Contravariant Piola map for one affine cell with Jacobian ``J``.

    v = J v_hat / det J and div v = div_hat v_hat / det J.
    """
    J = np.asarray(J, dtype=float)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if not det > 0:
        raise SingularMap(f"non-positive Jacobian determinant {det:g}")
    vals = np.einsum("ij,...j->...i", J, values) / det
    if divergences is None:
        return vals
    return vals, np.asarray(divergences) / det


class FESpace:
    """Flux/pressure pair on the active cells of a classified mesh."""

    def __init__(self, mesh, cls, pair):
        self.mesh = mesh
        self.cls = cls
        self.pair, self.fe, self.pe = element_pair(pair)
        if self.fe.cell != mesh.kind:
            raise ValueError(f"{self.pair} needs a {self.fe.cell} mesh, got {mesh.kind}")
        self.origin, self.J, self.det = mesh.affine_maps()
        if np.any(self.det <= 0):
            raise SingularMap("mesh has cells with non-positive Jacobian")
        self.Jinv = np.linalg.inv(self.J)

        self.cells = cls.active
        nc = mesh.n_cells
        self.cell_index = np.full(nc, -1, dtype=np.int64)
        self.cell_index[self.cells] = np.arange(len(self.cells))

        cf = mesh.cell_facets[self.cells]
        self.facets = np.unique(cf)
        self.facet_index = np.full(mesh.n_facets, -1, dtype=np.int64)
        self.facet_index[self.facets] = np.arange(len(self.facets))

        fe, pe = self.fe, self.pe
        dpf, nint = fe.dofs_per_facet, fe.n_interior
        self.n_facet_dofs = len(self.facets) * dpf
        self.n_flux = self.n_facet_dofs + len(self.cells) * nint
        self.n_pressure = len(self.cells) * pe.n

        nfl = fe.n_facets
        na = len(self.cells)
        dofs = np.zeros((nc, fe.n), dtype=np.int64)
        signs = np.ones((nc, fe.n))
        fidx = self.facet_index[cf]
        cells_v = mesh.cells[self.cells]
        for k in range(nfl):
            f = cf[:, k]
            sn = np.where(mesh.facet_cells[f, 0] == self.cells, 1.0, -1.0)
            start = cells_v[:, k] if mesh.kind == "quad" else cells_v[:, (k + 1) % 3]
            st = np.where(start == mesh.facets[f, 0], 1.0, -1.0)
            for j, loc in enumerate(fe.facet_dofs(k)):
                dofs[self.cells, loc] = fidx[:, k] * dpf + j
                signs[self.cells, loc] = sn * st**j
        for i, loc in enumerate(fe.interior_dofs()):
            dofs[self.cells, loc] = self.n_facet_dofs + np.arange(na) * nint + i
        self._flux_dofs = dofs
        self._flux_signs = signs
        pd = np.zeros((nc, pe.n), dtype=np.int64)
        pd[self.cells] = np.arange(na)[:, None] * pe.n + np.arange(pe.n)[None, :]
        self._pressure_dofs = pd
        self._dref = div_to_pressure(fe, pe)

    # -- layout -------------------------------------------------------------
    @property
    def n_dofs(self):
        return self.n_flux + self.n_pressure

    def flux_dofs(self, cells):
        return self._flux_dofs[cells]

    def flux_signs(self, cells):
        return self._flux_signs[cells]

    def pressure_dofs(self, cells):
        return self._pressure_dofs[cells]

    # -- evaluation ---------------------------------------------------------
    def ref_coords(self, cells, x):
        d = np.asarray(x, dtype=float) - self.origin[cells]
        return np.einsum("nij,nj->ni", self.Jinv[cells], d)

    def flux_basis(self, cells, x, grads=False):
        """Physical basis values (N, nb, 2) and divergences (N, nb) at points ``x``.

        ``cells`` gives, per point, the cell whose polynomials are evaluated;
        points may lie outside that cell (polynomial extension).
        """
        cells = np.asarray(cells)
        xh = self.ref_coords(cells, x)
        J, det, s = self.J[cells], self.det[cells], self._flux_signs[cells]
        scale = s / det[:, None]
        vals = np.einsum("nij,nkj->nki", J, self.fe.values(xh)) * scale[:, :, None]
        div = self.fe.divergence(xh) * scale
        if not grads:
            return vals, div
        g = self.fe.gradients(xh)                      # (N, nb, comp, dir)
        g = np.einsum("nij,nkjl,nlm->nkim", J, g, self.Jinv[cells])
        return vals, div, g * scale[:, :, None, None]

    def pressure_basis(self, cells, x, grads=False):
        cells = np.asarray(cells)
        xh = self.ref_coords(cells, x)
        vals = self.pe.values(xh)
        if not grads:
            return vals
        g = np.einsum("nkj,nji->nki", self.pe.gradients(xh), self.Jinv[cells])
        return vals, g

    def eval_flux(self, coeffs, cells, x):
        vals, div = self.flux_basis(cells, x)
        c = coeffs[self._flux_dofs[cells]]
        return np.einsum("nk,nkc->nc", c, vals), np.einsum("nk,nk->n", c, div)

    def eval_pressure(self, coeffs, cells, x):
        vals = self.pressure_basis(cells, x)
        return np.einsum("nk,nk->n", coeffs[self._pressure_dofs[cells]], vals)

    def cell_rule(self, cells, degree):
        """Full-cell quadrature: points (nc, nq, 2) and weights (nc, nq)."""
        q, w = ref_rule(self.mesh.kind, degree)
        cells = np.asarray(cells)
        pts = self.origin[cells][:, None, :] + np.einsum("cij,qj->cqi", self.J[cells], q)
        return pts, self.det[cells][:, None] * w[None, :]

    # -- operators ----------------------------------------------------------
    def div_matrix(self):
        """Sparse D (n_pressure x n_flux): pressure coefficients of div v_h."""
        cells = self.cells
        Dl = self._dref[None, :, :] * (self._flux_signs[cells] / self.det[cells][:, None])[:, None, :]
        rows = np.broadcast_to(self._pressure_dofs[cells][:, :, None], Dl.shape)
        cols = np.broadcast_to(self._flux_dofs[cells][:, None, :], Dl.shape)
        D = sp.coo_matrix((Dl.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(self.n_pressure, self.n_flux)).tocsr()
        D.sum_duplicates()
        return D

    def facet_geometry(self, facets):
        """Endpoints (lower -> higher vertex id) and global unit normals."""
        m = self.mesh
        a = m.vertices[m.facets[facets, 0]]
        b = m.vertices[m.facets[facets, 1]]
        d = b - a
        right = np.column_stack([d[:, 1], -d[:, 0]]) / np.hypot(d[:, 0], d[:, 1])[:, None]
        # outward normal of the owner cell (the lower cell id)
        owner = m.facet_cells[facets, 0]
        mid = 0.5 * (a + b)
        ctr = m.vertices[m.cells[owner]].mean(axis=1)
        sgn = np.sign(np.einsum("ni,ni->n", right, mid - ctr))
        return a, b, right * sgn[:, None]

    def interp_hdiv(self, u, order=10):
        """Canonical interpolant: facet flux moments (and interior moments for RT1)."""
        fe = self.fe
        coeffs = np.zeros(self.n_flux)
        s, w = interval_rule(max(order, 2 * fe.k_u + 2))
        a, b, nrm = self.facet_geometry(self.facets)
        d = b - a
        length = np.hypot(d[:, 0], d[:, 1])
        pts = a[:, None, :] + s[None, :, None] * d[:, None, :]
        un = np.einsum("fqc,fc->fq", u(pts.reshape(-1, 2)).reshape(len(a), len(s), 2), nrm)
        for j in range(fe.dofs_per_facet):
            leg = np.ones_like(s) if j == 0 else 2 * s - 1
            coeffs[np.arange(len(a)) * fe.dofs_per_facet + j] = (un * (w * leg)[None, :]).sum(1) * length
        if fe.n_interior:
            pts, wq = self.cell_rule(self.cells, max(order, 2 * fe.degree + 2))
            vals = u(pts.reshape(-1, 2)).reshape(pts.shape)
            ref = np.einsum("nij,nqj->nqi", self.Jinv[self.cells], vals)  # J^-1 u
            mom = np.einsum("nq,nqi->ni", wq, ref)
            # subtract the contribution of the facet DOFs
            q, wr = ref_rule(self.mesh.kind, 2 * fe.degree + 2)
            ref_vals = fe.values(q)
            facet_loc = [l for k in range(fe.n_facets) for l in fe.facet_dofs(k)]
            int_loc = fe.interior_dofs()
            A = np.einsum("q,qkc->ck", wr, ref_vals)             # interior moments of each basis fn
            cf = coeffs[self._flux_dofs[self.cells][:, facet_loc]] * self._flux_signs[self.cells][:, facet_loc]
            contrib = cf @ A[:, facet_loc].T                       # already in reference scaling
            # reference moment = integral over T^ of v^ = int_T J^-1 v dx
            target = mom - contrib
            sol = np.linalg.solve(A[:, int_loc], target.T).T
            coeffs[self._flux_dofs[self.cells][:, int_loc]] = sol
        return coeffs

    def interp_l2(self, p, order=10):
        """Cell-wise L2 projection over the full background cells."""
        pts, w = self.cell_rule(self.cells, max(order, 2 * self.pe.k_p + 2))
        q, wr = ref_rule(self.mesh.kind, max(order, 2 * self.pe.k_p + 2))
        Q = self.pe.values(q)
        M = Q.T @ (wr[:, None] * Q)
        f = p(pts.reshape(-1, 2)).reshape(w.shape)
        rhs = np.einsum("nq,qk->nk", f * (wr[None, :]), Q)
        coeffs = np.linalg.solve(M, rhs.T).T
        out = np.zeros(self.n_pressure)
        out[self._pressure_dofs[self.cells]] = coeffs
        return out
