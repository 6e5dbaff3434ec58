"""Assembly of the unfitted mixed Darcy system.

Block layout of the unknown vector: flux coefficients, pressure coefficients,
then 0 or 2 Lagrange multipliers (pure flux boundary conditions only).

With ``D`` the exact map from flux coefficients to pressure coefficients of
``div v_h``, ``M0`` the pressure mass matrix over Ω and ``S0`` the pressure
stabilisation, the stabilised coupling is ``B = -(M0 + tau_0 S0) D``.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .elements import _prime_flux, monomials
from .errors import ConstraintInapplicable, MissingBoundaryData, SingularMass
from .integration import boundary_quadrature, domain_quadrature
from .mesh import Tag, build_aggregates, classify_cells, select_stab_facets
from .quadrature import interval_rule
from .spaces import FESpace

BC_KINDS = ("pressure", "flux", "mixed")
STAB_KINDS = ("none", "bulk_ext", "bulk_proj", "face")


@dataclass
class ProblemConfig:
    bc_kind: str = "pressure"
    gamma: float = 1.0
    tau_d: float = 0.0
    tau_0: float = 0.0
    tau_al: float = 0.0
    stab: str = "none"
    eta: float = 1.0
    f: Optional[Callable] = None          # (N, 2) -> (N, 2)
    g: Optional[Callable] = None          # (N, 2) -> (N,)
    u_gamma: Optional[Callable] = None    # (points, normals) -> (N,) normal flux
    p_gamma: Optional[Callable] = None    # (N, 2) -> (N,)
    flux_sides: tuple = ("bottom", "left")
    full_stab_facets: bool = False

    def __post_init__(self):
        if self.bc_kind not in BC_KINDS:
            raise ValueError(f"bc_kind must be one of {BC_KINDS}")
        if self.stab not in STAB_KINDS:
            raise ValueError(f"stab must be one of {STAB_KINDS}")
        if min(self.tau_d, self.tau_0, self.tau_al) < 0:
            raise ValueError("stabilisation and AL parameters must be >= 0")
        if self.bc_kind != "pressure" and not self.gamma > 0:
            raise ValueError("gamma must be positive when flux conditions are imposed")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class AssembledSystem:
    A: sp.csr_matrix
    b: np.ndarray
    n_flux: int
    n_pressure: int
    n_mult: int
    blocks: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.n_flux + self.n_pressure + self.n_mult

    def split(self, x):
        nu, npr = self.n_flux, self.n_pressure
        return x[:nu], x[nu:nu + npr], x[nu + npr:]


class Discretization:
    """Mesh, classification, space and quadratures for one run."""

    def __init__(self, mesh, dom, pair, delta=1.0, n_sub=4, rhs_order=10):
        self.mesh = mesh
        self.dom = dom
        self.cls = classify_cells(mesh, dom, delta=delta, n_sub=n_sub)
        self.space = FESpace(mesh, self.cls, pair)
        self.order = 2 * self.space.fe.degree
        self.rhs_order = rhs_order
        self.vq = domain_quadrature(mesh, self.cls, max(self.order, 1))
        self.bq = boundary_quadrature(mesh, self.cls, self.order + 2)

    @cached_property
    def agg(self):
        return build_aggregates(self.mesh, self.cls)

    @cached_property
    def vq_rhs(self):
        return domain_quadrature(self.mesh, self.cls, self.rhs_order)

    @cached_property
    def bq_rhs(self):
        return boundary_quadrature(self.mesh, self.cls, self.rhs_order)

    def cell_measure(self):
        """|T ∩ Ω| for each active cell, in space order."""
        out = np.zeros(self.mesh.n_cells)
        out[self.vq.cell_list] = self.vq.reduce(self.vq.weights)
        return out[self.space.cells]

    @property
    def h(self):
        return self.mesh.h


# -- sparse helpers ----------------------------------------------------------

def _scatter(rows, cols, vals, shape):
    """Sum dense local blocks vals (ne, a, b) into a CSR matrix."""
    r = np.broadcast_to(rows[:, :, None], vals.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], vals.shape).ravel()
    M = sp.coo_matrix((vals.ravel(), (r, c)), shape=shape).tocsr()
    M.sum_duplicates()
    return M


def _scatter_vec(idx, vals, n):
    return np.bincount(idx.ravel(), weights=vals.ravel(), minlength=n)


# -- core forms --------------------------------------------------------------

def flux_mass(disc, q=None, eta=1.0):
    q = disc.vq if q is None else q
    V = disc.space
    phi, _ = V.flux_basis(q.cells, q.points)
    loc = q.reduce(np.einsum("n,nic,njc->nij", q.weights, phi, phi)) * eta
    d = V.flux_dofs(q.cell_list)
    return _scatter(d, d, loc, (V.n_flux, V.n_flux))


def pressure_mass(disc, q=None):
    """(p, q)_Ω; block diagonal."""
    q = disc.vq if q is None else q
    V = disc.space
    psi = V.pressure_basis(q.cells, q.points)
    loc = q.reduce(np.einsum("n,ni,nj->nij", q.weights, psi, psi))
    d = V.pressure_dofs(q.cell_list)
    return _scatter(d, d, loc, (V.n_pressure, V.n_pressure))


def pressure_moments(disc, q=None):
    """m_j = ∫_Ω q_j."""
    q = disc.vq if q is None else q
    V = disc.space
    psi = V.pressure_basis(q.cells, q.points)
    return _scatter_vec(V.pressure_dofs(q.cells), psi * q.weights[:, None], V.n_pressure)


def boundary_mask(disc, cfg, q):
    """True where a boundary quadrature point belongs to Γ_u."""
    if cfg.bc_kind == "pressure" or len(q) == 0:
        return np.full(len(q), cfg.bc_kind == "flux")
    if cfg.bc_kind == "flux":
        return np.ones(len(q), dtype=bool)
    n = q.normals
    if disc.dom.kind == "annulus":
        xc, yc = disc.dom.params[:2]
        inner = np.einsum("ni,ni->n", n, q.points - np.array([xc, yc])) < 0
        side = np.where(inner, "inner", "outer")
    else:
        side = np.where(np.abs(n[:, 0]) >= np.abs(n[:, 1]),
                        np.where(n[:, 0] > 0, "right", "left"),
                        np.where(n[:, 1] > 0, "top", "bottom"))
    return np.isin(side, list(cfg.flux_sides))


def _flux_normal_basis(disc, q, mask):
    V = disc.space
    phi, _ = V.flux_basis(q.cells[mask], q.points[mask])
    return np.einsum("nkc,nc->nk", phi, q.normals[mask])


def assemble_core(disc, cfg):
    """Volume and boundary terms: returns a dict of blocks and rhs pieces."""
    V = disc.space
    nu, npr = V.n_flux, V.n_pressure
    out = {}
    out["Mu"] = flux_mass(disc, eta=cfg.eta)
    out["M0"] = pressure_mass(disc)
    out["D"] = V.div_matrix()

    # boundary bilinear terms
    bq = disc.bq
    mu = boundary_mask(disc, cfg, bq)
    if np.any(mu):
        phin = _flux_normal_basis(disc, bq, mu)
        w = bq.weights[mu]
        fd = V.flux_dofs(bq.cells[mu])
        out["Pu"] = _scatter(fd, fd, w[:, None, None] * phin[:, :, None] * phin[:, None, :], (nu, nu))
        psi = V.pressure_basis(bq.cells[mu], bq.points[mu])
        pd = V.pressure_dofs(bq.cells[mu])
        out["N"] = _scatter(pd, fd, w[:, None, None] * psi[:, :, None] * phin[:, None, :], (npr, nu))
    else:
        out["Pu"] = sp.csr_matrix((nu, nu))
        out["N"] = sp.csr_matrix((npr, nu))

    # right-hand sides
    vq = disc.vq_rhs
    F = np.zeros(nu)
    G = np.zeros(npr)
    if cfg.f is not None:
        phi, _ = V.flux_basis(vq.cells, vq.points)
        fv = cfg.f(vq.points)
        F = _scatter_vec(V.flux_dofs(vq.cells), np.einsum("nkc,nc->nk", phi, fv) * vq.weights[:, None], nu)
    if cfg.g is not None:
        psi = V.pressure_basis(vq.cells, vq.points)
        G = _scatter_vec(V.pressure_dofs(vq.cells), psi * (cfg.g(vq.points) * vq.weights)[:, None], npr)
    out["G"] = G
    out["g_integral"] = float(np.dot(vq.weights, cfg.g(vq.points))) if cfg.g is not None else 0.0

    bq = disc.bq_rhs
    mu = boundary_mask(disc, cfg, bq)
    mp = ~mu
    Ub = np.zeros(nu)
    Pb = np.zeros(nu)
    if np.any(mu):
        if cfg.u_gamma is None:
            raise MissingBoundaryData("flux boundary data u_gamma is required on Γ_u")
        phin = _flux_normal_basis(disc, bq, mu)
        val = cfg.u_gamma(bq.points[mu], bq.normals[mu]) * bq.weights[mu]
        Ub = _scatter_vec(V.flux_dofs(bq.cells[mu]), phin * val[:, None], nu)
    if np.any(mp):
        if cfg.p_gamma is None:
            raise MissingBoundaryData("pressure boundary data p_gamma is required on Γ_p")
        phin = _flux_normal_basis(disc, bq, mp)
        val = cfg.p_gamma(bq.points[mp]) * bq.weights[mp]
        Pb = _scatter_vec(V.flux_dofs(bq.cells[mp]), phin * val[:, None], nu)
    out["F"] = F
    out["Ub"] = Ub
    out["Pb"] = Pb
    return out


# -- bulk stabilisation ------------------------------------------------------

def _stab_cells(disc):
    cut = np.flatnonzero(disc.cls.tags == Tag.CUT)
    return cut, disc.agg.root[cut]


def _ext_block(vals_t, vals_r, w):
    """Local matrix of (v_T - v_R, . ) over points: vals (nc, nq, nb[, 2])."""
    Dm = np.concatenate([vals_t, -vals_r], axis=2)
    if Dm.ndim == 3:
        return np.einsum("cq,cqi,cqj->cij", w, Dm, Dm)
    return np.einsum("cq,cqix,cqjx->cij", w, Dm, Dm)


def assemble_bulk_stab(disc, variant="projection"):
    """Unscaled (S_d, S_0) cell-wise stabilisation over the full cut cells."""
    V = disc.space
    nu, npr = V.n_flux, V.n_pressure
    cut, roots = _stab_cells(disc)
    if len(cut) == 0:
        return sp.csr_matrix((nu, nu)), sp.csr_matrix((npr, npr))
    if variant in ("extension", "bulk_ext"):
        pts, w = V.cell_rule(cut, 2 * V.fe.degree)
        nc, nq = w.shape
        P = pts.reshape(-1, 2)
        ct, cr = np.repeat(cut, nq), np.repeat(roots, nq)
        vt, _ = V.flux_basis(ct, P)
        vr, _ = V.flux_basis(cr, P)
        loc = _ext_block(vt.reshape(nc, nq, -1, 2), vr.reshape(nc, nq, -1, 2), w)
        d = np.concatenate([V.flux_dofs(cut), V.flux_dofs(roots)], axis=1)
        Sd = _scatter(d, d, loc, (nu, nu))
        pts, w = V.cell_rule(cut, max(2 * V.pe.k_p, 1))
        nc, nq = w.shape
        P = pts.reshape(-1, 2)
        qt = V.pressure_basis(np.repeat(cut, nq), P).reshape(nc, nq, -1)
        qr = V.pressure_basis(np.repeat(roots, nq), P).reshape(nc, nq, -1)
        loc = _ext_block(qt, qr, w)
        d = np.concatenate([V.pressure_dofs(cut), V.pressure_dofs(roots)], axis=1)
        return Sd, _scatter(d, d, loc, (npr, npr))
    if variant in ("projection", "bulk_proj"):
        return _projection_stab(disc)
    raise ValueError(f"unknown bulk stabilisation variant {variant!r}")


def _prime_flux_values(name, xi):
    P = np.array(_prime_flux(name))                       # (np, 2, 6)
    return np.einsum("nm,kcm->nkc", monomials(xi), P)


def _prime_pressure_values(k_p, xi):
    M = monomials(xi)
    return M[:, :1] if k_p == 0 else M[:, :3]


def _projection_stab(disc):
    V = disc.space
    mesh = disc.mesh
    h = mesh.h
    nu, npr = V.n_flux, V.n_pressure
    tags = disc.cls.tags
    fdeg, pdeg = 2 * V.fe.degree, max(2 * V.pe.k_p, 1)
    rows_d, vals_d, rows_0, vals_0 = [], [], [], []
    centroids = mesh.vertices[mesh.cells].mean(axis=1)
    for r, members in sorted(disc.agg.nontrivial().items()):
        members = np.array(members)
        c0 = centroids[r]
        # flux
        pts, w = V.cell_rule(members, fdeg)
        nm, nq = w.shape
        P = pts.reshape(-1, 2)
        cells = np.repeat(members, nq)
        phi, _ = V.flux_basis(cells, P)                  # (nm*nq, nb, 2)
        psi = _prime_flux_values(V.fe.name, (P - c0) / h)
        gdofs = V.flux_dofs(members)
        adofs, inv = np.unique(gdofs, return_inverse=True)
        inv = inv.reshape(gdofs.shape)
        nA = len(adofs)
        Phi = np.zeros((nm * nq, nA, 2))
        rows_idx = np.repeat(np.arange(nm), nq)
        for k in range(gdofs.shape[1]):
            Phi[np.arange(nm * nq), inv[rows_idx, k]] += phi[:, k]
        ww = w.ravel()
        G = np.einsum("n,nic,njc->ij", ww, psi, psi)
        C = np.einsum("n,nic,njc->ij", ww, psi, Phi)
        Pm = np.linalg.solve(G, C)
        R = Phi - np.einsum("nic,ij->njc", psi, Pm)
        cutpts = np.isin(cells, members[tags[members] == Tag.CUT])
        S = np.einsum("n,nic,njc->ij", ww * cutpts, R, R)
        rows_d.append(adofs)
        vals_d.append(S)
        # pressure
        pts, w = V.cell_rule(members, pdeg)
        nm, nq = w.shape
        P = pts.reshape(-1, 2)
        cells = np.repeat(members, nq)
        q = V.pressure_basis(cells, P)
        npb = q.shape[1]
        Q = np.zeros((nm * nq, nm * npb))
        ridx = np.repeat(np.arange(nm), nq)
        for k in range(npb):
            Q[np.arange(nm * nq), ridx * npb + k] = q[:, k]
        psi = _prime_pressure_values(V.pe.k_p, (P - c0) / h)
        ww = w.ravel()
        G = np.einsum("n,ni,nj->ij", ww, psi, psi)
        C = np.einsum("n,ni,nj->ij", ww, psi, Q)
        R = Q - psi @ np.linalg.solve(G, C)
        cutpts = np.isin(cells, members[tags[members] == Tag.CUT])
        S = np.einsum("n,ni,nj->ij", ww * cutpts, R, R)
        rows_0.append(V.pressure_dofs(members).ravel())
        vals_0.append(S)
    return _scatter_ragged(rows_d, vals_d, nu), _scatter_ragged(rows_0, vals_0, npr)


def _scatter_ragged(rows, vals, n):
    if not rows:
        return sp.csr_matrix((n, n))
    r = np.concatenate([np.repeat(d, len(d)) for d in rows])
    c = np.concatenate([np.tile(d, len(d)) for d in rows])
    v = np.concatenate([s.ravel() for s in vals])
    M = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return M


# -- face stabilisation ------------------------------------------------------

def assemble_face_stab(disc, facets=None):
    """Unscaled (S_d, S_0) jump penalties on the stabilisation facets."""
    V = disc.space
    mesh = disc.mesh
    nu, npr = V.n_flux, V.n_pressure
    if facets is None:
        facets = select_stab_facets(mesh, disc.cls, disc.agg)
    facets = np.asarray(facets, dtype=np.int64)
    if len(facets) == 0:
        return sp.csr_matrix((nu, nu)), sp.csr_matrix((npr, npr))
    h = mesh.h
    a_cells, b_cells = mesh.facet_cells[facets, 0], mesh.facet_cells[facets, 1]
    s, ws = interval_rule(2 * V.fe.k_u + 2)
    A = mesh.vertices[mesh.facets[facets, 0]]
    B = mesh.vertices[mesh.facets[facets, 1]]
    d = B - A
    length = np.hypot(d[:, 0], d[:, 1])
    n = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    nf, nq = len(facets), len(s)
    P = (A[:, None, :] + s[None, :, None] * d[:, None, :]).reshape(-1, 2)
    w = (length[:, None] * ws[None, :])
    nrm = np.repeat(n, nq, axis=0)
    ca, cb = np.repeat(a_cells, nq), np.repeat(b_cells, nq)

    va, _, ga = V.flux_basis(ca, P, grads=True)
    vb, _, gb = V.flux_basis(cb, P, grads=True)
    nb = va.shape[1]
    loc = h * _ext_block(va.reshape(nf, nq, nb, 2), vb.reshape(nf, nq, nb, 2), w)
    if V.fe.k_u >= 1:
        dna = np.einsum("nkcd,nd->nkc", ga, nrm).reshape(nf, nq, nb, 2)
        dnb = np.einsum("nkcd,nd->nkc", gb, nrm).reshape(nf, nq, nb, 2)
        loc = loc + h**3 * _ext_block(dna, dnb, w)
    dofs = np.concatenate([V.flux_dofs(a_cells), V.flux_dofs(b_cells)], axis=1)
    Sd = _scatter(dofs, dofs, loc, (nu, nu))

    qa, pga = V.pressure_basis(ca, P, grads=True)
    qb, pgb = V.pressure_basis(cb, P, grads=True)
    npb = qa.shape[1]
    loc = h * _ext_block(qa.reshape(nf, nq, npb), qb.reshape(nf, nq, npb), w)
    if V.pe.k_p >= 1:
        loc = loc + h**3 * _ext_block(pga.reshape(nf, nq, npb, 2), pgb.reshape(nf, nq, npb, 2), w)
    dofs = np.concatenate([V.pressure_dofs(a_cells), V.pressure_dofs(b_cells)], axis=1)
    return Sd, _scatter(dofs, dofs, loc, (npr, npr))


def assemble_stabilization(disc, cfg):
    V = disc.space
    if cfg.stab == "none" or (cfg.tau_d == 0 and cfg.tau_0 == 0):
        return sp.csr_matrix((V.n_flux, V.n_flux)), sp.csr_matrix((V.n_pressure, V.n_pressure))
    if cfg.stab == "face":
        facets = select_stab_facets(disc.mesh, disc.cls, disc.agg, full=cfg.full_stab_facets)
        return assemble_face_stab(disc, facets)
    return assemble_bulk_stab(disc, cfg.stab)


# -- constraints, augmented Lagrangian, projection ---------------------------

def assemble_constraints(disc, cfg, core=None):
    """Rows of the two multipliers: flux compatibility and zero pressure mean."""
    if cfg.bc_kind != "flux":
        raise ConstraintInapplicable("multipliers are only used with pure flux conditions")
    V = disc.space
    core = core or assemble_core(disc, cfg)
    bq = disc.bq
    phin = _flux_normal_basis(disc, bq, np.ones(len(bq), dtype=bool))
    c_flux = _scatter_vec(V.flux_dofs(bq.cells), phin * bq.weights[:, None], V.n_flux)
    c_mean = pressure_moments(disc)
    rhs = np.array([-core["g_integral"], 0.0])
    return c_flux, c_mean, rhs


def coupling_weight(core, S0, tau_0):
    """Pressure-space weight W = M0 + tau_0 S0 of the stabilised L2 product."""
    return (core["M0"] + tau_0 * S0).tocsr()


def assemble_augmented_lagrangian(disc, cfg, core, S0):
    """Returns (C_AL, rhs_AL) already multiplied by tau_AL."""
    V = disc.space
    if cfg.tau_al == 0:
        return sp.csr_matrix((V.n_flux, V.n_flux)), np.zeros(V.n_flux)
    W = coupling_weight(core, S0, cfg.tau_0)
    D = core["D"]
    G = core["G"]
    C = D.T @ W @ D
    if cfg.bc_kind == "flux":
        # mean-corrected variant: subtract |Ω|^-1 (div u, 1)(div v, 1)
        m = pressure_moments(disc)
        area = float(disc.vq.weights.sum())
        Dm = D.T @ m
        nz = np.flatnonzero(np.abs(Dm) > 1e-14 * np.abs(Dm).max())
        r, c = np.repeat(nz, len(nz)), np.tile(nz, len(nz))
        C = C - sp.coo_matrix((np.outer(Dm[nz], Dm[nz]).ravel() / area, (r, c)), shape=C.shape).tocsr()
        G = G - m * core["g_integral"] / area
    return cfg.tau_al * sp.csr_matrix(C), -cfg.tau_al * (D.T @ G)


def stabilized_pressure_projection(disc, r, tau_0=0.0, S0=None, M0=None):
    """Coefficients of π r: (π r, q)_Ω + tau_0 s0(π r, q) = (r, q)_Ω."""
    V = disc.space
    stabilised = S0 is not None and tau_0 > 0
    if not stabilised and np.any(disc.cell_measure() <= 1e-14 * disc.mesh.cell_areas()[V.cells]):
        raise SingularMass("an active cell has no Ω-measure and no stabilisation is active")
    if M0 is None:
        M0 = pressure_mass(disc)
    q = disc.vq_rhs
    psi = V.pressure_basis(q.cells, q.points)
    rhs = _scatter_vec(V.pressure_dofs(q.cells), psi * (r(q.points) * q.weights)[:, None], V.n_pressure)
    W = M0 + tau_0 * S0 if stabilised else M0
    return spsolve(W.tocsc(), rhs)


# -- full system -------------------------------------------------------------

def assemble_system(disc, cfg):
    V = disc.space
    nu, npr = V.n_flux, V.n_pressure
    h = disc.h
    core = assemble_core(disc, cfg)
    Sd, S0 = assemble_stabilization(disc, cfg)
    W = coupling_weight(core, S0, cfg.tau_0)
    B = -(W @ core["D"])                                   # (npr, nu)
    Auu = core["Mu"] + (cfg.gamma / h) * core["Pu"] + cfg.tau_d * Sd
    bu = core["F"] + (cfg.gamma / h) * core["Ub"] - core["Pb"]
    if cfg.tau_al > 0:
        C, r = assemble_augmented_lagrangian(disc, cfg, core, S0)
        Auu = Auu + C
        bu = bu + r
    Aup = B.T + core["N"].T
    blocks = [[Auu, Aup], [B, None]]
    rhs = [bu, core["G"]]
    n_mult = 0
    if cfg.bc_kind == "flux":
        c_flux, c_mean, mrhs = assemble_constraints(disc, cfg, core)
        zu, zp = np.zeros(nu), np.zeros(npr)
        Cu = sp.csr_matrix(np.vstack([c_flux, zu]))
        Cp = sp.csr_matrix(np.vstack([zp, c_mean]))
        blocks = [[Auu, Aup, Cu.T], [B, None, Cp.T], [Cu, Cp, None]]
        rhs.append(mrhs)
        n_mult = 2
    A = sp.bmat(blocks, format="csr")
    A.sum_duplicates()
    A.sort_indices()
    blocks_out = dict(core)
    blocks_out.update(Sd=Sd, S0=S0, W=W, B=B)
    return AssembledSystem(A, np.concatenate(rhs), nu, npr, n_mult, blocks_out)
