"""Reference H(div) and L2 elements on the unit triangle and unit square.

Every basis is stored as coefficients over the monomials of degree <= 2, which
gives values, divergences and gradients in closed form.  Flux bases are dual
to facet moments against Legendre polynomials (arc-length parameter running
from the local start vertex to the local end vertex) plus, for RT1, interior
moments against the two constant vectors.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import interval_rule, square_rule, triangle_rule

MONOMIALS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
_MIDX = {m: i for i, m in enumerate(MONOMIALS)}

REF_VERTICES = {
    "tri": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    "quad": np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
}


def ref_facets(cell):
    """(start, end) vertex coordinates of each local facet."""
    V = REF_VERTICES[cell]
    if cell == "quad":
        return [(V[k], V[(k + 1) % 4]) for k in range(4)]
    return [(V[(k + 1) % 3], V[(k + 2) % 3]) for k in range(3)]


def ref_measure(cell):
    return 0.5 if cell == "tri" else 1.0


def ref_rule(cell, degree):
    return triangle_rule(degree) if cell == "tri" else square_rule(degree)


def monomials(x):
    """Values of MONOMIALS at points (N, 2) -> (N, 6)."""
    x = np.asarray(x, dtype=float)
    X, Y = x[:, 0], x[:, 1]
    one = np.ones_like(X)
    return np.stack([one, X, Y, X * X, X * Y, Y * Y], axis=1)


def _derivative_matrix(direction):
    """Matrix mapping monomial coefficients to those of d/dx (0) or d/dy (1)."""
    D = np.zeros((6, 6))
    for j, (px, py) in enumerate(MONOMIALS):
        if direction == 0 and px > 0:
            D[_MIDX[(px - 1, py)], j] = px
        if direction == 1 and py > 0:
            D[_MIDX[(px, py - 1)], j] = py
    return D


DX, DY = _derivative_matrix(0), _derivative_matrix(1)


def _vec(*terms):
    """Vector polynomial (2, 6) from (component, monomial, coef) triples."""
    P = np.zeros((2, 6))
    for comp, mono, coef in terms:
        P[comp, _MIDX[mono]] += coef
    return P


def _legendre(j, s):
    return np.ones_like(s) if j == 0 else 2.0 * s - 1.0


@dataclass(frozen=True)
class FluxElement:
    """Reference flux element; ``coef`` has shape (n, 2, 6)."""

    name: str
    cell: str
    k_u: int            # largest k with P_k^2 contained
    degree: int         # polynomial degree of the space
    dofs_per_facet: int
    n_interior: int
    coef: np.ndarray

    @property
    def n(self):
        return self.coef.shape[0]

    @property
    def n_facets(self):
        return 3 if self.cell == "tri" else 4

    def facet_dofs(self, k):
        return list(range(k * self.dofs_per_facet, (k + 1) * self.dofs_per_facet))

    def interior_dofs(self):
        start = self.n_facets * self.dofs_per_facet
        return list(range(start, start + self.n_interior))

    def values(self, xh):
        return np.einsum("nm,kcm->nkc", monomials(xh), self.coef)

    def divergence(self, xh):
        dcoef = self.coef[:, 0, :] @ DX.T + self.coef[:, 1, :] @ DY.T
        return monomials(xh) @ dcoef.T

    def gradients(self, xh):
        """Reference gradients (N, n, comp, dir)."""
        M = monomials(xh)
        gx = np.einsum("nm,kcm->nkc", M, self.coef @ DX.T)
        gy = np.einsum("nm,kcm->nkc", M, self.coef @ DY.T)
        return np.stack([gx, gy], axis=3)


@dataclass(frozen=True)
class PressureElement:
    name: str
    cell: str
    k_p: int
    coef: np.ndarray    # (n, 6)

    @property
    def n(self):
        return self.coef.shape[0]

    def values(self, xh):
        return monomials(xh) @ self.coef.T

    def gradients(self, xh):
        M = monomials(xh)
        return np.stack([M @ (self.coef @ DX.T).T, M @ (self.coef @ DY.T).T], axis=2)


def _prime_flux(name):
    if name == "RT0_Tri":
        return [_vec((0, (0, 0), 1)), _vec((1, (0, 0), 1)),
                _vec((0, (1, 0), 1), (1, (0, 1), 1))]
    p1 = [_vec((c, m, 1)) for c in (0, 1) for m in ((0, 0), (1, 0), (0, 1))]
    if name == "BDM1_Tri":
        return p1
    if name == "RT1_Tri":
        return p1 + [_vec((0, (2, 0), 1), (1, (1, 1), 1)),
                     _vec((0, (1, 1), 1), (1, (0, 2), 1))]
    if name == "RT0_Quad":
        return [_vec((0, (0, 0), 1)), _vec((0, (1, 0), 1)),
                _vec((1, (0, 0), 1)), _vec((1, (0, 1), 1))]
    raise KeyError(name)


FLUX_SPECS = {
    # name: (cell, k_u, degree, dofs per facet, interior dofs)
    "RT0_Tri": ("tri", 0, 1, 1, 0),
    "BDM1_Tri": ("tri", 1, 1, 2, 0),
    "RT1_Tri": ("tri", 1, 2, 2, 2),
    "RT0_Quad": ("quad", 0, 1, 1, 0),
}


def _flux_dof_matrix(prime, cell, dofs_per_facet, n_interior):
    """Rows: DOF functionals; columns: prime basis functions."""
    P = np.array(prime)                                  # (np, 2, 6)
    rows = []
    s, w = interval_rule(6)
    for a, b in ref_facets(cell):
        d = b - a
        length = np.hypot(*d)
        nrm = np.array([d[1], -d[0]]) / length
        pts = a[None, :] + s[:, None] * d[None, :]
        vals = np.einsum("nm,kcm->nkc", monomials(pts), P) @ nrm   # (nq, np)
        for j in range(dofs_per_facet):
            rows.append((w * length * _legendre(j, s)) @ vals)
    if n_interior:
        q, wq = ref_rule(cell, 4)
        vals = np.einsum("nm,kcm->nkc", monomials(q), P)
        for c in range(n_interior):
            rows.append(wq @ vals[:, :, c])
    return np.array(rows)


@lru_cache(maxsize=None)
def flux_element(name):
    cell, k_u, degree, dpf, nint = FLUX_SPECS[name]
    prime = _prime_flux(name)
    V = _flux_dof_matrix(prime, cell, dpf, nint)
    C = np.linalg.inv(V)                                  # basis_k = sum_m prime_m C[m, k]
    coef = np.einsum("mk,mcx->kcx", C, np.array(prime))
    coef[np.abs(coef) < 1e-14] = 0.0
    return FluxElement(name, cell, k_u, degree, dpf, nint, coef)


@lru_cache(maxsize=None)
def pressure_element(name):
    coef = np.zeros((3 if name == "P1" else 1, 6))
    coef[0, 0] = 1.0
    if name == "P1":
        # centred at the reference centroid
        coef[1, 1], coef[1, 0] = 1.0, -1.0 / 3.0
        coef[2, 2], coef[2, 0] = 1.0, -1.0 / 3.0
        return PressureElement(name, "tri", 1, coef)
    if name in ("P0", "Q0"):
        return PressureElement(name, "tri" if name == "P0" else "quad", 0, coef)
    raise KeyError(name)


ELEMENT_PAIRS = {
    "RT0xQ0": ("RT0_Quad", "Q0"),
    "RT0xP0": ("RT0_Tri", "P0"),
    "BDM1xP0": ("BDM1_Tri", "P0"),
    "RT1xP1": ("RT1_Tri", "P1"),
}


def element_pair(name):
    """Resolve a pair name such as ``RT0xQ0`` (also accepts RT0/BDM1/RT1 shorthands)."""
    short = {"RT0": "RT0xP0", "BDM1": "BDM1xP0", "RT1": "RT1xP1", "RT0Q": "RT0xQ0"}
    key = short.get(name, name)
    if key not in ELEMENT_PAIRS:
        raise KeyError(f"unknown element pair {name!r}")
    fe, pe = ELEMENT_PAIRS[key]
    return key, flux_element(fe), pressure_element(pe)


def div_to_pressure(fe, pe):
    """Reference matrix D with div(phi_k) = sum_j D[j, k] q_j (exact)."""
    q, w = ref_rule(fe.cell, 2 * max(fe.degree, 1) + 2)
    Q = pe.values(q)
    M = Q.T @ (w[:, None] * Q)
    rhs = Q.T @ (w[:, None] * fe.divergence(q))
    return np.linalg.solve(M, rhs)

