"""Manufactured solutions, error norms, rates and the single-run driver."""
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InsufficientData, Singular
from .forms import Discretization, ProblemConfig, assemble_system, stabilized_pressure_projection
from .geometry import LevelSetDomain
from .integration import domain_quadrature, sample_points
from .mesh import build_background
from .solver import condest_1norm, factor, solve

PI = math.pi


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    u: Callable
    p: Callable
    div_u: Callable
    grad_p: Callable
    domain: str
    bc_kinds: tuple = ("pressure", "flux", "mixed")
    eta: float = 1.0

    def f(self, x):
        return self.eta * self.u(x) + self.grad_p(x)

    def g(self, x):
        return -self.div_u(x)


def _smooth():
    def u(x):
        return np.column_stack([x[:, 0] + np.sin(PI * x[:, 1]), -x[:, 1] + np.sin(PI * x[:, 0])])

    def p(x):
        return np.sin(PI * x[:, 0]) - np.sin(PI * x[:, 1])

    def gp(x):
        return np.column_stack([PI * np.cos(PI * x[:, 0]), -PI * np.cos(PI * x[:, 1])])

    return ManufacturedCase("smooth-square", u, p, lambda x: np.zeros(len(x)), gp, "square")


def _robust():
    base = _smooth()

    def u(x):
        return np.column_stack([x[:, 0], -x[:, 1]])

    return ManufacturedCase("pressure-robust", u, base.p, lambda x: np.zeros(len(x)),
                            base.grad_p, "square")


def _rectangle():
    def u(x):
        return np.column_stack([x[:, 0] * (x[:, 0] - 1), x[:, 1] * (x[:, 1] - 0.5)])

    def p(x):
        X, Y = x[:, 0], x[:, 1]
        return -(X**3 / 3 - X**2 / 2 + Y**3 / 3 - Y**2 / 4)

    def div_u(x):
        return (2 * x[:, 0] - 1) + (2 * x[:, 1] - 0.5)

    def gp(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([-(X**2 - X), -(Y**2 - Y / 2)])

    return ManufacturedCase("rectangle-linear-g", u, p, div_u, gp, "rectangle")


def builtin_cases():
    return [_smooth(), _robust(), _rectangle()]


def get_case(name):
    for c in builtin_cases():
        if c.name == name:
            return c
    raise KeyError(f"unknown case {name!r}")


# -- run description ---------------------------------------------------------

METHODS = {
    # name: (stabilisation, uses AL)
    "std": ("none", False),
    "BGP-ext": ("bulk_ext", False),
    "BGP-proj": ("bulk_proj", False),
    "BGP": ("bulk_proj", False),
    "AL-BGP": ("bulk_proj", True),
    "FGP": ("face", False),
}


@dataclass
class RunParams:
    case: str = "smooth-square"
    method: str = "BGP"
    element: str = "RT0xQ0"
    bc: str = "pressure"
    n: int = 8
    hcut_ratio: float = 0.5
    gamma: float = 1.0
    tau_d: float = 1.0
    tau_0: float = 1.0
    tau_al: float = 1.0
    delta: float = 1.0
    n_sub: int = 4
    quad_order: int = 10
    L: float = 1.0
    condest: bool = True
    study: str = "Single"

    def effective(self):
        """Parameters actually used: std zeroes the stabilisation, non-AL methods zero tau_al."""
        stab, al = METHODS[self.method]
        p = self
        if stab == "none":
            p = replace(p, tau_d=0.0, tau_0=0.0)
        if not al:
            p = replace(p, tau_al=0.0)
        return p


def build_geometry(params):
    """Background mesh and level-set domain for a run."""
    case = get_case(params.case)
    el = params.element
    kind = "quad" if el in ("RT0xQ0", "RT0Q") else "tri"
    r = float(params.hcut_ratio)
    if case.domain == "square":
        n = int(params.n)
        L = params.L
        h = L / (n - 2)
        a = h + L / 2
        mesh = build_background(kind, n, (-a, -a, a, a))
        dom = LevelSetDomain.offset_square(L, r * h)
        return mesh, dom
    # rectangle [0,1]x[0,0.5]: n cells per unit length, grid shifted by r*h
    n = int(params.n)
    h = 1.0 / n
    x0 = y0 = -r * h
    nx = int(math.ceil((1.0 - x0) / h - 1e-9))
    ny = int(math.ceil((0.5 - y0) / h - 1e-9))
    mesh = build_background(kind, (nx, ny), (x0, y0, x0 + nx * h, y0 + ny * h))
    return mesh, LevelSetDomain.rectangle(0.0, 0.0, 1.0, 0.5)


def problem_config(params, case):
    stab, _ = METHODS[params.method]
    p = params.effective()
    return ProblemConfig(
        bc_kind=params.bc, gamma=p.gamma, tau_d=p.tau_d, tau_0=p.tau_0, tau_al=p.tau_al,
        stab=stab, eta=case.eta, f=case.f, g=case.g,
        u_gamma=lambda x, nrm: np.einsum("ni,ni->n", case.u(x), nrm),
        p_gamma=case.p,
    )


@dataclass
class ErrorReport:
    params: RunParams
    h: float
    dofs: int
    err_u_L2: float = math.nan
    err_p_L2: float = math.nan
    err_divu_L2: float = math.nan
    err_divu_Linf: float = math.nan
    penalty: float = math.nan
    mass_residual: float = math.nan
    flux_compat: float = math.nan
    cond1: float = math.nan
    status: str = "ok"
    extra: dict = field(default_factory=dict)


@dataclass
class Solution:
    disc: Discretization
    cfg: ProblemConfig
    system: object
    x: np.ndarray

    @property
    def u(self):
        return self.system.split(self.x)[0]

    @property
    def p(self):
        return self.system.split(self.x)[1]


def solve_run(params, want_cond=None):
    """Assemble, factor and solve one configuration.

    Returns (Solution or None, cond estimate, status).
    """
    case = get_case(params.case)
    mesh, dom = build_geometry(params)
    disc = Discretization(mesh, dom, params.element, delta=params.delta, n_sub=params.n_sub,
                          rhs_order=params.quad_order)
    cfg = problem_config(params, case)
    system = assemble_system(disc, cfg)
    try:
        F = factor(system.A)
        x = solve(F, system.b)
        want = params.condest if want_cond is None else want_cond
        cond = condest_1norm(system.A, F) if want else math.nan
    except Singular:
        return Solution(disc, cfg, system, None), math.inf, "Singular"
    return Solution(disc, cfg, system, x), cond, "ok"


def error_norms(sol, case, order=10):
    """Errors over Ω (cut quadrature) plus conservation diagnostics."""
    disc, V = sol.disc, sol.disc.space
    q = domain_quadrature(disc.mesh, disc.cls, order)
    uh, divh = V.eval_flux(sol.u, q.cells, q.points)
    ph = V.eval_pressure(sol.p, q.cells, q.points)
    w = q.weights
    pe = case.p(q.points)
    if sol.cfg.bc_kind == "flux":
        area = w.sum()
        pe = pe - np.dot(w, pe) / area
        ph = ph - np.dot(w, ph) / area
    out = {
        "err_u_L2": math.sqrt(max(np.dot(w, ((uh - case.u(q.points)) ** 2).sum(1)), 0.0)),
        "err_p_L2": math.sqrt(max(np.dot(w, (ph - pe) ** 2), 0.0)),
        "err_divu_L2": math.sqrt(max(np.dot(w, (divh - case.div_u(q.points)) ** 2), 0.0)),
    }
    cells, pts = sample_points(disc.mesh, disc.cls, order)
    _, divs = V.eval_flux(sol.u, cells, pts)
    out["err_divu_Linf"] = float(np.abs(divs - case.div_u(pts)).max())
    # boundary penalty term (gamma/h)||(u_h - u).n||^2 on Γ_u
    bq = disc.bq_rhs
    from .forms import boundary_mask
    mu = boundary_mask(disc, sol.cfg, bq)
    if np.any(mu):
        ub, _ = V.eval_flux(sol.u, bq.cells[mu], bq.points[mu])
        jump = np.einsum("ni,ni->n", ub - case.u(bq.points[mu]), bq.normals[mu])
        out["penalty"] = math.sqrt(sol.cfg.gamma / disc.h * np.dot(bq.weights[mu], jump**2))
        out["flux_compat"] = abs(np.dot(bq.weights[mu], np.einsum(
            "ni,ni->n", ub, bq.normals[mu])) + sol.system.blocks["g_integral"])
    else:
        out["penalty"] = 0.0
    out["mass_residual"] = mass_residual(sol)
    return out


def mass_residual(sol):
    """max over Ω_h of |div u_h + π(g)|, sampled at full-cell quadrature points and vertices."""
    disc, V = sol.disc, sol.disc.space
    D = sol.system.blocks["D"]
    pig = stabilized_pressure_projection(disc, sol.cfg.g, sol.cfg.tau_0, sol.system.blocks["S0"],
                                         M0=sol.system.blocks["M0"])
    r = D @ sol.u + pig
    pts, _ = V.cell_rule(V.cells, 4)
    nq = pts.shape[1]
    cells = np.concatenate([np.repeat(V.cells, nq), np.repeat(V.cells, disc.mesh.cells.shape[1])])
    P = np.concatenate([pts.reshape(-1, 2), disc.mesh.vertices[disc.mesh.cells[V.cells]].reshape(-1, 2)])
    return float(np.abs(V.eval_pressure(r, cells, P)).max())


def run(params):
    """Solve one configuration and return its ErrorReport."""
    case = get_case(params.case)
    sol, cond, status = solve_run(params)
    rep = ErrorReport(params, sol.disc.h, sol.system.n, cond1=cond, status=status)
    if status != "ok":
        return rep
    for k, v in error_norms(sol, case, params.quad_order).items():
        setattr(rep, k, v)
    return rep


def convergence_rates(hs, errors):
    """Least-squares slope of log(error) against log(h) and the pairwise rates."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(hs) < 3:
        raise InsufficientData(f"need at least 3 refinements, got {len(hs)}")
    if np.any(hs <= 0) or np.any(~np.isfinite(errors)) or np.any(errors <= 0):
        raise InsufficientData("errors and mesh sizes must be positive and finite")
    lh, le = np.log(hs), np.log(errors)
    slope = float(np.polyfit(lh, le, 1)[0])
    pair = np.diff(le) / np.diff(lh)
    return slope, pair
