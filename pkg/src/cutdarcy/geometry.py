"""Implicit domains, cut-cell clipping and quadrature on cut cells.

Domains are described by a level-set function that is negative inside.  The
polygonal domains (offset square, rectangle) are clipped exactly with
half-plane clipping; the annulus is linearised with a fixed number of chords
per boundary arc.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateCell
from .quadrature import interval_rule, triangle_rule

BOUNDARY_TOL = 1e-12


class PointClass(Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    ON_BOUNDARY = "on_boundary"


@dataclass(frozen=True)
class LevelSetDomain:
    """Level-set description of the physical domain.

    ``kind`` is one of ``"offset_square"`` (params ``L, h_cut``), ``"rectangle"``
    (``x0, y0, x1, y1``) or ``"annulus"`` (``xc, yc, r1, r2``).
    """

    kind: str
    params: tuple

    @classmethod
    def offset_square(cls, L, h_cut):
        return cls("offset_square", (float(L), float(h_cut)))

    @classmethod
    def rectangle(cls, x0, y0, x1, y1):
        return cls("rectangle", (float(x0), float(y0), float(x1), float(y1)))

    @classmethod
    def annulus(cls, xc, yc, r1, r2):
        return cls("annulus", (float(xc), float(yc), float(r1), float(r2)))

    @property
    def is_polygonal(self):
        return self.kind in ("offset_square", "rectangle")

    @property
    def scale(self):
        if self.kind == "offset_square":
            L, hc = self.params
            return max(L + 2 * hc, L)
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            return max(x1 - x0, y1 - y0)
        return self.params[3]

    @property
    def tol(self):
        return BOUNDARY_TOL * self.scale

    def box(self):
        """Return (x0, y0, x1, y1) for the polygonal kinds."""
        if self.kind == "offset_square":
            L, hc = self.params
            a = L / 2 + hc
            return (-a, -a, a, a)
        if self.kind == "rectangle":
            return self.params
        raise ValueError("annulus has no bounding rectangle representation")

    def eval(self, pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if self.kind == "annulus":
            xc, yc, r1, r2 = self.params
            r = np.hypot(x - xc, y - yc)
            return np.maximum(r1 - r, r - r2)
        x0, y0, x1, y1 = self.box()
        return np.maximum.reduce([x0 - x, x - x1, y0 - y, y - y1])

    def half_planes(self):
        """Half-planes ``n . x <= c`` whose intersection is the domain."""
        x0, y0, x1, y1 = self.box()
        return [
            (np.array([0.0, -1.0]), -y0),
            (np.array([1.0, 0.0]), x1),
            (np.array([0.0, 1.0]), y1),
            (np.array([-1.0, 0.0]), -x0),
        ]

    def measure(self):
        if self.kind == "annulus":
            r1, r2 = self.params[2:]
            return np.pi * (r2**2 - r1**2)
        x0, y0, x1, y1 = self.box()
        return (x1 - x0) * (y1 - y0)

    def perimeter(self):
        if self.kind == "annulus":
            r1, r2 = self.params[2:]
            return 2 * np.pi * (r1 + r2)
        x0, y0, x1, y1 = self.box()
        return 2 * ((x1 - x0) + (y1 - y0))


def classify_point(dom, p):
    value = float(dom.eval(np.asarray(p, dtype=float)))
    if abs(value) <= dom.tol:
        return PointClass.ON_BOUNDARY
    return PointClass.INSIDE if value < 0 else PointClass.OUTSIDE


@dataclass
class CutPolygon:
    """Realisation of ``T ∩ Ω`` for one background cell (CCW vertices)."""

    vertices: np.ndarray
    source_cell: int = -1
    boundary_segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 2)))

    @property
    def area(self):
        return polygon_area(self.vertices)

    def centroid(self):
        return polygon_centroid(self.vertices)


@dataclass
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray = None

    def integrate(self, f):
        if len(self.weights) == 0:
            return 0.0
        return float(np.dot(self.weights, f(self.points)))


def polygon_area(v):
    v = np.asarray(v, dtype=float)
    if len(v) < 3:
        return 0.0
    # local origin: avoids cancellation for tiny polygons far from 0
    v = v - v[0]
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(v):
    v = np.asarray(v, dtype=float)
    o = v[0].copy()
    v = v - o
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if a == 0.0:
        return o + v.mean(axis=0)
    return o + np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _dedup(pts, eps):
    out = []
    for p in pts:
        if not out or np.abs(p - out[-1]).max() > eps:
            out.append(p)
    while len(out) > 1 and np.abs(out[0] - out[-1]).max() <= eps:
        out.pop()
    return out


def _clip_halfplane(pts, n, c):
    """Sutherland-Hodgman step keeping ``n . x <= c`` (closed)."""
    out = []
    m = len(pts)
    for i in range(m):
        cur, nxt = pts[i], pts[(i + 1) % m]
        dc, dn = n @ cur - c, n @ nxt - c
        if dc <= 0:
            out.append(cur)
        if (dc < 0 < dn) or (dn < 0 < dc):
            t = dc / (dc - dn)
            p = cur + t * (nxt - cur)
            # snap onto the clip line to keep boundary detection exact
            p = p - (n @ p - c) * n
            out.append(p)
    return out


def _boundary_edges(dom, verts):
    segs = []
    m = len(verts)
    vals = np.abs(dom.eval(verts))
    for i in range(m):
        j = (i + 1) % m
        if vals[i] <= dom.tol and vals[j] <= dom.tol:
            mid = 0.5 * (verts[i] + verts[j])
            if abs(float(dom.eval(mid))) <= dom.tol:
                segs.append((verts[i], verts[j]))
    return np.array(segs).reshape(-1, 2, 2)


def _bisect(dom, a, b, fa, rel=1e-12):
    # fa <= 0 < fb or fa > 0 >= fb; returns the crossing point
    lo, hi = 0.0, 1.0
    ins_a = fa <= 0
    length = np.linalg.norm(b - a)
    while (hi - lo) * length > rel * max(length, dom.scale):
        mid = 0.5 * (lo + hi)
        fm = float(dom.eval(a + mid * (b - a)))
        if (fm <= 0) == ins_a:
            lo = mid
        else:
            hi = mid
    return a + 0.5 * (lo + hi) * (b - a)


def _annulus_arc(dom, p, q, n_sub):
    """Chord points strictly between exit ``p`` and entry ``q`` (Ω kept on the left)."""
    xc, yc, r1, r2 = dom.params
    c = np.array([xc, yc])
    rp = np.linalg.norm(p - c)
    outer = abs(rp - r2) <= abs(rp - r1)
    r = r2 if outer else r1
    tp = np.arctan2(*(p - c)[::-1])
    tq = np.arctan2(*(q - c)[::-1])
    if outer:
        dt = (tq - tp) % (2 * np.pi)
    else:
        dt = -((tp - tq) % (2 * np.pi))
    ts = tp + dt * np.arange(1, n_sub) / n_sub
    return [c + r * np.array([np.cos(t), np.sin(t)]) for t in ts]


def _clip_curved(dom, cell, n_sub, samples=8):
    m = len(cell)
    # walk the perimeter, recording vertices and crossings
    walk = []  # (point, kind) with kind in {"in", "entry", "exit"}
    any_inside = False
    for i in range(m):
        a, b = cell[i], cell[(i + 1) % m]
        ts = np.linspace(0.0, 1.0, samples + 1)
        pts = a + ts[:, None] * (b - a)
        vals = dom.eval(pts)
        if vals[0] <= 0:
            walk.append((a, "in"))
            any_inside = True
        for k in range(samples):
            ins0, ins1 = vals[k] <= 0, vals[k + 1] <= 0
            if ins0 != ins1:
                x = _bisect(dom, pts[k], pts[k + 1], vals[k])
                walk.append((x, "exit" if ins0 else "entry"))
    kinds = [k for _, k in walk]
    if "exit" not in kinds:
        return ([p for p, _ in walk] if any_inside else []), []
    start = kinds.index("entry") if "entry" in kinds else 0
    walk = walk[start:] + walk[:start]
    out, segs = [], []
    for idx, (p, kind) in enumerate(walk):
        out.append(p)
        if kind == "exit":
            q = next(pt for pt, kd in walk[idx + 1:] + walk[:idx + 1] if kd == "entry")
            arc = _annulus_arc(dom, p, q, n_sub)
            chain = [p] + arc + [q]
            segs.extend(zip(chain[:-1], chain[1:]))
            out.extend(arc)
    return out, segs


def clip_cell(dom, cell_polygon, n_sub=4, source_cell=-1):
    """Intersect a convex cell with the domain; returns ``None`` when empty."""
    cell = np.asarray(cell_polygon, dtype=float)
    cell_area = polygon_area(cell)
    diam2 = max(np.sum((cell[i] - cell[j]) ** 2) for i in range(len(cell)) for j in range(i))
    if cell_area < 1e-14 * diam2:
        raise DegenerateCell(f"cell {source_cell} has near-zero area {cell_area:g}")
    eps = 1e-15 * np.sqrt(diam2)
    if dom.is_polygonal:
        pts = [p for p in cell]
        for n, c in dom.half_planes():
            pts = _clip_halfplane(pts, n, c)
            if not pts:
                return None
        pts = _dedup(pts, eps)
        if len(pts) < 3:
            return None
        verts = np.array(pts)
        segs = _boundary_edges(dom, verts)
    else:
        pts, seg_list = _clip_curved(dom, cell, n_sub)
        pts = _dedup(pts, eps)
        if len(pts) < 3:
            return None
        verts = np.array(pts)
        segs = np.array([(a, b) for a, b in seg_list if np.abs(a - b).max() > eps]).reshape(-1, 2, 2)
    area = polygon_area(verts)
    # only (numerically) exact-zero intersections are dropped; slivers are kept
    if area <= 1e-15 * cell_area:
        return None
    return CutPolygon(verts, source_cell, segs)


def fan_triangles(poly):
    """Triangles (3, 2) fanning the polygon from its area centroid."""
    v = np.asarray(poly.vertices if isinstance(poly, CutPolygon) else poly, dtype=float)
    c = polygon_centroid(v)
    nv = np.roll(v, -1, axis=0)
    return np.stack([np.broadcast_to(c, v.shape), v, nv], axis=1)


def triangles_quadrature(tris, order):
    """Map the reference triangle rule onto each triangle; signed-area weights."""
    ref_pts, ref_w = triangle_rule(order)
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = a[:, None, :] + ref_pts[None, :, :1] * e1[:, None, :] + ref_pts[None, :, 1:] * e2[:, None, :]
    w = det[:, None] * ref_w[None, :]
    return pts.reshape(-1, 2), w.ravel()


def volume_quadrature(poly, order):
    """Rule over the polygon exact for polynomials of degree <= order.

    Sub-triangles use signed areas, so the rule stays exact even when the fan
    centre does not see every edge (possible on concave annulus cuts); for the
    convex cuts produced by polygonal domains every weight is positive.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    v = poly.vertices if isinstance(poly, CutPolygon) else np.asarray(poly, dtype=float)
    if len(v) < 3 or polygon_area(v) <= 0.0:
        return QuadratureRule(np.zeros((0, 2)), np.zeros(0))
    pts, w = triangles_quadrature(fan_triangles(v), order)
    return QuadratureRule(pts, w)


def segments_quadrature(segs, order):
    """Gauss rule on each segment (nseg, 2, 2); returns points, weights, normals."""
    segs = np.asarray(segs, dtype=float).reshape(-1, 2, 2)
    if len(segs) == 0:
        return np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2))
    s, ws = interval_rule(order)
    a, b = segs[:, 0], segs[:, 1]
    d = b - a
    length = np.hypot(d[:, 0], d[:, 1])
    pts = a[:, None, :] + s[None, :, None] * d[:, None, :]
    w = length[:, None] * ws[None, :]
    nrm = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    nrm = np.repeat(nrm[:, None, :], len(s), axis=1)
    return pts.reshape(-1, 2), w.ravel(), nrm.reshape(-1, 2)


def boundary_quadrature(poly, order):
    """Gauss rule on the domain-boundary edges of a cut polygon, with outward normals."""
    pts, w, n = segments_quadrature(poly.boundary_segments, order)
    return QuadratureRule(pts, w, n)


def write_polygons(polys, path):
    """Dump polygons as ``cell_id x1 y1 x2 y2 ...`` lines."""
    with open(path, "w") as fh:
        for poly in polys:
            coords = " ".join(f"{x:.17g} {y:.17g}" for x, y in poly.vertices)
            fh.write(f"{poly.source_cell} {coords}\n")
