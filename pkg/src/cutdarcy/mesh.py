"""Structured background meshes, cell classification and aggregation."""
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import InvalidDimensions, OrphanCutCell
from .geometry import clip_cell


class Tag(IntEnum):
    IN = 0
    CUT = 1
    OUT = 2


@dataclass
class BackgroundMesh:
    """Structured quadrilateral or triangle mesh of a rectangle.

    Cells are stored counter-clockwise.  Local facet ``k`` of a quad joins
    vertices ``k`` and ``k+1``; local facet ``k`` of a triangle is the edge
    opposite vertex ``k`` (vertices ``k+1``, ``k+2``).
    """

    kind: str
    nx: int
    ny: int
    bbox: tuple
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray          # (nf, 2) vertex ids, sorted ascending
    facet_cells: np.ndarray     # (nf, 2), second entry -1 on the box boundary
    cell_facets: np.ndarray     # (nc, nloc)
    h: float

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_facets(self):
        return len(self.facets)

    def cell_coords(self, c=None):
        if c is None:
            return self.vertices[self.cells]
        return self.vertices[self.cells[c]]

    def affine_maps(self):
        """Origins (nc, 2), Jacobians (nc, 2, 2) and determinants of the reference maps."""
        xy = self.vertices[self.cells]
        origin = xy[:, 0]
        if self.kind == "quad":
            J = np.stack([xy[:, 1] - origin, xy[:, 3] - origin], axis=2)
        else:
            J = np.stack([xy[:, 1] - origin, xy[:, 2] - origin], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return origin, J, det

    def cell_areas(self):
        return self.affine_maps()[2] * (1.0 if self.kind == "quad" else 0.5)

    def local_facet_vertices(self, c, k):
        cell = self.cells[c]
        if self.kind == "quad":
            return cell[k], cell[(k + 1) % 4]
        return cell[(k + 1) % 3], cell[(k + 2) % 3]

    def neighbours(self, c):
        out = []
        for f in self.cell_facets[c]:
            a, b = self.facet_cells[f]
            other = b if a == c else a
            if other >= 0:
                out.append((int(other), int(f)))
        return out


def build_background(kind, n, bbox):
    """Uniform ``nx x ny`` mesh of ``bbox``; triangles split along the anti-diagonal."""
    if kind not in ("quad", "tri"):
        raise InvalidDimensions(f"unknown mesh kind {kind!r}")
    nx, ny = (n, n) if np.isscalar(n) else n
    nx, ny = int(nx), int(ny)
    x0, y0, x1, y1 = map(float, bbox)
    if nx < 2 or ny < 2 or not (x1 > x0 and y1 > y0):
        raise InvalidDimensions(f"need n >= 2 and a non-empty box, got {nx}x{ny} on {bbox}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
    if kind == "quad":
        cells = np.column_stack([v00, v10, v11, v01])
        loc = [(0, 1), (1, 2), (2, 3), (3, 0)]
    else:
        lower = np.column_stack([v00, v10, v01])
        upper = np.column_stack([v10, v11, v01])
        cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
        loc = [(1, 2), (2, 0), (0, 1)]
    nc, nloc = cells.shape
    pairs = np.stack([cells[:, [a, b]] for a, b in loc], axis=1)  # (nc, nloc, 2)
    pairs = np.sort(pairs, axis=2).reshape(-1, 2)
    facets, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cell_facets = inverse.reshape(nc, nloc)
    owner = np.repeat(np.arange(nc), nloc)
    facet_cells = np.full((len(facets), 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    sorted_f = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_f[1:] != sorted_f[:-1]
    facet_cells[sorted_f[first], 0] = owner[order][first]
    facet_cells[sorted_f[~first], 1] = owner[order][~first]
    h = max((x1 - x0) / nx, (y1 - y0) / ny)
    return BackgroundMesh(kind, nx, ny, (x0, y0, x1, y1), vertices, cells, facets,
                          facet_cells, cell_facets, h)


@dataclass
class CellClassification:
    tags: np.ndarray
    delta: float
    fraction: np.ndarray
    polygons: dict = field(default_factory=dict)  # cell -> CutPolygon (clipped cells only)

    @property
    def active(self):
        return np.flatnonzero(self.tags != Tag.OUT)

    @property
    def n_in(self):
        return int(np.sum(self.tags == Tag.IN))

    @property
    def n_cut(self):
        return int(np.sum(self.tags == Tag.CUT))

    def is_full(self, c):
        """True when the whole cell lies in Ω and touches no boundary."""
        return self.tags[c] != Tag.OUT and c not in self.polygons


def _screen(mesh, dom):
    """Vectorised pre-screen: (strictly inside, certainly outside) masks."""
    xy = mesh.vertices[mesh.cells]
    vals = dom.eval(xy)
    inside = np.all(vals < -dom.tol, axis=1)
    if dom.is_polygonal:
        outside = np.zeros(len(xy), dtype=bool)
        for n, c in dom.half_planes():
            outside |= np.all(xy @ n - c >= -dom.tol, axis=1)
        return inside, outside
    xc, yc, r1, r2 = dom.params
    ctr = xy.mean(axis=1)
    rad = np.max(np.linalg.norm(xy - ctr[:, None, :], axis=2), axis=1)
    dist = np.hypot(ctr[:, 0] - xc, ctr[:, 1] - yc)
    inside = (dist - rad > r1 + dom.tol) & (dist + rad < r2 - dom.tol)
    outside = (dist + rad < r1 - dom.tol) | (dist - rad > r2 + dom.tol)
    return inside, outside


def classify_cells(mesh, dom, delta=1.0, n_sub=4):
    """Tag cells IN / CUT / OUT from their volume fraction ``|T ∩ Ω| / |T|``."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    nc = mesh.n_cells
    fraction = np.zeros(nc)
    inside, outside = _screen(mesh, dom)
    fraction[inside] = 1.0
    polygons = {}
    areas = mesh.cell_areas()
    xy = mesh.vertices[mesh.cells]
    for c in np.flatnonzero(~inside & ~outside):
        poly = clip_cell(dom, xy[c], n_sub=n_sub, source_cell=int(c))
        if poly is None:
            continue
        polygons[int(c)] = poly
        fraction[c] = min(poly.area / areas[c], 1.0)
    tags = np.full(nc, Tag.OUT, dtype=np.int8)
    active = fraction > 0.0
    tags[active] = Tag.CUT
    tags[active & (fraction >= delta * (1.0 - 1e-12))] = Tag.IN
    return CellClassification(tags, float(delta), fraction, polygons)


@dataclass
class AggregateMap:
    root: np.ndarray          # root cell per cell (-1 for OUT)
    members: dict             # root -> sorted member cells
    tree_facet: np.ndarray    # facet linking a cell to its BFS parent (-1 for roots)

    def nontrivial(self):
        return {r: m for r, m in self.members.items() if len(m) > 1}


def build_aggregates(mesh, cls):
    """Multi-source BFS from all IN cells through CUT cells.

    A CUT cell joins the aggregate of the first IN cell reaching it, ties going
    to the smallest root id (then the smallest parent id).
    """
    nc = mesh.n_cells
    root = np.full(nc, -1, dtype=np.int64)
    tree_facet = np.full(nc, -1, dtype=np.int64)
    roots = np.flatnonzero(cls.tags == Tag.IN)
    root[roots] = roots
    frontier = list(roots)
    cut = cls.tags == Tag.CUT
    remaining = int(cut.sum())
    while frontier and remaining:
        offers = {}
        for p in frontier:
            for q, f in mesh.neighbours(p):
                if cut[q] and root[q] < 0:
                    key = (root[p], p, f)
                    if q not in offers or key < offers[q]:
                        offers[q] = key
        for q in sorted(offers):
            r, _, f = offers[q]
            root[q] = r
            tree_facet[q] = f
        remaining -= len(offers)
        frontier = sorted(offers)
    orphans = np.flatnonzero(cut & (root < 0))
    if len(orphans):
        raise OrphanCutCell(int(orphans[0]))
    members = {}
    for c in np.flatnonzero(root >= 0):
        members.setdefault(int(root[c]), []).append(int(c))
    return AggregateMap(root, members, tree_facet)


def cut_facets(mesh, cls):
    """Interior facets of the active mesh touching at least one CUT cell."""
    fc = mesh.facet_cells
    interior = (fc[:, 1] >= 0)
    a = cls.tags[fc[:, 0]]
    b = np.where(interior, cls.tags[np.maximum(fc[:, 1], 0)], Tag.OUT)
    both_active = interior & (a != Tag.OUT) & (b != Tag.OUT)
    return np.flatnonzero(both_active & ((a == Tag.CUT) | (b == Tag.CUT)))


def select_stab_facets(mesh, cls, agg, full=False):
    """Facets carrying face-based stabilisation.

    By default the BFS-tree facets of every non-trivial aggregate; with
    ``full=True`` every facet of ``cut_facets``.
    """
    if full:
        return cut_facets(mesh, cls)
    return np.sort(agg.tree_facet[agg.tree_facet >= 0])


def aggregate_diameter(mesh, cells):
    pts = mesh.vertices[mesh.cells[cells]].reshape(-1, 2)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(axis=2)).max())


def write_mesh_csv(mesh, cls, agg, fh):
    fh.write("cell,tag,fraction,root\n")
    for c in range(mesh.n_cells):
        r = agg.root[c] if agg is not None else -1
        fh.write(f"{c},{Tag(cls.tags[c]).name},{cls.fraction[c]:.17g},{r}\n")
