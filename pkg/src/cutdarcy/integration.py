"""Flattened quadrature over the physical domain and its boundary.

Points are stored cell by cell so per-cell sums reduce with ``np.add.reduceat``.
Full cells use the mapped reference rule; clipped cells use the fan rule of
their polygon.
"""
from dataclasses import dataclass

import numpy as np

from .elements import REF_VERTICES, ref_rule
from .geometry import segments_quadrature, volume_quadrature


@dataclass
class CellPoints:
    cells: np.ndarray       # owning background cell per point
    points: np.ndarray
    weights: np.ndarray
    cell_list: np.ndarray   # one entry per group
    starts: np.ndarray      # first point of each group
    normals: np.ndarray = None

    def __len__(self):
        return len(self.weights)

    def reduce(self, values):
        """Per-group sums of ``values`` (N, ...) -> (ngroups, ...)."""
        if len(self.cell_list) == 0:
            return np.zeros((0,) + np.shape(values)[1:])
        return np.add.reduceat(values, self.starts, axis=0)


def _group(cells, points, weights, normals=None):
    cells = np.asarray(cells, dtype=np.int64)
    if len(cells) == 0:
        return CellPoints(cells, np.zeros((0, 2)), np.zeros(0), cells, cells,
                          None if normals is None else np.zeros((0, 2)))
    order = np.argsort(cells, kind="stable")
    cells, points, weights = cells[order], points[order], weights[order]
    if normals is not None:
        normals = normals[order]
    first = np.ones(len(cells), dtype=bool)
    first[1:] = cells[1:] != cells[:-1]
    starts = np.flatnonzero(first)
    return CellPoints(cells, points, weights, cells[starts], starts, normals)


def domain_quadrature(mesh, cls, order):
    """Quadrature over Ω ∩ (active cells), exact to ``order`` on each piece."""
    q, w = ref_rule(mesh.kind, order)
    origin, J, det = mesh.affine_maps()
    full = np.array([c for c in cls.active if int(c) not in cls.polygons], dtype=np.int64)
    pts = [(origin[full][:, None, :] + np.einsum("cij,qj->cqi", J[full], q)).reshape(-1, 2)]
    wts = [(det[full][:, None] * w[None, :]).ravel()]
    own = [np.repeat(full, len(w))]
    for c in sorted(cls.polygons):
        rule = volume_quadrature(cls.polygons[c], order)
        pts.append(rule.points)
        wts.append(rule.weights)
        own.append(np.full(len(rule.weights), c, dtype=np.int64))
    return _group(np.concatenate(own), np.concatenate(pts), np.concatenate(wts))


def boundary_quadrature(mesh, cls, order):
    """Gauss points on Γ with outward unit normals, grouped by cut cell."""
    pts, wts, nrm, own = [np.zeros((0, 2))], [np.zeros(0)], [np.zeros((0, 2))], [np.zeros(0, np.int64)]
    for c in sorted(cls.polygons):
        segs = cls.polygons[c].boundary_segments
        if len(segs) == 0:
            continue
        p, w, n = segments_quadrature(segs, order)
        pts.append(p)
        wts.append(w)
        nrm.append(n)
        own.append(np.full(len(w), c, dtype=np.int64))
    return _group(np.concatenate(own), np.concatenate(pts), np.concatenate(wts), np.concatenate(nrm))


def sample_points(mesh, cls, order):
    """Points for max-norms: volume quadrature points plus every polygon vertex."""
    vq = domain_quadrature(mesh, cls, order)
    cells, pts = [vq.cells], [vq.points]
    full = np.array([c for c in cls.active if int(c) not in cls.polygons], dtype=np.int64)
    nv = len(REF_VERTICES[mesh.kind])
    cells.append(np.repeat(full, nv))
    pts.append(mesh.vertices[mesh.cells[full]].reshape(-1, 2))
    for c in sorted(cls.polygons):
        v = cls.polygons[c].vertices
        cells.append(np.full(len(v), c, dtype=np.int64))
        pts.append(v)
    return np.concatenate(cells), np.concatenate(pts)
