import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cutdarcy.errors import InvalidDimensions, OrphanCutCell
from cutdarcy.geometry import LevelSetDomain
from cutdarcy.mesh import (CellClassification, Tag, aggregate_diameter, build_aggregates,
                           build_background, classify_cells, cut_facets, select_stab_facets,
                           write_mesh_csv)


def offset(n, ratio, kind="quad", delta=1.0):
    h = 1.0 / (n - 2)
    a = h + 0.5
    mesh = build_background(kind, n, (-a, -a, a, a))
    dom = LevelSetDomain.offset_square(1.0, ratio * h)
    return mesh, dom, classify_cells(mesh, dom, delta)


def ring_index(mesh):
    """(i, j) grid position of every cell of a quad mesh."""
    c = np.arange(mesh.n_cells)
    return c % mesh.nx, c // mesh.nx


class TestBackground:
    def test_quad_counts(self):
        m = build_background("quad", 2, (0, 0, 1, 1))
        assert m.n_cells == 4
        assert m.n_facets == 12
        assert np.sum(m.facet_cells[:, 1] >= 0) == 4

    def test_tri_counts(self):
        m = build_background("tri", 2, (0, 0, 1, 1))
        assert m.n_cells == 8
        # 12 axis edges plus one diagonal per square
        assert m.n_facets == 16

    def test_h_is_edge_length(self):
        mesh, _, _ = offset(32, 0.5)
        assert mesh.h == pytest.approx(1 / 30, rel=1e-14)

    def test_rectangular_counts(self):
        m = build_background("quad", (5, 3), (0, 0, 1, 0.6))
        assert m.n_cells == 15
        assert m.h == pytest.approx(0.2)

    @pytest.mark.parametrize("n", [1, 0])
    def test_invalid_dimensions(self, n):
        with pytest.raises(InvalidDimensions):
            build_background("quad", n, (0, 0, 1, 1))

    def test_invalid_box_and_kind(self):
        with pytest.raises(InvalidDimensions):
            build_background("quad", 3, (0, 0, 0, 1))
        with pytest.raises(InvalidDimensions):
            build_background("hex", 3, (0, 0, 1, 1))

    @pytest.mark.parametrize("kind", ["quad", "tri"])
    def test_positive_orientation_and_areas(self, kind):
        m = build_background(kind, 4, (0, 0, 2, 2))
        _, _, det = m.affine_maps()
        assert np.all(det > 0)
        assert m.cell_areas().sum() == pytest.approx(4.0)

    @pytest.mark.parametrize("kind", ["quad", "tri"])
    def test_facet_bidirectionality(self, kind):
        m = build_background(kind, 5, (0, 0, 1, 1))
        for f, (a, b) in enumerate(m.facet_cells):
            assert list(m.cell_facets[a]).count(f) == 1
            if b >= 0:
                assert list(m.cell_facets[b]).count(f) == 1
        # every facet listed by a cell names that cell as an incident cell
        for c in range(m.n_cells):
            for f in m.cell_facets[c]:
                assert c in m.facet_cells[f]

    @pytest.mark.parametrize("kind", ["quad", "tri"])
    def test_local_facet_vertices_match(self, kind):
        m = build_background(kind, 3, (0, 0, 1, 1))
        for c in range(m.n_cells):
            for k, f in enumerate(m.cell_facets[c]):
                assert sorted(m.local_facet_vertices(c, k)) == list(m.facets[f])

    def test_quasi_uniform(self):
        m = build_background("tri", 6, (0, 0, 1, 1))
        xy = m.cell_coords()
        diam = np.max(np.linalg.norm(xy[:, :, None] - xy[:, None, :], axis=3), axis=(1, 2))
        assert np.all(diam <= 2 * m.h) and np.all(diam >= m.h / 2)


class TestClassification:
    def test_domain_covering_box_all_in(self):
        m = build_background("tri", 4, (0, 0, 1, 1))
        cls = classify_cells(m, LevelSetDomain.rectangle(-1, -1, 2, 2))
        assert np.all(cls.tags == Tag.IN)
        assert not cls.polygons

    def test_boundary_ring_cut(self):
        mesh, _, cls = offset(8, 0.5)
        i, j = ring_index(mesh)
        ring = (i == 0) | (j == 0) | (i == 7) | (j == 7)
        assert np.all(cls.tags[ring] == Tag.CUT)
        assert np.all(cls.tags[~ring] == Tag.IN)
        assert cls.n_cut == 28 and cls.n_in == 36

    def test_exact_fit_has_no_cut_cells(self):
        m = build_background("quad", 4, (0, 0, 1, 1))
        cls = classify_cells(m, LevelSetDomain.rectangle(0.25, 0.25, 0.75, 0.75))
        assert cls.n_in == 4 and cls.n_cut == 0
        assert np.sum(cls.tags == Tag.OUT) == 12

    def test_fractions_of_ring(self):
        mesh, _, cls = offset(8, 0.5)
        i, j = ring_index(mesh)
        corner = ((i == 0) | (i == 7)) & ((j == 0) | (j == 7))
        edge = ((i == 0) | (j == 0) | (i == 7) | (j == 7)) & ~corner
        assert np.allclose(cls.fraction[corner], 0.25)
        assert np.allclose(cls.fraction[edge], 0.5)

    def test_delta_rule(self):
        mesh, dom, _ = offset(8, 0.5)
        cls = classify_cells(mesh, dom, delta=0.5)
        assert np.all(cls.tags[np.isclose(cls.fraction, 0.5)] == Tag.IN)
        assert np.all(cls.tags[np.isclose(cls.fraction, 0.25)] == Tag.CUT)

    def test_invalid_delta(self):
        mesh, dom, _ = offset(6, 0.5)
        with pytest.raises(ValueError):
            classify_cells(mesh, dom, delta=0.0)
        with pytest.raises(ValueError):
            classify_cells(mesh, dom, delta=1.5)

    def test_annulus_monte_carlo(self):
        dom = LevelSetDomain.annulus(0.5, 0.5, 0.15, 0.45)
        mesh = build_background("tri", 40, (0, 0, 1, 1))
        cls = classify_cells(mesh, dom, n_sub=8)
        rng = np.random.default_rng(3)
        xy = mesh.cell_coords()
        r = rng.random((mesh.n_cells, 400, 2))
        flip = r.sum(2) > 1
        r[flip] = 1 - r[flip]
        pts = xy[:, :1] + r[..., :1] * (xy[:, 1:2] - xy[:, :1]) + r[..., 1:] * (xy[:, 2:3] - xy[:, :1])
        frac_mc = (dom.eval(pts) < 0).mean(1)
        # any cell with a sampled interior point must be active
        assert np.all(cls.tags[frac_mc > 0] != Tag.OUT)
        assert np.all(cls.tags[frac_mc == 1.0] != Tag.OUT)
        # active area from exact fractions agrees with the analytic annulus area
        area = np.dot(cls.fraction, mesh.cell_areas())
        assert area == pytest.approx(dom.measure(), rel=2e-4)
        # the per-cell fractions agree with the sampled fractions (4σ for 400 samples)
        assert np.max(np.abs(cls.fraction - frac_mc)) <= 4 * 0.5 / np.sqrt(400)
        active_mc = np.sum(frac_mc > 0)
        assert active_mc <= len(cls.active) <= active_mc + cls.n_cut

    @given(st.floats(1e-6, 0.99), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    def test_delta_monotone(self, ratio, d1, d2):
        lo, hi = sorted((d1, d2))
        mesh, dom, _ = offset(8, ratio, "tri")
        a = classify_cells(mesh, dom, hi)
        b = classify_cells(mesh, dom, lo)
        assert not np.any((a.tags == Tag.IN) & (b.tags == Tag.CUT))
        assert np.array_equal(a.tags == Tag.OUT, b.tags == Tag.OUT)
        # IN iff fraction >= δ
        assert np.array_equal(b.tags == Tag.IN, b.fraction >= lo * (1 - 1e-12))


class TestAggregates:
    def test_no_cut_cells_singletons(self):
        m = build_background("quad", 4, (0, 0, 1, 1))
        cls = classify_cells(m, LevelSetDomain.rectangle(-1, -1, 2, 2))
        agg = build_aggregates(m, cls)
        assert np.array_equal(agg.root, np.arange(16))
        assert not agg.nontrivial()
        assert len(select_stab_facets(m, cls, agg)) == 0

    def test_single_cut_cell(self):
        m = build_background("quad", 2, (0, 0, 2, 2))
        cls = classify_cells(m, LevelSetDomain.rectangle(-1, -1, 1.5, 1))
        assert list(cls.tags) == [Tag.IN, Tag.CUT, Tag.OUT, Tag.OUT]
        agg = build_aggregates(m, cls)
        assert agg.members == {0: [0, 1]}
        stab = select_stab_facets(m, cls, agg)
        assert len(stab) == 1
        assert sorted(m.facet_cells[stab[0]]) == [0, 1]

    def test_offset_square_exhaustive(self):
        mesh, _, cls = offset(8, 0.5)
        agg = build_aggregates(mesh, cls)
        i, j = ring_index(mesh)
        for c in np.flatnonzero(cls.tags == Tag.CUT):
            ii = min(max(i[c], 1), 6)
            jj = min(max(j[c], 1), 6)
            # brute force: the nearest interior cell in grid position
            expected = jj * mesh.nx + ii
            assert cls.tags[expected] == Tag.IN
            assert agg.root[c] == expected
            is_corner = (i[c] in (0, 7)) and (j[c] in (0, 7))
            if not is_corner:
                # the unique inward IN facet neighbour
                nbr_in = [q for q, _ in mesh.neighbours(c) if cls.tags[q] == Tag.IN]
                assert nbr_in == [expected]

    @pytest.mark.parametrize("kind", ["quad", "tri"])
    @pytest.mark.parametrize("ratio", [0.5, 5e-7])
    def test_tree_property(self, kind, ratio):
        mesh, _, cls = offset(10, ratio, kind)
        agg = build_aggregates(mesh, cls)
        stab = select_stab_facets(mesh, cls, agg)
        assert len(stab) == cls.n_cut
        assert set(stab) <= set(cut_facets(mesh, cls))
        for r, members in agg.members.items():
            assert cls.tags[r] == Tag.IN
            assert sum(cls.tags[m] == Tag.IN for m in members) == 1
            edges = [f for f in stab if mesh.facet_cells[f][0] in members]
            assert len(edges) == len(members) - 1
            # spanning: union-find over the selected facets joins every member to the root
            parent = {m: m for m in members}

            def find(x):
                while parent[x] != x:
                    x = parent[x]
                return x
            for f in edges:
                a, b = mesh.facet_cells[f]
                assert a in parent and b in parent
                parent[find(a)] = find(b)
            assert len({find(m) for m in members}) == 1
            # characteristic size = largest cell diameter (diagonal of a grid square)
            assert aggregate_diameter(mesh, members) <= 4 * np.sqrt(2) * mesh.h

    def test_every_active_cell_once(self):
        mesh, _, cls = offset(9, 0.2, "tri")
        agg = build_aggregates(mesh, cls)
        seen = sorted(c for m in agg.members.values() for c in m)
        assert seen == sorted(cls.active.tolist())

    def test_full_flag_gives_cut_facets(self):
        mesh, _, cls = offset(8, 0.5)
        agg = build_aggregates(mesh, cls)
        full = select_stab_facets(mesh, cls, agg, full=True)
        assert np.array_equal(full, cut_facets(mesh, cls))
        assert len(full) > len(select_stab_facets(mesh, cls, agg))

    def test_orphan(self):
        m = build_background("quad", 3, (0, 0, 1, 1))
        tags = np.full(9, Tag.OUT, dtype=np.int8)
        tags[0] = Tag.IN
        tags[8] = Tag.CUT
        cls = CellClassification(tags, 1.0, np.zeros(9))
        with pytest.raises(OrphanCutCell) as exc:
            build_aggregates(m, cls)
        assert exc.value.cell == 8

    def test_mesh_csv(self):
        mesh, _, cls = offset(6, 0.5)
        agg = build_aggregates(mesh, cls)
        buf = io.StringIO()
        write_mesh_csv(mesh, cls, agg, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "cell,tag,fraction,root"
        assert len(lines) == 37
        assert lines[1].startswith("0,CUT,0.25,")
