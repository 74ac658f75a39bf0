import json

import numpy as np
import pytest

from polyvem.geometry import area_centroid
from polyvem.mesh import (
    MeshConformityError,
    MeshIOError,
    PolyMesh,
    ROTATED_T_FAMILIES,
    export_vtk,
    gen_rotated_T,
    gen_square_th1,
    gen_square_th2,
    gen_square_th3,
    io_read,
    io_write,
    reentrant_corners,
    validate,
)

SQUARE_GENERATORS = {
    "th1": gen_square_th1,
    "th2": gen_square_th2,
    "th3": gen_square_th3,
}


def cell_area_sum(mesh):
    return sum(mesh.cell_polygon(i).area for i in range(mesh.n_cells))


def on_unit_square_boundary(x, y, tol=1e-12):
    return min(x, 1.0 - x, y, 1.0 - y) < tol


def on_rotated_t_boundary(x, y, tol=1e-12):
    segs = [
        # (x0, x1, y0, y1) axis-aligned boundary segments of the T
        (-0.5, 0.5, -0.5, -0.5),
        (-0.5, -0.5, -0.5, 0.0),
        (0.5, 0.5, -0.5, 0.0),
        (-0.5, -0.25, 0.0, 0.0),
        (0.25, 0.5, 0.0, 0.0),
        (-0.25, -0.25, 0.0, 1.0),
        (0.25, 0.25, 0.0, 1.0),
        (-0.25, 0.25, 1.0, 1.0),
    ]
    for x0, x1, y0, y1 in segs:
        if x0 == x1:
            if abs(x - x0) < tol and y0 - tol <= y <= y1 + tol:
                return True
        else:
            if abs(y - y0) < tol and x0 - tol <= x <= x1 + tol:
                return True
    return False


class TestTh1:
    def test_report_n4(self):
        report = validate(gen_square_th1(4))
        assert report.min_edge_over_h < 0.2
        assert report.min_rho > 0.0

    def test_area_n4(self):
        assert cell_area_sum(gen_square_th1(4)) == pytest.approx(1.0, abs=1e-10)

    def test_h_halves(self):
        h4 = gen_square_th1(4).h
        h8 = gen_square_th1(8).h
        assert abs(h8 / (h4 / 2.0) - 1.0) < 0.2

    def test_has_hanging_vertices(self):
        mesh = gen_square_th1(4)
        assert any(len(cell) > 4 for cell in mesh.cells)

    def test_interface_gap_n4(self):
        # traces {i/4} and {j/5} interleave with a smallest gap of 0.05
        report = validate(gen_square_th1(4))
        assert report.min_edge == pytest.approx(0.05, rel=1e-12)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            gen_square_th1(1)


class TestTh2:
    def test_short_edges_are_squared_lengths(self):
        mesh = gen_square_th2(4)
        for ci in range(mesh.n_cells):
            v = mesh.cell_vertices(ci)
            assert len(v) == 6
            lengths = np.hypot(*((np.roll(v, -1, axis=0) - v).T))
            # consecutive pieces (2k, 2k+1) partition one original edge
            for k in range(3):
                a, b = lengths[2 * k], lengths[2 * k + 1]
                he = a + b
                assert min(a, b) == pytest.approx(he**2, rel=1e-10)

    def test_anchor_is_lexicographic_minimum(self):
        mesh = gen_square_th2(4)
        for ci in range(mesh.n_cells):
            v = mesh.cell_vertices(ci)
            for k in range(3):
                p, s, q = v[2 * k], v[2 * k + 1], v[(2 * k + 2) % 6]
                anchor = min((tuple(p), tuple(q)))
                he = np.hypot(*(q - p))
                d = np.hypot(s[0] - anchor[0], s[1] - anchor[1])
                assert d == pytest.approx(he**2, rel=1e-10)

    def test_cell_and_vertex_counts(self):
        mesh = gen_square_th2(4)
        assert mesh.n_cells == 2 * 16
        assert mesh.n_vertices == (2 * 4 + 1) ** 2

    def test_area(self):
        assert cell_area_sum(gen_square_th2(8)) == pytest.approx(1.0, abs=1e-10)

    def test_min_edge_order_h_squared(self):
        report = validate(gen_square_th2(16))
        assert report.min_edge == pytest.approx((1.0 / 16.0) ** 2, rel=1e-12)
        # min_edge / h^2 = (1/N^2) / (2/N^2) = 1/2, independent of N
        assert report.min_edge / report.h**2 == pytest.approx(0.5, rel=1e-12)
        assert report.min_rho > 0.1

    def test_unsplit_triangles(self):
        mesh = gen_square_th2(4, split_edges=False)
        assert all(len(cell) == 3 for cell in mesh.cells)
        assert mesh.n_cells == 32
        validate(mesh)


class TestTh3:
    def test_valid_and_area(self):
        mesh = gen_square_th3(4)
        report = validate(mesh)
        assert cell_area_sum(mesh) == pytest.approx(1.0, abs=1e-10)
        assert report.min_rho > 0.0

    def test_mixed_cell_types(self):
        mesh = gen_square_th3(4)
        sizes = {len(cell) for cell in mesh.cells}
        assert any(s == 3 for s in sizes)  # triangles above the interface
        assert any(s >= 4 for s in sizes)  # quads below

    def test_interior_edges_shared_by_two(self):
        mesh = gen_square_th3(8)
        for (a, b), count in mesh.edge_counts().items():
            assert count in (1, 2)
            if count == 1:
                assert mesh.boundary_vertex[a] and mesh.boundary_vertex[b]


class TestRotatedT:
    def test_domain_area_oracle(self):
        # bar (-0.5,0.5)x(-0.5,0) plus stem (-0.25,0.25)x(0,1)
        bar = 1.0 * 0.5
        stem = 0.5 * 1.0
        assert bar + stem == pytest.approx(1.0)
        for family in ROTATED_T_FAMILIES:
            assert cell_area_sum(gen_rotated_T(family, 8)) == pytest.approx(
                bar + stem, abs=1e-10
            )

    def test_reentrant_corners_th4(self):
        corners = reentrant_corners(gen_rotated_T("th4", 16))
        assert len(corners) == 2
        found = sorted((round(p.x, 12), round(p.y, 12)) for p in corners)
        assert found == [(-0.25, 0.0), (0.25, 0.0)]

    def test_th5_small_interface_edges(self):
        report = validate(gen_rotated_T("th5", 16))
        assert report.min_edge_over_h < 0.1

    def test_th7_is_polygonal(self):
        mesh = gen_rotated_T("th7", 8)
        # offset bricks acquire hanging vertices: cells beyond quads
        assert max(len(cell) for cell in mesh.cells) >= 6
        validate(mesh)

    def test_rejects_invalid(self):
        with pytest.raises(ValueError, match="family"):
            gen_rotated_T("th9", 8)
        with pytest.raises(ValueError, match="even"):
            gen_rotated_T("th4", 7)
        with pytest.raises(ValueError):
            gen_rotated_T("th4", 2)

    def test_default_study_resolutions_accepted(self):
        for n in (16, 30, 62, 130):
            gen_rotated_T("th4", n)
        for n in (16, 28, 60, 132):
            gen_rotated_T("th7", n)


ALL_GENERATORS = [
    ("th1", lambda n: gen_square_th1(n)),
    ("th2", lambda n: gen_square_th2(n)),
    ("th3", lambda n: gen_square_th3(n)),
    ("th4", lambda n: gen_rotated_T("th4", n)),
    ("th5", lambda n: gen_rotated_T("th5", n)),
    ("th6", lambda n: gen_rotated_T("th6", n)),
    ("th7", lambda n: gen_rotated_T("th7", n)),
]


class TestAllGenerators:
    @pytest.mark.parametrize("name,gen", ALL_GENERATORS)
    @pytest.mark.parametrize("n", [4, 8, 16, 32])
    def test_validates_with_positive_rho(self, name, gen, n):
        report = validate(gen(n))
        assert report.min_edge > 0.0
        assert report.min_rho > 0.0

    @pytest.mark.parametrize("name,gen", ALL_GENERATORS)
    def test_refinement_monotonicity(self, name, gen):
        hs = [gen(n).h for n in (4, 8, 16, 32)]
        assert all(h2 < h1 for h1, h2 in zip(hs, hs[1:]))

    @pytest.mark.parametrize("name,gen", ALL_GENERATORS)
    def test_boundary_flags_match_domain_boundary(self, name, gen):
        mesh = gen(8)
        on_boundary = (
            on_unit_square_boundary
            if mesh.domain_tag == "unit_square"
            else on_rotated_t_boundary
        )
        for vid, (x, y) in enumerate(mesh.vertices):
            assert mesh.boundary_vertex[vid] == on_boundary(x, y), (vid, x, y)


class TestValidateFailures:
    def test_reversed_cell_named(self):
        mesh = gen_square_th2(2, split_edges=False)
        cells = list(mesh.cells)
        cells[3] = cells[3][::-1]
        bad = PolyMesh(
            mesh.vertices.copy(),
            tuple(cells),
            mesh.boundary_vertex.copy(),
            mesh.h,
            mesh.domain_tag,
        )
        with pytest.raises(MeshConformityError, match="cell 3"):
            validate(bad)

    def test_overlapping_cells_area_mismatch(self):
        # duplicate a cell but flip its orientation flag by renaming: the
        # duplicated cell overlaps its twin, inflating the covered area
        mesh = gen_square_th2(2, split_edges=False)
        cells = list(mesh.cells) + [mesh.cells[0]]
        bad = PolyMesh(
            mesh.vertices.copy(),
            tuple(cells),
            mesh.boundary_vertex.copy(),
            mesh.h,
            mesh.domain_tag,
        )
        with pytest.raises(MeshConformityError, match="coverage|direction|shared"):
            validate(bad)

    def test_inconsistent_boundary_flag(self):
        mesh = gen_square_th2(2, split_edges=False)
        flags = mesh.boundary_vertex.copy()
        flags[int(np.flatnonzero(~flags)[0])] = True
        bad = PolyMesh(mesh.vertices.copy(), mesh.cells, flags, mesh.h, mesh.domain_tag)
        with pytest.raises(MeshConformityError, match="boundary flag"):
            validate(bad)


class TestMeshIO:
    def test_round_trip_bit_exact(self, tmp_path):
        mesh = gen_square_th1(4)
        path = tmp_path / "mesh.json"
        io_write(path, mesh)
        back = io_read(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert back.cells == mesh.cells
        assert np.array_equal(back.boundary_vertex, mesh.boundary_vertex)
        assert back.domain_tag == mesh.domain_tag
        assert back.h == pytest.approx(mesh.h, rel=1e-15)
        # a second write must produce identical bytes
        path2 = tmp_path / "mesh2.json"
        io_write(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_errors(self, tmp_path):
        mesh = gen_square_th2(2)
        path = tmp_path / "mesh.json"
        io_write(path, mesh)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(MeshIOError, match="line"):
            io_read(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "mesh.json"
        path.write_text(json.dumps({"version": 2, "domain": "unit_square", "vertices": [], "cells": [], "boundary": []}))
        with pytest.raises(MeshIOError, match="version"):
            io_read(path)

    def test_bad_domain(self, tmp_path):
        path = tmp_path / "mesh.json"
        path.write_text(json.dumps({"version": 1, "domain": "moebius", "vertices": [], "cells": [], "boundary": []}))
        with pytest.raises(MeshIOError, match="domain"):
            io_read(path)

    def test_out_of_range_cell(self, tmp_path):
        path = tmp_path / "mesh.json"
        doc = {
            "version": 1,
            "domain": "custom",
            "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            "cells": [[0, 1, 7]],
            "boundary": [True, True, True],
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(MeshIOError, match="out of range"):
            io_read(path)

    def test_vtk_export(self, tmp_path):
        mesh = gen_square_th2(4)
        path = tmp_path / "mesh.vtk"
        export_vtk(path, mesh, field=np.arange(mesh.n_vertices, dtype=float))
        text = path.read_text()
        assert "DATASET POLYDATA" in text
        assert f"POINTS {mesh.n_vertices} double" in text
        assert f"POLYGONS {mesh.n_cells}" in text
        assert "POINT_DATA" in text

    def test_vtk_field_shape_checked(self, tmp_path):
        mesh = gen_square_th2(2)
        with pytest.raises(ValueError, match="shape"):
            export_vtk(tmp_path / "m.vtk", mesh, field=np.zeros(3))


class TestPolyMeshModel:
    def test_vertices_read_only(self):
        mesh = gen_square_th2(2)
        with pytest.raises(ValueError):
            mesh.vertices[0, 0] = 42.0

    def test_cell_polygon_matches_area(self):
        mesh = gen_square_th1(4)
        poly = mesh.cell_polygon(0, validate=True)
        area, _ = area_centroid(poly)
        assert area > 0.0
