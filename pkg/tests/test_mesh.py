"""Triangle meshes: heightfield solids, STL round trips and validation."""

import numpy as np
import pytest

from shade2print.field import Grid2D, ScalarField2D
from shade2print.mesh import (
    Facet, MeshError, TriangleMesh, heightfield_to_solid, stl_read,
    stl_write, validate,
)

from conftest import box_mesh


def flat_height(n, value=1.0, origin=(1.0, 1.0), spacing=0.5, mask=None):
    g = Grid2D(origin, (spacing, spacing), (n, n))
    return ScalarField2D(g, np.full((n, n), value), mask)


class TestFacet:
    def test_from_vertices_normal(self):
        f = Facet.from_vertices((0, 0, 0), (1, 0, 0), (0, 1, 0))
        np.testing.assert_allclose(f.normal, (0, 0, 1))
        assert f.area == pytest.approx(0.5)

    def test_bad_shape_rejected(self):
        with pytest.raises(MeshError):
            TriangleMesh(np.zeros((2, 3)))


class TestHeightfieldSolid:
    def test_single_cell_count(self):
        mesh = heightfield_to_solid(flat_height(2), base_z=0.0)
        assert len(mesh) == 12  # 2 top + 2 bottom + 4 walls * 2

    @pytest.mark.parametrize("n", [3, 5, 8])
    def test_full_grid_count(self, n):
        mesh = heightfield_to_solid(flat_height(n), base_z=0.0)
        assert len(mesh) == 4 * (n - 1) ** 2 + 8 * (n - 1)

    def test_box_volume_and_validation(self):
        n = 5
        mesh = heightfield_to_solid(flat_height(n, value=1.5), base_z=0.5)
        report = validate(mesh)
        assert report.ok, report.summary()
        side = 0.5 * (n - 1)
        assert report.volume == pytest.approx(side * side * 1.0)

    def test_height_at_base_rejected(self):
        with pytest.raises(MeshError):
            heightfield_to_solid(flat_height(4, value=0.0), base_z=0.0)

    def test_empty_mask_rejected(self):
        mask = np.zeros((4, 4), bool)
        mask[0, 0] = True  # no complete cell
        with pytest.raises(MeshError):
            heightfield_to_solid(flat_height(4, mask=mask), base_z=0.0)

    def test_masked_region_watertight(self):
        n = 17
        g = Grid2D((1.0, 1.0), (0.1, 0.1), (n, n))
        X, Y = g.meshgrid()
        r2 = (X - 1.8) ** 2 + (Y - 1.8) ** 2
        u = ScalarField2D(g, 2.0 - r2, r2 < 0.5)
        mesh = heightfield_to_solid(u, base_z=0.2)
        report = validate(mesh)
        assert report.ok, report.summary()


class TestSTL:
    def test_binary_round_trip_bit_exact(self, tmp_path):
        mesh = box_mesh((1.0, 2.0, 3.0), (2.0, 3.0, 4.0), name="cube")
        path = tmp_path / "cube.stl"
        stl_write(mesh, path, fmt="binary")
        back = stl_read(path)
        assert back.name == "cube"
        # all coordinates are exactly float32-representable
        assert np.array_equal(back.tris, mesh.tris)
        assert np.array_equal(back.normals,
                              np.float32(mesh.normals).astype(float))

    def test_ascii_round_trip_float32(self, tmp_path):
        mesh = box_mesh((0.1, 0.2, 0.3), (1.1, 1.7, 2.3), name="cube")
        path = tmp_path / "cube.stl"
        stl_write(mesh, path, fmt="ascii")
        back = stl_read(path)
        assert path.read_text().startswith("solid cube")
        # the writer emits the shortest decimal that reparses to the same
        # float32, so equality holds exactly at float32 precision
        np.testing.assert_array_equal(
            np.float32(back.tris), np.float32(mesh.tris))

    def test_nonpositive_mesh_shifted_on_write(self, tmp_path):
        mesh = box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        path = tmp_path / "box.stl"
        written = stl_write(mesh, path, fmt="binary")
        lo, _ = written.bounds
        assert lo.min() > 0.0
        assert written.metadata["shift"] == (1.0, 1.0, 1.0)
        assert validate(stl_read(path)).ok

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(MeshError):
            stl_write(box_mesh((1, 1, 1), (2, 2, 2)), tmp_path / "x.stl",
                      fmt="obj")

    def test_malformed_ascii_rejected(self, tmp_path):
        path = tmp_path / "bad.stl"
        path.write_text("solid junk\nfacet normal 0 0 1\nendsolid junk\n")
        with pytest.raises(MeshError):
            stl_read(path)

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "bad.stl"
        path.write_bytes(b"\0" * 83)
        with pytest.raises(MeshError):
            stl_read(path)


class TestValidate:
    def test_clean_box(self):
        report = validate(box_mesh((1, 1, 1), (2, 3, 4)))
        assert report.ok
        assert report.watertight
        assert report.volume == pytest.approx(6.0)
        assert report.summary() == "ok"

    def test_missing_facet_opens_three_edges(self):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        broken = TriangleMesh(mesh.tris[:-1], mesh.normals[:-1])
        report = validate(broken)
        assert not report.watertight
        assert len(report.open_edges) == 3

    def test_nonpositive_coordinates_flagged(self):
        report = validate(box_mesh((-1, 1, 1), (2, 2, 2)))
        assert report.nonpositive
        assert not report.ok
        report2 = validate(box_mesh((-1, 1, 1), (2, 2, 2)),
                           require_positive=False)
        assert not report2.nonpositive

    def test_flipped_normal_flagged(self):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        normals = mesh.normals.copy()
        normals[0] = -normals[0]
        report = validate(TriangleMesh(mesh.tris, normals))
        assert report.orientation == [0]

    def test_inverted_winding_gives_negative_volume(self):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        flipped = TriangleMesh(mesh.tris[:, ::-1, :])
        assert flipped.signed_volume() == pytest.approx(-1.0)
        assert not validate(flipped).ok

    def test_degenerate_facet_flagged(self):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        tris = np.concatenate(
            [mesh.tris, [[(1, 1, 1), (2, 1, 1), (1.5, 1, 1)]]])
        report = validate(TriangleMesh(tris))
        assert list(report.degenerate) == [12]

    def test_t_junction_detected(self):
        # second facet's first vertex sits strictly inside the first
        # facet's bottom edge
        tris = np.array([
            [(1.0, 1.0, 1.0), (3.0, 1.0, 1.0), (3.0, 3.0, 1.0)],
            [(2.0, 1.0, 1.0), (3.0, 0.5, 2.0), (1.0, 0.5, 2.0)],
        ])
        report = validate(TriangleMesh(tris), require_positive=False)
        assert len(report.t_junctions) == 1
        point, facet = report.t_junctions[0]
        np.testing.assert_allclose(point, (2.0, 1.0, 1.0))
        assert facet == 0

    def test_translated_keeps_shape(self):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        moved = mesh.translated((5.0, 0.0, 0.0))
        np.testing.assert_allclose(
            moved.tris, mesh.tris + np.array([5.0, 0.0, 0.0]))
        assert moved.metadata["shift"] == (5.0, 0.0, 0.0)
