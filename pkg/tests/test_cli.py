"""Command-line interface: subcommands, exit codes and the pipeline."""

import json

import numpy as np
import pytest

from shade2print import cli
from shade2print.field import Grid2D, ScalarField2D, write_pgm
from shade2print.mesh import TriangleMesh, stl_read, stl_write, validate
from shade2print.slicer import parse_gcode

from conftest import box_mesh


def hemisphere_pgm(path, n=33):
    g = Grid2D((0.0, 0.0), (1.0, 1.0), (n, n))
    X, Y = g.meshgrid()
    c = (n - 1) / 2.0
    r2 = ((X - c) / c) ** 2 + ((Y - c) / c) ** 2
    img = np.where(r2 < 1.0, np.sqrt(np.maximum(1 - r2, 0.0)), 1.0)
    write_pgm(ScalarField2D(g, img), path, maxval=65535)
    return path


class TestBasics:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0

    def test_missing_image_exit_2(self, tmp_path):
        rc = cli.main(["sfs", "--image", str(tmp_path / "nope.pgm"),
                       "--out", str(tmp_path / "h.csv")])
        assert rc == cli.EXIT_INPUT

    def test_bad_light_spec_exit_2(self, tmp_path):
        img = hemisphere_pgm(tmp_path / "img.pgm")
        rc = cli.main(["sfs", "--image", str(img), "--light", "0,0",
                       "--out", str(tmp_path / "h.csv")])
        assert rc == cli.EXIT_INPUT


class TestHeightCsv:
    def test_round_trip(self, tmp_path):
        g = Grid2D((0.5, -1.0), (0.25, 0.5), (7, 9))
        rng = np.random.default_rng(4)
        f = ScalarField2D(g, rng.uniform(size=(7, 9)))
        path = tmp_path / "h.csv"
        cli.write_height_csv(f, path)
        back = cli.read_height_csv(path)
        assert back.grid == g
        np.testing.assert_allclose(back.values, f.values, atol=1e-12)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("1,2\n3,4\n")
        with pytest.raises(cli.InputError):
            cli.read_height_csv(path)


class TestSfs:
    def test_hemisphere_height(self, tmp_path):
        img = hemisphere_pgm(tmp_path / "img.pgm", n=33)
        out = tmp_path / "h.csv"
        rc = cli.main(["sfs", "--image", str(img), "--out", str(out),
                       "--pgm-out", str(tmp_path / "h.pgm")])
        assert rc == 0
        u = cli.read_height_csv(out)
        # dome of radius 16 pixels, peak near the center; without a
        # silhouette mask the first-order solver loses O(sqrt(R h)) of
        # height to the rim singularity, so the tolerance is generous
        assert u.values.max() == pytest.approx(16.0, rel=0.25)
        peak = np.unravel_index(np.argmax(u.values), u.values.shape)
        assert max(abs(peak[0] - 16), abs(peak[1] - 16)) <= 2
        assert (tmp_path / "h.pgm").exists()


class TestPs:
    def test_two_images(self, tmp_path):
        n = 33
        g = Grid2D((0.0, 0.0), (1 / (n - 1),) * 2, (n, n))
        X, Y = g.meshgrid()
        u = 0.2 * np.sin(np.pi * X) * np.sin(np.pi * Y)
        for name, light in (("a", (0, 0, 1)), ("b", (0.6, 0, 0.8))):
            ux, uy = np.gradient(u, *g.spacing, edge_order=2)
            norm = np.sqrt(1 + ux ** 2 + uy ** 2)
            I = (-ux * light[0] - uy * light[1] + light[2]) / norm
            write_pgm(ScalarField2D(g, np.clip(I, 0, 1)),
                      tmp_path / f"{name}.pgm", maxval=65535)
        out = tmp_path / "h.csv"
        rc = cli.main(["ps", "--images", str(tmp_path / "a.pgm"),
                       str(tmp_path / "b.pgm"),
                       "--lights", "0,0,1", "0.6,0,0.8",
                       "--out", str(out)])
        assert rc == 0
        got = cli.read_height_csv(out)
        # pixel-unit grid: heights scale with the 32-pixel width
        assert got.values.max() == pytest.approx(0.2 * (n - 1), rel=0.15)

    def test_count_mismatch_exit_2(self, tmp_path):
        img = hemisphere_pgm(tmp_path / "img.pgm")
        rc = cli.main(["ps", "--images", str(img), str(img),
                       "--lights", "0,0,1", "--out",
                       str(tmp_path / "h.csv")])
        assert rc == cli.EXIT_INPUT


class TestMeshCommands:
    def test_from_height_and_validate(self, tmp_path):
        g = Grid2D((1.0, 1.0), (1.0, 1.0), (9, 9))
        u = ScalarField2D(g, np.full((9, 9), 3.0))
        cli.write_height_csv(u, tmp_path / "h.csv")
        stl = tmp_path / "m.stl"
        rc = cli.main(["mesh", "from-height", "--height",
                       str(tmp_path / "h.csv"), "--base-z", "1.0",
                       "--out", str(stl)])
        assert rc == 0
        rep = tmp_path / "rep.json"
        rc = cli.main(["mesh", "validate", "--stl", str(stl),
                       "--json", str(rep)])
        assert rc == 0
        report = json.loads(rep.read_text())
        assert report["watertight"]
        assert report["volume"] == pytest.approx(128.0)

    def test_validate_broken_exit_2(self, tmp_path):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        broken = TriangleMesh(mesh.tris[:-1])
        path = tmp_path / "broken.stl"
        stl_write(broken, path, fmt="binary", check=False)
        rc = cli.main(["mesh", "validate", "--stl", str(path)])
        assert rc == cli.EXIT_INPUT

    def test_convert(self, tmp_path):
        mesh = box_mesh((1, 1, 1), (2, 2, 2))
        src = tmp_path / "a.stl"
        dst = tmp_path / "b.stl"
        stl_write(mesh, src, fmt="binary")
        rc = cli.main(["mesh", "convert", "--stl", str(src),
                       "--out", str(dst), "--format", "ascii"])
        assert rc == 0
        assert dst.read_text().startswith("solid")
        np.testing.assert_array_equal(np.float32(stl_read(dst).tris),
                                      np.float32(mesh.tris))


class TestSdfAndOverhang:
    def test_sdf_then_detect(self, tmp_path, capsys):
        mesh = box_mesh((1.0, 1.0, 1.0), (3.0, 3.0, 2.0))
        stl = tmp_path / "box.stl"
        stl_write(mesh, stl, fmt="binary")
        npz = tmp_path / "box.npz"
        rc = cli.main(["sdf", "--stl", str(stl), "--dims", "25,25,17",
                       "--out", str(npz)])
        assert rc == 0
        report = tmp_path / "report.json"
        rc = cli.main(["overhang", "detect", "--sdf", str(npz),
                       "--report", str(report)])
        assert rc == 0
        out = json.loads(report.read_text())
        # a box resting on the plate has no unsupported overhang
        assert out["fraction_printable"] == pytest.approx(1.0)
        assert out["overhang_nodes"] == 0


class TestSlice:
    def test_cube_gcode(self, tmp_path):
        mesh = box_mesh((5.0, 5.0, 1.0), (15.0, 15.0, 4.0))
        stl = tmp_path / "cube.stl"
        stl_write(mesh, stl, fmt="binary")
        gcode = tmp_path / "out.gcode"
        report = tmp_path / "rep.json"
        rc = cli.main(["slice", "--stl", str(stl), "--layer-height", "1.0",
                       "--spacing", "2.0", "--out", str(gcode),
                       "--report", str(report)])
        assert rc == 0
        path = parse_gcode(gcode.read_text())
        assert len(path.moves) > 10
        rep = json.loads(report.read_text())
        assert rep["layer_count"] == 3
        assert rep["total_e"] > 0


class TestPipeline:
    def test_end_to_end_and_deterministic(self, tmp_path):
        img = hemisphere_pgm(tmp_path / "img.pgm", n=33)
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        for outdir in (out1, out2):
            rc = cli.main(["pipeline", "--image", str(img),
                           "--outdir", str(outdir)])
            assert rc == 0
        for name in ("height.csv", "height.pgm", "model.stl", "fixed.stl",
                     "out.gcode", "metrics.json"):
            assert (out1 / name).exists()
        # the run is deterministic, byte for byte
        assert (out1 / "out.gcode").read_bytes() \
            == (out2 / "out.gcode").read_bytes()
        assert (out1 / "model.stl").read_bytes() \
            == (out2 / "model.stl").read_bytes()
        assert validate(stl_read(out1 / "model.stl")).ok
        parse_gcode((out1 / "out.gcode").read_text())
        metrics = json.loads((out1 / "metrics.json").read_text())
        assert metrics["mesh"]["watertight"]
        assert metrics["slicer"]["layer_count"] > 3

    def test_unknown_config_key_exit_2(self, tmp_path):
        img = hemisphere_pgm(tmp_path / "img.pgm")
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[slice]\nwibble = 1\n")
        rc = cli.main(["pipeline", "--image", str(img),
                       "--outdir", str(tmp_path / "out"),
                       "--config", str(cfg)])
        assert rc == cli.EXIT_INPUT

    def test_config_overrides_square_infill(self, tmp_path):
        img = hemisphere_pgm(tmp_path / "img.pgm", n=33)
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[slice]\ninfill = square\n[overhang]\n"
                       "enabled = false\n")
        outdir = tmp_path / "out"
        rc = cli.main(["pipeline", "--image", str(img),
                       "--outdir", str(outdir), "--config", str(cfg)])
        assert rc == 0
        metrics = json.loads((outdir / "metrics.json").read_text())
        assert metrics["config"]["slice"]["infill"] == "square"
        assert metrics["overhang"] == {"enabled": False}
