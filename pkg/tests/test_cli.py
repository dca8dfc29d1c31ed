import csv
import io
import json
import subprocess
import sys

import pytest

from surfinfsup.cli import DEFAULTS, PRNG, parse_config, run
from surfinfsup.errors import ConfigurationError
from surfinfsup.meshio import read_off


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_mesh_writes_icosahedron(tmp_path):
    path = tmp_path / "icosa.off"
    code, out, _ = call("mesh", "--surface", "sphere", "--level", "0", "--out", str(path))
    assert code == 0
    mesh = read_off(path)
    assert mesh.n_vertices == 12 and mesh.n_faces == 20
    info = json.loads(out)
    assert info["schema"] == 1 and info["mesh"]["vertices"] == 12
    assert info["mesh"]["euler_characteristic"] == 2


def test_mesh_from_file_with_refinement(tmp_path):
    path = tmp_path / "icosa.off"
    call("mesh", "--level", "0", "--out", str(path))
    code, out, _ = call("mesh", "--surface", "file", "--path", str(path), "--level", "1")
    assert code == 0
    data = json.loads(out)
    assert data["mesh"]["vertices"] == 42
    assert data["provenance"]["path"] == str(path)


def test_geometry_summary():
    code, out, _ = call("geometry", "--surface", "torus", "--radii", "1,0.4", "--level", "2")
    assert code == 0
    data = json.loads(out)
    assert data["provenance"]["params"] == [1.0, 0.4]
    assert abs(data["geometry"]["mean_curvature_mean"] - 2.5) < 0.1


def test_infsup_reports_null_mode_angle():
    code, out, _ = call("infsup", "--surface", "sphere", "--level", "3", "--form", "c-full")
    assert code == 0
    data = json.loads(out)
    assert data["spectrum"]["null_mode_angle"] < 5.0
    assert data["spectrum"]["constant"] > 0
    head = data["provenance"]
    for key in ("surface", "level", "ell", "delta", "norm", "version", "prng", "seed"):
        assert key in head
    assert head["norm"] == "lemma" and head["delta"] == 0.0


def test_stabilized_defaults_to_unit_weight():
    code, out, _ = call("stabilized", "--surface", "ellipsoid", "--level", "2")
    assert code == 0
    data = json.loads(out)
    assert data["provenance"]["delta"] == 1.0
    assert data["provenance"]["form"] == "c-full"


def test_sweep_csv_has_provenance_header():
    code, out, _ = call("sweep", "--surface", "sphere", "--levels", "1,2", "--form", "b-only")
    assert code == 0
    lines = out.splitlines()
    head = [l for l in lines if l.startswith("#")]
    assert any(l.startswith("# prng: ") and PRNG in l for l in head)
    assert any(l.startswith("# version: ") for l in head)
    assert any(l.startswith("# delta: ") for l in head)
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    assert [r["level"] for r in rows] == ["1", "2"]
    assert all(r["status"] == "ok" for r in rows)
    assert float(rows[0]["constant"]) > float(rows[1]["constant"])


def test_sweep_json():
    code, out, _ = call("sweep", "--surface", "sphere", "--levels", "1", "--json")
    assert code == 0
    data = json.loads(out)
    assert data["schema"] == 1 and len(data["rows"]) == 1


def test_oracle_passes_on_ellipsoid():
    code, out, err = call("oracle", "--surface", "ellipsoid", "--axes", "2,1,1", "--level", "3",
                          "--samples", "100")
    assert code == 0, err
    data = json.loads(out)
    assert data["bounds"]["passed"]
    assert data["bounds"]["coercivity_pass_fraction"] == 1.0
    assert "A" in data["certificate"] and "B" in data["certificate"]


def test_oracle_failure_exit_code():
    # a negative tolerance demands more than the proof gives
    code, out, err = call("oracle", "--surface", "ellipsoid", "--level", "2", "--samples", "5",
                          "--tol", "-5")
    assert code == 1
    assert json.loads(err)["error"] == "bound-violation"
    assert json.loads(out)["bounds"]["passed"] is False


@pytest.mark.parametrize("load", ["translation", "tension", "normal"])
def test_solve_loads(load, tmp_path):
    vtk = tmp_path / "u.vtk"
    code, out, _ = call("solve", "--surface", "ellipsoid", "--level", "2", "--load", load,
                        "--vtk", str(vtk))
    assert code == 0
    assert vtk.read_text().startswith("# vtk DataFile Version 3.0")
    data = json.loads(out)
    assert data["solution"]["diagnostics"]["algebraic_residual"] <= 1e-10


def test_solve_sphere_isochoric_reports_rank_deficiency():
    code, _, err = call("solve", "--surface", "sphere", "--level", "2",
                        "--formulation", "inextensible-isochoric")
    assert code == 1
    rec = json.loads(err)
    assert rec["error"] == "rank-deficiency"
    assert rec["null_mode"]["angle_to_sphere_pair"] <= 10


def test_solve_zero_weight_needs_override():
    code, _, err = call("solve", "--surface", "ellipsoid", "--level", "1", "--delta", "0")
    assert code == 1 and json.loads(err)["error"] == "rank-deficiency"


def test_ibp_check_orders():
    code, out, _ = call("ibp-check", "--surface", "torus", "--levels", "2,3,4", "--samples", "5",
                        "--json")
    assert code == 0
    data = json.loads(out)
    assert data["passed"]
    assert all(r["order_residual"] >= 1.0 for r in data["rows"][1:])


@pytest.mark.parametrize("argv", [
    (),
    ("frobnicate",),
    ("infsup", "--level", "three"),
    ("infsup", "--surface", "cube"),
    ("infsup", "--ell", "-1"),
    ("mesh", "--surface", "sphere", "--params", "-1"),
    ("mesh", "--surface", "file"),
    ("sweep", "--levels", "3,2"),
])
def test_usage_errors_exit_2(argv):
    code, out, err = call(*argv)
    assert code == 2
    rec = json.loads(err)
    assert "error" in rec and "message" in rec
    assert out == ""


def test_missing_mesh_file_exit_2(tmp_path):
    code, _, err = call("mesh", "--surface", "file", "--path", str(tmp_path / "none.off"))
    assert code == 2
    assert "error" in json.loads(err)


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text('# experiment\nsurface = "ellipsoid"\nlevel = 1  # coarse\nseed = 4\n')
    code, out, _ = call("geometry", "--config", str(cfg))
    data = json.loads(out)["provenance"]
    assert code == 0 and data["surface"] == "ellipsoid" and data["level"] == 1
    assert data["seed"] == 4
    code, out, _ = call("geometry", "--config", str(cfg), "--level", "2", "--surface", "torus")
    data = json.loads(out)["provenance"]
    assert (data["surface"], data["level"], data["seed"]) == ("torus", 2, 4)


def test_config_unknown_key_is_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("surface = sphere\nlevle = 2\n")
    code, _, err = call("geometry", "--config", str(cfg))
    assert code == 2
    rec = json.loads(err)
    assert rec["error"] == "configuration" and "levle" in rec["message"]


def test_parse_config_grammar():
    cfg = parse_config('min-order = 1.5\nallow_unstable = true\nlevels = 2,3\nout = "a # b"\n')
    assert cfg == {"min_order": "1.5", "allow_unstable": True, "levels": "2,3", "out": "a # b"}
    assert set(cfg) <= set(DEFAULTS)
    for bad in ("level 3", "level = 1\nlevel = 2", 'out = "open', "level =", "9x = 1"):
        with pytest.raises(ConfigurationError):
            parse_config(bad)


@pytest.mark.parametrize("argv", [
    ("sweep", "--surface", "ellipsoid", "--levels", "1,2", "--seed", "3"),
    ("oracle", "--surface", "sphere", "--level", "2", "--samples", "10", "--seed", "9"),
    ("ibp-check", "--surface", "sphere", "--levels", "1,2", "--samples", "4"),
])
def test_outputs_byte_identical(argv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert call(*argv, "--out", str(a))[0] == 0
    assert call(*argv, "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "surfinfsup", "mesh", "--level", "0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["mesh"]["faces"] == 20
    bad = subprocess.run([sys.executable, "-m", "surfinfsup", "mesh", "--bogus"],
                         capture_output=True, text=True, check=False)
    assert bad.returncode == 2 and json.loads(bad.stderr)["error"] == "usage"
