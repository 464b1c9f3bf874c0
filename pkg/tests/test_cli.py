"""End-to-end command line runs, exit codes, and artifact round-trips."""

import json
import pathlib

import numpy as np
import pytest

from refractor.cli import main
from refractor.geometry import build_quadrature
from refractor.measure import total_energy
from refractor.scene import load_scene

SCENES = pathlib.Path(__file__).resolve().parents[1] / "scenes"
CANONICAL = str(SCENES / "canonical.json")
SINGLE = str(SCENES / "single.json")

RESULT_KEYS = [
    "scene", "grid", "epsilon", "delta", "total_energy", "b_final", "H", "g",
    "residuals", "max_residual", "groups_used", "oracle_evaluations",
    "lipschitz_estimate", "group_bound", "bound_supported", "bound_ok",
    "converged", "wall_time",
]


def canonical_epsilon(frac=2e-2):
    scene = load_scene(CANONICAL)
    grid = build_quadrature(scene.cap, 64, 64)
    return frac * total_energy(grid, scene.intensity.values(grid))


def solve_canonical_64(tmp_path, tag, extra=()):
    out = tmp_path / f"result_{tag}.json"
    log = tmp_path / f"trace_{tag}.csv"
    code = main([
        "solve", CANONICAL, "--grid", "64x64",
        "--epsilon", repr(canonical_epsilon()),
        "--out", str(out), "--log", str(log), *extra,
    ])
    return code, out, log


# --- validate -------------------------------------------------------------------

def test_validate_canonical(capsys, tmp_path):
    jpath = tmp_path / "report.json"
    code = main(["validate", CANONICAL, "--grid", "64x64", "--json", str(jpath)])
    captured = capsys.readouterr()
    assert code == 0
    assert "tau_star = 0.323748" in captured.out
    assert captured.out.count("[ok]") == 6
    report = json.loads(jpath.read_text())
    assert report["structural_supported"] is True
    assert report["grid"] == [64, 64]


def test_validate_rejects_collinear_scene(tmp_path, capsys):
    scene = {
        "kappa": 0.3,
        "cap": {"axis": [0, 0, 1], "half_angle_deg": 10.0},
        "targets": [
            {"point": [2.5, 0.0, 4.330127018922194], "weight": 1.0},
            {"point": [5.0, 0.0, 8.660254037844387], "weight": 1.0},
        ],
        "tau": 0.2, "r0": 0.5, "b1": 1.6,
    }
    path = tmp_path / "collinear.json"
    path.write_text(json.dumps(scene))
    assert main(["validate", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_scene_file(capsys):
    assert main(["validate", "/nonexistent/scene.json"]) == 2
    assert "error:" in capsys.readouterr().err


def test_malformed_scene_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_grid_argument():
    with pytest.raises(SystemExit) as exc_info:
        main(["validate", CANONICAL, "--grid", "64"])
    assert exc_info.value.code == 2


# --- solve ----------------------------------------------------------------------

def test_solve_single_target(tmp_path, capsys):
    out = tmp_path / "single.json"
    code = main(["solve", SINGLE, "--grid", "32x32",
                 "--out", str(out), "--log", ""])
    assert code == 0
    assert "status: converged" in capsys.readouterr().out
    result = json.loads(out.read_text())
    assert result["groups_used"] == 0
    assert result["converged"] is True
    assert len(result["b_final"]) == 1


def test_solve_quantization_guard(tmp_path, capsys):
    # 8x8 nodes cannot resolve the default tolerance band
    out = tmp_path / "result.json"
    code = main(["solve", CANONICAL, "--grid", "8x8", "--out", str(out)])
    assert code == 3
    assert "delta/4" in capsys.readouterr().err
    assert not out.exists()


def test_solve_group_budget(tmp_path, capsys):
    code, out, _ = solve_canonical_64(tmp_path, "budget",
                                      extra=("--max-groups", "1"))
    assert code == 4
    assert "quiet group" in capsys.readouterr().err
    assert not out.exists()


def test_solve_canonical_full_pipeline(tmp_path, capsys):
    labels_path = tmp_path / "labels.csv"
    code, out, log = solve_canonical_64(
        tmp_path, "full", extra=("--labels", str(labels_path)))
    assert code == 0
    stdout = capsys.readouterr().out
    assert "status: converged" in stdout

    result = json.loads(out.read_text())
    assert list(result) == RESULT_KEYS
    assert result["grid"] == [64, 64]
    assert result["converged"] is True
    assert result["bound_ok"] is True
    assert result["max_residual"] <= result["epsilon"]
    assert len(result["b_final"]) == 4
    assert result["b_final"][0] == 1.6

    lines = labels_path.read_text().splitlines()
    assert len(lines) == 64 * 64 + 1
    labels = {line.split(",")[5] for line in lines[1:]}
    assert labels == {"1", "2", "3", "4"}   # all four cells populated

    log_lines = log.read_text().splitlines()
    assert log_lines[0].startswith("group,step,coordinate,")
    assert len(log_lines) == result["groups_used"] * 3 + 3 + 1

    # trace the solved vector: every non-crease ray must land
    code = main(["trace", CANONICAL, "--from-result", str(out),
                 "--grid", "64x64"])
    assert code == 0
    assert "ray energy matches measure: True" in capsys.readouterr().out

    # and the surface meshes at the requested resolution
    obj = tmp_path / "surface.obj"
    code = main(["mesh", CANONICAL, "--from-result", str(out),
                 "--resolution", "6x9", "--out", str(obj)])
    assert code == 0
    assert "54 vertices, 90 faces" in capsys.readouterr().out
    text = obj.read_text()
    assert sum(1 for line in text.splitlines() if line.startswith("v ")) == 54
    assert sum(1 for line in text.splitlines() if line.startswith("f ")) == 90


def test_trace_rejects_inadmissible_b(tmp_path, capsys):
    b_file = tmp_path / "b.json"
    b_file.write_text("[1.5, 1.6, 1.6, 1.6]")   # 1.5 sits on the open lower bound
    code = main(["trace", CANONICAL, "--b-file", str(b_file), "--grid", "16x16"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_trace_requires_b_source():
    with pytest.raises(SystemExit) as exc_info:
        main(["trace", CANONICAL])
    assert exc_info.value.code == 2


def test_trace_wrong_b_length(tmp_path, capsys):
    b_file = tmp_path / "b.json"
    b_file.write_text("[1.6, 1.6]")
    code = main(["trace", CANONICAL, "--b-file", str(b_file), "--grid", "16x16"])
    assert code == 2
    assert "entries" in capsys.readouterr().err


def test_solve_deterministic_across_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("REFRACTOR_THREADS", "1")
    code1, out1, log1 = solve_canonical_64(tmp_path, "t1")
    monkeypatch.setenv("REFRACTOR_THREADS", "4")
    code4, out4, log4 = solve_canonical_64(tmp_path, "t4")
    assert code1 == code4 == 0

    r1 = json.loads(out1.read_text())
    r4 = json.loads(out4.read_text())
    del r1["wall_time"], r4["wall_time"]
    assert json.dumps(r1, sort_keys=True) == json.dumps(r4, sort_keys=True)
    assert log1.read_bytes() == log4.read_bytes()
