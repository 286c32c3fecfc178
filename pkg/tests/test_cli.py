import re

import numpy as np
import pytest
import yaml

from growthfem.cli import ConfigError, RunConfig, load_config, main
from growthfem.io import load_checkpoint, save_checkpoint
from growthfem.continuation import read_branch_csv
from growthfem.mesh import read_snapshot, write_snapshot, build_annulus

SMALL = {"mesh": {"n_radial": 3, "n_circ": 12, "growing_layers": 1}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    data = dict(SMALL, output={"dir": str(tmp_path / "out")})
    path.write_text(yaml.safe_dump(data))
    return path


def test_print_config_lists_defaults(capsys):
    assert main(["mesh", "--print-config"]) == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert data["solve"]["tol"] == 1e-7
    assert data["solve"]["max_iter_gd"] == 10000
    assert data["mesh"]["n_circ"] == 92
    assert set(data) == {"mesh", "material", "solve", "schedule", "perturbation",
                         "continuation", "output"}


def test_printed_config_loads_back(tmp_path, capsys):
    main(["mesh", "--print-config"])
    path = tmp_path / "echo.yaml"
    path.write_text(capsys.readouterr().out)
    assert load_config(path) == RunConfig()


def test_unknown_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("solve:\n  tolerance: 1e-6\n")
    with pytest.raises(ConfigError):
        load_config(path)
    assert main(["mesh", "--config", str(path)]) == 2
    assert "tolerance" in capsys.readouterr().err


def test_invalid_values_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("material:\n  stiffness_ratio: -1\n")
    assert main(["mesh", "--config", str(path)]) == 2
    assert main(["mesh", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_mesh_command_and_svg_node_count(config, tmp_path, capsys):
    assert main(["mesh", "--config", str(config), "--render"]) == 0
    assert "nodes 48" in capsys.readouterr().out
    svg = (tmp_path / "out" / "mesh.svg").read_text()
    assert len(re.findall(r'<circle class="node"', svg)) == 48


def test_solve_continue_and_render(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(config), "--g", "1.1"]) == 0
    assert "LocalMinimizer" in capsys.readouterr().out
    ckpt = out / "solve_g1.1000.npz"
    ck = load_checkpoint(ckpt)
    assert ck.g == 1.1 and ck.label == "solve"

    assert main(["continue", "--config", str(config), "--seed", str(ckpt),
                 "--g", "1.14", "--dg", "0.02"]) == 0
    rows = read_branch_csv(out / "branch_solve.csv")
    assert [float(r["g"]) for r in rows] == pytest.approx([1.1, 1.12, 1.14])
    hist = np.load(out / "branch_solve.npz")
    assert len(hist["g"]) == len(rows)

    snap = out / "solve_g1.1000.txt"
    assert main(["render", str(snap), "--saddle"]) == 0
    svg = snap.with_suffix(".svg").read_text()
    assert 'class="saddle"' in svg
    assert len(re.findall(r'<circle class="node"', svg)) == 48


def test_empty_schedule_rejected(config, tmp_path):
    assert main(["solve", "--config", str(config), "--g", "1.1"]) == 0
    ckpt = tmp_path / "out" / "solve_g1.1000.npz"
    assert main(["continue", "--config", str(config), "--seed", str(ckpt), "--g", "1.1"]) == 2
    assert main(["continue", "--config", str(config), "--seed", str(ckpt),
                 "--g", "1.2", "--dg", "0"]) == 2
    assert main(["continue", "--config", str(config), "--seed", str(ckpt)]) == 2


def test_perturb_command(config, tmp_path, capsys):
    assert main(["perturb", "--config", str(config), "--g", "1.1",
                 "--gamma", "0.001", "--eigen-index", "1"]) == 0
    assert (tmp_path / "out" / "perturbed_e1_g1.1000.json").exists()
    assert main(["perturb", "--config", str(config), "--eigen-index", "0"]) == 2


def test_snapshot_round_trip_bitwise(tmp_path):
    mesh = build_annulus(0.5, 1.0, 3, 12, 1)
    rng = np.random.default_rng(3)
    coords = mesh.nodes * (1 + 1e-3 * rng.standard_normal(mesh.nodes.shape)) + np.pi * 1e-9
    path = tmp_path / "snap.txt"
    write_snapshot(path, mesh, coords)
    mesh2, coords2 = read_snapshot(path)
    assert np.array_equal(coords, coords2)
    assert np.array_equal(mesh.triangles, mesh2.triangles)


def test_checkpoint_round_trip(tmp_path):
    phi = np.random.default_rng(0).standard_normal(10)
    save_checkpoint(tmp_path / "c.npz", phi, 1.234, "s5")
    ck = load_checkpoint(tmp_path / "c.npz")
    assert np.array_equal(ck.phi, phi) and ck.g == 1.234 and ck.label == "s5"
