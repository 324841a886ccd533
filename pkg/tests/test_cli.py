import json
from pathlib import Path

import pytest

from leakypop.cli import main
from leakypop.io import read_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL_ASRM0 = """
[model]
preset = asrm0
epsilon = 0.05
[grid]
n_a = 60
n_m = 15
[run]
record_stride = 5
raster_neurons = 10
[verify]
epsilons = 0, 0.05
"""


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL_ASRM0)
    return str(p)


def _run(tmp_path, *argv):
    out = tmp_path / argv[0]
    code = main([*argv, "--out", str(out)])
    return code, out


def _check_outputs(out):
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["outputs"]:
        assert (out / name).is_file(), name
    return manifest


@pytest.mark.parametrize("argv", [
    ("simulate-particles", "--n", "500", "--t-end", "1"),
    ("solve-pde", "--grid", "40x10", "--t-end", "1"),
    ("solve-pde", "--t-end", "1", "--frozen-x", "0.2"),
    ("harris-rate", "--t-end", "10"),
    ("stability-sweep", "--epsilons", "0,0.05", "--t-end", "5"),
    ("compare", "--n", "500", "--t-end", "1"),
])
def test_subcommands_on_small_asrm0(tmp_path, small, argv):
    code, out = _run(tmp_path, *argv, "--config", small, "--seed", "7")
    assert code == 0
    manifest = _check_outputs(out)
    assert manifest["subcommand"] == argv[0] and manifest["seed"] == 7


def test_simulate_particles_outputs(tmp_path, small):
    code, out = _run(tmp_path, "simulate-particles", "--config", small, "--n", "300",
                     "--t-end", "2")
    assert code == 0
    header, trace = read_csv(out / "trace.csv")
    assert header[:2] == ["t", "x"] and trace[-1, 0] == pytest.approx(2.0)
    _, raster = read_csv(out / "raster.csv")
    assert raster.size == 0 or raster[:, 0].max() < 10


def test_depression_commands(tmp_path, capsys):
    cfg = str(CONFIGS / "depression.ini")
    code, out = _run(tmp_path, "verify-std-formula", "--config", cfg, "--x", "0")
    assert code == 0
    assert "0.666666" in capsys.readouterr().out
    code, out = _run(tmp_path, "stationary", "--config", cfg)
    assert code == 0
    _check_outputs(out)


def test_doeblin_check_small_grid(tmp_path):
    code, out = _run(tmp_path, "doeblin-check", "--config", str(CONFIGS / "additive.ini"),
                     "--grid", "100x25", "--probes", "4")
    assert code == 0
    _check_outputs(out)
    header, rows = read_csv(out / "doeblin_probes.csv")
    assert rows.shape[0] == 5  # 4 probes plus one beyond R


@pytest.mark.parametrize("argv, msg", [
    (("solve-pde", "--config", "does-not-exist.ini"), "not found"),
    (("verify-std-formula", "--config", str(CONFIGS / "asrm0.ini")), "depression"),
    (("solve-pde", "--config", str(CONFIGS / "asrm0.ini"), "--dt", "1.0", "--t-end", "1"), "CFL"),
    (("simulate-particles", "--config", str(CONFIGS / "asrm0.ini"), "--seed", "-1"), "seed"),
])
def test_errors_exit_nonzero_with_message(tmp_path, capsys, argv, msg):
    code, _ = _run(tmp_path, *argv)
    assert code == 1
    assert msg in capsys.readouterr().err


def test_bad_config_key(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[model]\npreset = asrm0\n[grid]\ncells = 3\n")
    code, _ = _run(tmp_path, "solve-pde", "--config", str(p))
    assert code == 1
    assert "[grid].cells" in capsys.readouterr().err


def test_grid_argument_is_validated(tmp_path):
    with pytest.raises(SystemExit):
        main(["solve-pde", "--config", str(CONFIGS / "asrm0.ini"), "--grid", "40by10"])
