import json
from pathlib import Path

import pytest
import yaml

from rbrw.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
OUTPUTS = {
    "simulate": {"trajectories.csv", "events.jsonl"},
    "couple": {"coupled.csv", "certificate.txt"},
    "moments": {"first_moment.csv", "second_moment.csv", "steady_state.json"},
    "spectral": {"theta.csv", "rho.csv"},
    "invariant": {"histogram_n3.csv", "histogram_n5.csv", "histogram_n10.csv", "report.txt"},
    "phases": {"regimes.csv", "report.txt"},
    "volumes": {"volumes.csv", "report.txt"},
}


def _run(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


@pytest.mark.parametrize("command", sorted(OUTPUTS))
def test_every_command_runs_and_writes_its_outputs(command, tmp_path):
    assert _run(command, CONFIGS / f"{command}.yaml", tmp_path) == 0
    files = {f.name for f in tmp_path.iterdir()}
    assert files == OUTPUTS[command] | {"manifest.json"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == command
    assert set(manifest["outputs"]) == OUTPUTS[command]


def test_reruns_are_byte_identical(tmp_path):
    cfg = CONFIGS / "simulate.yaml"
    assert _run("simulate", cfg, tmp_path / "a") == 0
    assert _run("simulate", cfg, tmp_path / "b") == 0
    for name in OUTPUTS["simulate"] | {"manifest.json"}:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_data_not_schema(tmp_path):
    cfg = CONFIGS / "simulate.yaml"
    assert _run("simulate", cfg, tmp_path / "a") == 0
    assert _run("simulate", cfg, tmp_path / "b", "--seed", "99") == 0
    a = (tmp_path / "a" / "trajectories.csv").read_text().splitlines()
    b = (tmp_path / "b" / "trajectories.csv").read_text().splitlines()
    assert a[0] == b[0] and len(a) == len(b)
    assert a != b
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 99


def test_moments_steady_state_values(tmp_path):
    assert _run("moments", CONFIGS / "moments.yaml", tmp_path) == 0
    ss = json.loads((tmp_path / "steady_state.json").read_text())
    assert ss["stable"] and ss["U1"] == pytest.approx(2.0)


def _write(tmp_path, cfg):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg) if isinstance(cfg, dict) else cfg)
    return path


def test_missing_seed_is_a_config_error(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "spectral.yaml").read_text())
    del cfg["seed"]
    assert _run("spectral", _write(tmp_path, cfg), tmp_path / "o") == 3


def test_missing_physical_parameter_is_a_config_error(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "simulate.yaml").read_text())
    del cfg["simulate"]["gamma"]
    assert _run("simulate", _write(tmp_path, cfg), tmp_path / "o") == 3


def test_unreadable_config(tmp_path):
    assert _run("spectral", _write(tmp_path, "seed: [1, 2\n"), tmp_path / "o") == 2
    assert _run("spectral", _write(tmp_path, "- just a list\n"), tmp_path / "o") == 2
    assert _run("spectral", tmp_path / "missing.yaml", tmp_path / "o") == 2


def test_bad_command_line():
    assert main(["nonsense", "--config", "x.yaml"]) == 2
    assert main(["spectral"]) == 2


def test_invalid_coupling_is_rejected(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "couple.yaml").read_text())
    cfg["couple"]["components"][0]["k"] = 5
    assert _run("couple", _write(tmp_path, cfg), tmp_path / "o") == 3
