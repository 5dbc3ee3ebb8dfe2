import csv
import json
import subprocess
import sys

import pytest

from oamao.cli import main

SMALL = {
    "geometry": {"R_over_w": 9.8596, "w_over_r0": 0.1167, "z_over_zR": 0.1693},
    "correction": {"J": [10, 15]},
    "truncation": {"L_in": 2, "P_in": 2, "L_out": 3, "P_out": 3},
    "numeric": {"n_max": 8, "n_starts": 4},
    "probabilities": {"initial": [1, 0], "range": [-2, 2]},
    "oracle": {"mode": "quad", "n_samples": 200, "n_r": 128, "n_theta": 128},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL))
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_validate_case_a(tmp_path, capsys):
    path = tmp_path / "a.json"
    path.write_text(json.dumps({"geometry": {"R_over_w": 9.2088, "w_over_r0": 0.2165, "z_over_zR": 0.4234},
                                "correction": {"J": [10, 7]}}))
    assert main(["validate", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "valid" in out and "J=7 splits the (n=3, m=+-1) pair" in out


def test_validate_strong_turbulence_fails(tmp_path, capsys):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"geometry": {"R_over_w": 9.0, "w_over_r0": 20.0, "z_over_zR": 1.0}}))
    assert main(["validate", "--config", str(path)]) == 1
    assert "INVALID" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, config, capsys):
    missing = tmp_path / "m.json"
    missing.write_text(json.dumps({"correction": {"J": 10}}))
    assert main(["validate", "--config", str(missing)]) == 2
    assert "geometry" in capsys.readouterr().err
    assert main(["validate", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["fidelity", "--config", str(config), "--set", "correction.J=0"]) == 2
    assert main(["probabilities", "--config", str(config), "--out", str(tmp_path / "p"),
                 "--set", "probabilities.initial=[3,0]"]) == 2


def test_threads_env(monkeypatch, config, tmp_path):
    monkeypatch.setenv("OAMAO_THREADS", "zero")
    assert main(["validate", "--config", str(config)]) == 2
    monkeypatch.setenv("OAMAO_THREADS", "1")
    assert main(["fidelity", "--config", str(config), "--out", str(tmp_path / "f")]) == 0


def test_channel_artifacts(tmp_path, config):
    out = tmp_path / "c"
    assert main(["channel", "--config", str(config), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    for J in (10, 15):
        assert {f"superop_J{J}.oamao", f"choi_J{J}.oamao", f"kraus_J{J}.oamao", f"spectrum_J{J}.csv"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == names - {"manifest.json", "timings.json"}
    assert manifest["config"]["numeric"]["n_max"] == 8
    assert _rows(out / "spectrum_J10.csv")[0] == ["index [1]", "eigenvalue [1]", "delta_l [hbar]"]


def test_negative_mass_exit_1(tmp_path, config):
    assert main(["channel", "--config", str(config), "--out", str(tmp_path / "n"),
                 "--set", "numeric.neg_ceiling=1e-12", "--set", "geometry.w_over_r0=1.0"]) == 1


def test_fidelity_and_probabilities_csv(tmp_path, config):
    out = tmp_path / "f"
    assert main(["fidelity", "--config", str(config), "--out", str(out)]) == 0
    rows = _rows(out / "fidelity.csv")
    assert rows[0][:2] == ["J [1]", "F_min [1]"]
    assert [r[0] for r in rows[1:]] == ["10", "15"]
    assert all(0 < float(r[1]) <= 1 for r in rows[1:])
    assert main(["probabilities", "--config", str(config), "--out", str(out)]) == 0
    probs = _rows(out / "probabilities_delta_l.csv")
    assert probs[0] == ["J [1]", "delta_l [hbar]", "probability [1]"]
    table = {(int(j), int(d)): float(p) for j, d, p in probs[1:]}
    assert table[(15, 0)] >= table[(10, 0)]
    assert table[(10, 1)] > 0


def test_oracle_quad_passes(tmp_path, config):
    out = tmp_path / "o"
    assert main(["oracle", "--config", str(config), "--out", str(out), "--set", "correction.J=10"]) == 0
    assert _rows(out / "oracle_quad.csv")[1][-1] == "True"
    assert len(_rows(out / "oracle_quad_errors.csv")) > 1


def test_repeated_runs_are_byte_identical(tmp_path, config):
    import shutil

    digests = []
    out = tmp_path / "r"
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        assert main(["fidelity", "--config", str(config), "--out", str(out), "--seed", "3"]) == 0
        assert main(["channel", "--config", str(config), "--out", str(out), "--seed", "3"]) == 0
        digests.append({p.name: p.read_bytes() for p in out.iterdir() if p.name != "timings.json"})
    assert digests[0] == digests[1]


def test_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "oamao.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "validate" in res.stdout
