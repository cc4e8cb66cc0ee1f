import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from qtiming.cli import ConfigError, main, parse_grid, resolve_config
from qtiming.measurement import ExactForward


def run(tmp_path, command, config=None, *extra):
    argv = [command, "--out-dir", str(tmp_path / "out")]
    if config is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv + list(extra))


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_usage_errors_exit_1(capsys):
    for argv in ([], ["nonsense"], ["bounds", "--bogus"], ["bounds", "--threads", "0"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(tmp_path, "bounds", {"photons": -5}) == 2
    assert run(tmp_path, "bounds", {"unknown_field": 1}) == 2
    assert run(tmp_path, "estimate", {"counts": [[1, 2, 3]]}) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"photons": 10,\n "grid": }')
    assert main(["bounds", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err


def test_numerical_failure_exits_3(tmp_path):
    # a grid that cannot identify the ten response terms
    cfg = {"grid": {"tau0": [0.0], "tau": [0.5, 1.0], "q": [0.5]}, "noiseless": True}
    assert run(tmp_path, "calibrate", cfg) == 3


def test_parse_grid_forms():
    pts = parse_grid({"tau0": 0.0, "tau": {"start": 0, "stop": 1, "num": 3}, "q": [0.25, 0.5]}, 2.0)
    assert [(p.tau, p.q) for p in pts] == [(0, 0.25), (0.5, 0.25), (1, 0.25), (0, 0.5), (0.5, 0.5), (1, 0.5)]
    assert pts[0].sigma == 2.0
    log = parse_grid({"tau0": 0, "q": 0.5, "tau": {"start": 0.01, "stop": 1, "num": 3, "spacing": "log"}}, 1.0)
    assert [p.tau for p in log] == pytest.approx([0.01, 0.1, 1.0])
    assert len(parse_grid({"points": [[0, 1, 0.5]]}, 1.0)) == 1
    with pytest.raises(ConfigError):
        parse_grid({"tau": [1]}, 1.0)


def test_resolve_config_seed_override(tmp_path):
    cfg = resolve_config("montecarlo", {"seed": 4}, tmp_path, seed=9)
    assert cfg["seed"] == 9
    assert resolve_config("estimate", {"model": "m.json", "counts": [[1]]}, tmp_path)["model"] == str(tmp_path / "m.json")


def test_probabilities_zero_separation(tmp_path):
    assert run(tmp_path, "probabilities", {"grid": {"points": [[0.0, 0.0, 0.5], [0.0, 1.0, 0.5]]}}) == 0
    rows = read(tmp_path / "out" / "probabilities.csv")
    assert [float(rows[0][k]) for k in ("p0", "p1", "p2", "p3")] == pytest.approx([0, 0, 0.4, 0.6], abs=1e-15)
    assert float(rows[1]["p0"]) == pytest.approx(ExactForward()((0.0, 1.0, 0.5))[0], rel=1e-13)


def test_empty_grid_writes_header(tmp_path):
    assert run(tmp_path, "bounds", {"grid": {"points": []}}) == 0
    text = (tmp_path / "out" / "bounds.csv").read_text()
    assert text.count("\n") == 1 and text.startswith("tau0,tau,q,crlb_direct_tau0")


def test_bounds_halve_with_doubled_photons(tmp_path):
    grid = {"points": [[0.0, 0.0, 0.5], [0.1, 0.4, 0.25]]}
    assert run(tmp_path, "bounds", {"grid": grid, "photons": 1000}) == 0
    one = read(tmp_path / "out" / "bounds.csv")
    assert run(tmp_path, "bounds", {"grid": grid, "photons": 2000}) == 0
    two = read(tmp_path / "out" / "bounds.csv")
    for a, b in zip(one, two):
        for k in a:
            if k.startswith("crlb"):
                x, y = float(a[k]), float(b[k])
                assert (math.isinf(x) and math.isinf(y)) or y == pytest.approx(x / 2, rel=1e-9)
    assert "direct:zero_separation" in one[0]["flags"]
    assert math.isinf(float(one[0]["crlb_direct_tau"]))


def test_estimate_ml_from_expected_counts(tmp_path):
    counts = np.round(1e6 * ExactForward()((0.1, 0.8, 0.3))).astype(int).tolist()
    assert run(tmp_path, "estimate", {"counts": [counts], "sigma": 2.0}) == 0
    row = read(tmp_path / "out" / "estimates.csv")[0]
    assert float(row["tau_hat"]) == pytest.approx(1.6, abs=1e-3)
    assert row["row"] == "0"


def test_calibrate_then_estimate(tmp_path):
    assert main(["calibrate", "--out-dir", str(tmp_path / "cal")]) == 0
    manifest = json.loads((tmp_path / "cal" / "manifest.json").read_text())
    assert "r_squared_below_0.999" in manifest["flags"]
    model = tmp_path / "cal" / "response_model.json"
    counts = np.round(1e6 * ExactForward()((0.0, 1.0, 0.45))).astype(int).tolist()
    cfg = {"counts": [counts], "estimator": "gls-calibrated", "model": str(model)}
    assert run(tmp_path, "estimate", cfg) == 0
    assert run(tmp_path, "estimate", {"counts": [counts], "estimator": "gls-calibrated"}) == 2


def test_montecarlo_and_replay(tmp_path):
    cfg = {"grid": {"points": [[0.0, 1.0, 0.5]]}, "repetitions": 5, "photons_per_run": 2000}
    assert run(tmp_path, "montecarlo", cfg) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert {o["path"] for o in manifest["outputs"]} == {"summary.csv", "tracks.csv", "runs.csv", "experiment.json"}
    assert manifest["seed"] == manifest["config"]["seed"]
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()
    # a different seed changes the numbers
    assert run(tmp_path, "montecarlo", cfg, "--seed", "1") == 0
    assert (out / "summary.csv").read_bytes() != (tmp_path / "again" / "summary.csv").read_bytes()


def test_replay_detects_mismatch(tmp_path):
    assert run(tmp_path, "probabilities", {"grid": {"points": [[0.0, 1.0, 0.5]]}}) == 0
    path = tmp_path / "out" / "manifest.json"
    doc = json.loads(path.read_text())
    doc["outputs"][0]["sha256"] = "0" * 64
    path.write_text(json.dumps(doc))
    assert main(["replay", str(path)]) == 3


def test_frog_command(tmp_path):
    cfg = {"taus": [0.1, 0.5], "n_samples": 256, "max_delay": 4.0, "spectrograms": [0.0],
           "spectrogram_format": "both"}
    assert run(tmp_path, "frog", cfg) == 0
    out = tmp_path / "out"
    assert len(read(out / "rayleigh.csv")) == 2
    assert (out / "spectrogram_00.bin").read_bytes()[:8] == b"QTFROG01"
    assert (out / "spectrogram_00.csv").exists()
    assert run(tmp_path, "frog", {"taus": [0.5, 0.1]}) == 2
    assert run(tmp_path, "frog", {"taus": [0.1], "half_width": 2.0}) == 3


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qtiming.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "qtiming" in res.stdout
