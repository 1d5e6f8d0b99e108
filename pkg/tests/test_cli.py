import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momnet import io
from momnet.cli import main
from momnet.config import ExperimentConfig, PRESETS, derive_seed, preset
from momnet.errors import ArtifactIOError, ConfigurationError
from momnet.pipeline import read_sweep_csv, run_sweep


def _write_config(tmp_path: Path, name: str = "f1", **edits) -> Path:
    cfg = preset(name).to_dict()
    for section, values in edits.items():
        cfg[section].update(values)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


def _files(directory: Path) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_preset_prints_valid_config(capsys):
    assert main(["preset", "f1"]) == 0
    cfg = ExperimentConfig.from_dict(json.loads(capsys.readouterr().out))
    assert cfg.network.dims == [40, 8, 12]
    assert cfg.validate()  # n_x < 10k is flagged


def test_all_presets_validate():
    for name in PRESETS:
        preset(name).validate()


def test_generate_is_deterministic(tmp_path):
    cfg = _write_config(tmp_path)
    for out in ("a", "b"):
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / out), "--seed", "3"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert _files(tmp_path / "a").keys() >= {"network.json", "A1.csv", "A2.csv", "A1_raw.csv"}


def test_seed_changes_weights(tmp_path):
    cfg = _write_config(tmp_path)
    main(["generate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["generate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "A1.csv").read_bytes() != (tmp_path / "b" / "A1.csv").read_bytes()


def test_theta_outside_band_warns(tmp_path, caplog):
    cfg = _write_config(tmp_path, "recovery", network={"theta": 0.6})
    with caplog.at_level("WARNING"):
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert any("band" in r.getMessage() for r in caplog.records)
    assert any("band" in w for w in io.read_json(tmp_path / "run" / "network.json")["warnings"])


def test_n_x_below_k_is_rejected(tmp_path):
    cfg = preset("f1").to_dict()
    cfg["network"]["dims"] = [6, 8, 12]
    cfg["score_model"]["dim"] = 6
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "run")]) == 2


def test_unknown_key_is_rejected(tmp_path):
    cfg = preset("f1").to_dict()
    cfg["estimation"]["label_noise"] = 1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["pipeline", "--config", str(path), "--out", str(tmp_path / "run")]) == 2


@pytest.mark.parametrize(
    "edit",
    [
        {"score_model": {"dim": 39}},
        {"recovery": {"k": 7}},
        {"estimation": {"n": 0}},
        {"estimation": {"mixing": "uniform"}},
        {"recovery": {"backend": "barrier"}},
    ],
)
def test_cross_section_validation(edit):
    cfg = preset("f1").to_dict()
    for section, values in edit.items():
        cfg[section].update(values)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(cfg).validate()


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 4


def test_closed_form_pipeline_succeeds(tmp_path, capsys):
    cfg = _write_config(tmp_path, "recovery")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["success"] and summary["exact_recovery"]
    assert summary["max_angle"] < 1e-6
    for name in ("moment.csv", "moment.json", "A1_hat.csv", "recovery_trace.json", "match_report.json"):
        assert (tmp_path / "run" / name).exists()


def test_tiny_sample_completes_without_success(tmp_path):
    cfg = _write_config(tmp_path, estimation={"n": 10})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    summary = io.read_json(tmp_path / "run" / "summary.json")
    assert summary["success"] is False and summary["error"] is None


def test_failed_stage_leaves_marker(tmp_path):
    # three samples give a moment of rank 3 < k
    cfg = _write_config(tmp_path, estimation={"n": 3})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 3
    run = tmp_path / "run"
    assert io.read_json(run / "FAILED.json")["error"] == "RankDeficientError"
    assert io.read_json(run / "summary.json")["success"] is False
    assert (run / "moment.csv").exists()


def test_rerun_gives_identical_summary(tmp_path):
    cfg = _write_config(tmp_path)
    for out in ("a", "b"):
        assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_worker_count_does_not_change_artifacts(tmp_path):
    cfg = _write_config(tmp_path)
    main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "a"), "--workers", "1"])
    main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "3"])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_recover_never_reads_ground_truth(tmp_path):
    cfg = _write_config(tmp_path, "recovery")
    run = tmp_path / "run"
    base = ["--config", str(cfg), "--out", str(run)]
    assert main(["generate", *base]) == 0
    assert main(["moment", *base]) == 0
    truth = {name: (run / name).read_bytes() for name in ("A1.csv", "A1_raw.csv", "A2.csv", "network.json")}
    for name in truth:
        (run / name).unlink()
    assert main(["recover", *base]) == 0
    for name, data in truth.items():
        (run / name).write_bytes(data)
    assert main(["evaluate", *base]) == 0
    assert io.read_json(run / "summary.json")["success"]


def test_staged_commands_match_pipeline(tmp_path):
    cfg = _write_config(tmp_path)
    staged, whole = tmp_path / "staged", tmp_path / "whole"
    for cmd in ("generate", "moment", "recover", "evaluate"):
        assert main([cmd, "--config", str(cfg), "--out", str(staged)]) == 0
    assert main(["pipeline", "--config", str(cfg), "--out", str(whole)]) == 0
    a, b = _files(staged), _files(whole)
    for name in a.keys() - {"summary.json"}:
        assert a[name] == b[name], name


def test_mode_flag_overrides_config(tmp_path):
    cfg = _write_config(tmp_path)
    main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run"), "--mode", "sampled"])
    assert io.read_json(tmp_path / "run" / "moment.json")["label_mode"] == "sampled"


def test_sweep_over_n(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "sweep"
    args = ["sweep", "--config", str(cfg), "--out", str(out), "--axis", "n", "--values", "3", "20000", "--seeds", "2"]
    assert main(args) == 0
    rows = read_sweep_csv(out / "sweep.csv")
    assert list(rows[0]) == ["seed", "n", "theta", "k", "n_x", "success", "max_angle", "mean_cosine_error", "error"]
    assert [(r["n"], r["seed"]) for r in rows] == [("3", "0"), ("3", "1"), ("20000", "0"), ("20000", "1")]
    # the n=3 cells fail and are recorded; the sweep carries on
    assert all("RankDeficientError" in r["error"] for r in rows[:2])
    assert all(r["error"] == "" and float(r["mean_cosine_error"]) < 0.1 for r in rows[2:])
    assert (out / "n=20000" / "seed=1" / "summary.json").exists()


def test_sweep_theta_beyond_band(tmp_path):
    cfg = preset("recovery")
    cfg.workers = 4
    rows = run_sweep(cfg, "theta", [0.3, 0.5, 0.9], 4, tmp_path)
    rates = [np.mean([bool(r["success"]) for r in rows if r["theta"] == t]) for t in (0.3, 0.5, 0.9)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[0] > rates[-1]


def test_sweep_over_n_x(tmp_path):
    cfg = _write_config(tmp_path, "recovery")
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--axis", "n_x", "--values", "60", "--seeds", "1"]) == 0
    (row,) = read_sweep_csv(out / "sweep.csv")
    assert row["n_x"] == "60" and row["success"] == "True"


def test_sweep_needs_values(tmp_path):
    cfg = _write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--axis", "n", "--values"]) == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "momnet.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "pipeline" in res.stdout


# ----------------------------------------------------------------------- io


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_matrix_round_trip_is_exact(tmp_path_factory, rows, cols, seed):
    m = np.random.default_rng(seed).standard_normal((rows, cols)) * 10.0 ** np.random.default_rng(seed).integers(-300, 300)
    path = tmp_path_factory.mktemp("m") / "m.csv"
    io.write_matrix(path, m)
    assert np.array_equal(io.read_matrix(path), m)


def test_matrix_header_mismatch(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("2,2\n1.0,2.0\n")
    with pytest.raises(ArtifactIOError):
        io.read_matrix(path)
    path.write_text("2,x\n")
    with pytest.raises(ArtifactIOError):
        io.read_matrix(path)


def test_json_round_trip(tmp_path):
    data = {"b": np.float64(0.1), "a": np.arange(3), "c": np.bool_(True), "d": float("nan")}
    io.write_json(tmp_path / "x.json", data)
    back = io.read_json(tmp_path / "x.json")
    assert back["a"] == [0, 1, 2] and back["b"] == 0.1 and back["c"] is True and np.isnan(back["d"])
    assert (tmp_path / "x.json").read_text().index('"a"') < (tmp_path / "x.json").read_text().index('"b"')
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ArtifactIOError):
        io.read_json(tmp_path / "bad.json")


def test_config_round_trip():
    cfg = preset("f1")
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_derive_seed_separates_streams():
    assert derive_seed(0, 1) != derive_seed(0, 2) != derive_seed(1, 1)
    assert derive_seed(5, 1) == derive_seed(5, 1)
