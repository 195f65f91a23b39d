import dataclasses
import json

import pytest

from covdiff import __version__
from covdiff.cli import main
from covdiff.config import CorrCurveConfig, DeviationConfig, ExperimentConfig, SweepConfig, save_config
from covdiff.scenario import ScenarioConfig


@pytest.fixture
def small_cfg(tmp_path):
    cfg = dataclasses.replace(
        ExperimentConfig(),
        n_train=600,
        n_val=200,
        n_test=300,
        sweep=SweepConfig(snr_grid=[20.0], kt_grid=[4]),
        deviation=DeviationConfig(rho_grid=[0.9, 0.99], trials=200),
        corr_curve=CorrCurveConfig(max_delta_f=10, trials=2000),
    )
    cfg.train.epochs = 2
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    return cfg, path


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "sweep-snr" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [["frobnicate"], ["sweep-snr", "--no-such-flag"], ["sweep-snr", "--scheme", "oracle"], []],
)
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_bad_config_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"n_trian": 3}')
    assert main(["report", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_sweep_json_output(small_cfg, tmp_path, capsys):
    cfg, path = small_cfg
    code = main(["sweep-snr", "--config", str(path), "--out-dir", str(tmp_path / "o"),
                 "--scheme", "proposed,mdl", "--json"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["config_hash"] == dataclasses.replace(cfg, schemes=["proposed", "mdl"]).hash()
    assert {r["scheme"] for r in out["rows"]} == {"proposed", "mdl"}
    header = (tmp_path / "o" / "snr_sweep.csv").read_text().splitlines()[0]
    assert f"covdiff-{__version__}" in header and out["config_hash"] in header


def test_gen_train_eval_and_hash_guard(small_cfg, tmp_path, capsys):
    cfg, path = small_cfg
    a, b = tmp_path / "a", tmp_path / "b"
    common = ["--config", str(path), "--scheme", "proposed,thresholding,mdl"]
    assert main(["gen-data", *common, "--out-dir", str(a), "--raw-pairs", "3"]) == 0
    assert (a / "data" / "pairs.npz").exists()
    assert main(["eval", *common, "--out-dir", str(a)]) == 2
    assert "run train first" in capsys.readouterr().err
    assert main(["train", *common, "--out-dir", str(a)]) == 0
    assert sorted(p.name for p in (a / "models").iterdir()) == ["proposed.json", "threshold.json"]
    assert main(["eval", *common, "--out-dir", str(a)]) == 0
    assert (a / "eval.csv").exists() and (a / "eval.dat").exists()

    other = dataclasses.replace(cfg, scenario=ScenarioConfig(snr_db=5.0))
    other_path = tmp_path / "other.json"
    save_config(other, other_path)
    assert main(["gen-data", "--config", str(other_path), "--out-dir", str(b)]) == 0
    capsys.readouterr()
    assert main(["eval", *common, "--out-dir", str(a), "--data-dir", str(b / "data")]) == 2
    assert "dataset hash mismatch" in capsys.readouterr().err


def test_missing_data_exits_two(small_cfg, tmp_path, capsys):
    _, path = small_cfg
    assert main(["train", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    assert "gen-data" in capsys.readouterr().err


def test_env_seed_reaches_saved_config(small_cfg, tmp_path, monkeypatch):
    _, path = small_cfg
    monkeypatch.setenv("COVDIFF_SEED", "41")
    assert main(["report", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "config.json").read_text())["root_seed"] == 41
    assert main(["report", "--config", str(path), "--seed", "2", "--out-dir", str(tmp_path / "p")]) == 0
    assert json.loads((tmp_path / "p" / "config.json").read_text())["root_seed"] == 2


def test_corr_curve_bound_and_report_files(small_cfg, tmp_path):
    cfg, path = small_cfg
    out = tmp_path / "o"
    assert main(["corr-curve", "--config", str(path), "--out-dir", str(out)]) == 0
    for name in ("corr_curve.csv", "corr_curve.dat"):
        first = (out / name).read_text().splitlines()[0]
        assert f"covdiff-{__version__}" in first and f"config_hash={cfg.hash()}" in first
    assert main(["bound", "--config", str(path), "--out-dir", str(out)]) == 0
    assert (out / "deviation_report.csv").read_text().count("\n") >= 3
    assert main(["report", "--config", str(path), "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config_hash"] == cfg.hash()
