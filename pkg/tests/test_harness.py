import dataclasses
import json

import numpy as np
import pytest

from covdiff.config import (
    ConfigError,
    ExperimentConfig,
    SweepConfig,
    config_from_dict,
    load_config,
    save_config,
)
from covdiff.harness import (
    TEST,
    TRAIN,
    VAL,
    ResultTable,
    build_features,
    evaluate_schemes,
    resolve_seed,
    result_row,
    run_kt_sweep,
    run_snr_sweep,
    train_schemes,
    wilson_interval,
    write_summary,
    write_table,
)
from covdiff.scenario import ScenarioConfig


def small_config(**changes) -> ExperimentConfig:
    cfg = ExperimentConfig(n_train=1500, n_val=400, n_test=800, sweep=SweepConfig(snr_grid=[20.0], kt_grid=[4]))
    cfg.train.epochs = 4
    return dataclasses.replace(cfg, **changes)


# config


def test_config_roundtrip_is_lossless(tmp_path):
    cfg = small_config(root_seed=9, schemes=["proposed", "mdl"])
    path = tmp_path / "c.json"
    save_config(cfg, path)
    back = load_config(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.hash() == cfg.hash()
    assert back.scenario.channel == cfg.scenario.channel


def test_config_rejects_unknown_and_invalid_keys():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"n_trian": 5})
    with pytest.raises(ConfigError, match="scenario.channel"):
        config_from_dict({"scenario": {"channel": {"kind": "tdl_a", "extra": 1}}})
    with pytest.raises(ConfigError):
        config_from_dict({"scenario": {"channel": {"kind": "tdl_z"}}})
    with pytest.raises(ConfigError):
        config_from_dict({"sweep": {"snr_grid": []}})
    with pytest.raises(ConfigError):
        config_from_dict({"n_test": 0})
    with pytest.raises(ConfigError):
        config_from_dict({"schemes": ["oracle"]})


def test_invalid_json_is_a_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("COVDIFF_SEED", raising=False)
    assert resolve_seed(3, None) == 3
    monkeypatch.setenv("COVDIFF_SEED", "11")
    assert resolve_seed(3, None) == 11
    assert resolve_seed(3, 5) == 5


# accuracy bookkeeping


def test_wilson_interval_contains_accuracy():
    for correct, n in [(0, 10), (10, 10), (850, 1000), (1, 3)]:
        lo, hi = wilson_interval(correct, n)
        assert 0 <= lo <= correct / n <= hi <= 1
    lo, hi = wilson_interval(8500, 10_000)
    assert hi - lo < 0.02


def test_accuracy_of_synthetic_scheme_converges():
    rng = np.random.default_rng(0)
    p_err = 0.2
    labels = rng.integers(0, 4, 20_000)
    wrong = rng.random(labels.size) < p_err
    pred = np.where(wrong, (labels + rng.integers(1, 4, labels.size)) % 4, labels)
    row = result_row("synthetic", "snr", 0.0, pred, labels)
    assert row.ci_low <= 1 - p_err <= row.ci_high
    assert row.n_test == labels.size


def test_result_table_files(tmp_path):
    rows = [result_row(s, "snr", v, [0, 1, 1, 0], [0, 1, 0, 0]) for v in (0.0, 5.0) for s in ("a", "b")]
    table = ResultTable(rows, "cafe")
    write_table(table, tmp_path, "snr_sweep")
    csv_text = (tmp_path / "snr_sweep.csv").read_text()
    dat_text = (tmp_path / "snr_sweep.dat").read_text()
    for text in (csv_text, dat_text):
        assert text.startswith("# artifact=covdiff-") and "config_hash=cafe" in text.splitlines()[0]
    assert dat_text.splitlines()[2].split() == ["0.0", "0.75", "0.75"]
    back = ResultTable.from_csv(csv_text)
    assert back.rows == rows and back.config_hash == "cafe"
    assert table.accuracy("b", 5.0) == 0.75
    with pytest.raises(KeyError):
        table.accuracy("c", 0.0)


# datasets


def test_build_features_deterministic_across_workers():
    scs = [ScenarioConfig(snr_db=0.0, n_ofdm=10), ScenarioConfig(snr_db=20.0, n_ofdm=10)]
    a = build_features(scs, 1200, 3, (TRAIN, 1))
    b = build_features(scs, 1200, 3, (TRAIN, 1), workers=3)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    np.testing.assert_array_equal(a[2][:4], [0, 1, 0, 1])
    c = build_features(scs, 1200, 3, (VAL, 1))
    assert not np.array_equal(a[0], c[0])


# sweeps


def test_snr_sweep_is_deterministic_and_complete():
    cfg = small_config(sweep=SweepConfig(snr_grid=[10.0, 20.0]))
    t1 = run_snr_sweep(cfg)
    t2 = run_snr_sweep(cfg)
    assert t1.to_csv() == t2.to_csv()
    assert t1.schemes() == list(cfg.schemes)
    assert t1.values() == [10.0, 20.0]
    for r in t1.rows:
        assert 0 <= r.ci_low <= r.accuracy <= r.ci_high <= 1
        assert r.n_test == cfg.n_test


def test_retrain_per_point_path():
    cfg = small_config(retrain_per_point=True, schemes=["proposed", "thresholding"])
    table = run_snr_sweep(cfg)
    assert [r.scheme for r in table.rows] == ["proposed", "thresholding"]


def test_no_signal_gives_class_prior_accuracy():
    cfg = small_config(sweep=SweepConfig(snr_grid=[-200.0]), n_test=2000)
    table = run_snr_sweep(cfg)
    for r in table.rows:
        assert r.accuracy == pytest.approx(0.25, abs=0.05), r


def test_noiseless_empty_windows_are_trivial():
    sc = ScenarioConfig(k_pre=0, snr_db=float("inf"), n_ofdm=10)
    cfg = small_config(scenario=sc)
    # constant inputs: BN running stats need enough steps to settle
    cfg.train.epochs = 50
    xt, yt, _ = build_features([sc], 300, 0, (TRAIN, 9), d_distribution=0)
    xv, yv, _ = build_features([sc], 100, 0, (VAL, 9), d_distribution=0)
    xe, ye, _ = build_features([sc], 200, 0, (TEST, 9), d_distribution=0)
    assert np.all(xe == 0)
    from covdiff.estimators import calibrate_threshold, slice_features

    trained = train_schemes(cfg, (xt, yt), (xv, yv), "h")
    threshold = calibrate_threshold(slice_features(xv, "diff_only"), yv, sc.k_gf_max)
    rows = evaluate_schemes(cfg, sc, trained, threshold, (xe, ye), "kt", 0)
    assert all(r.accuracy == 1.0 for r in rows)


@pytest.fixture(scope="module")
def kt_table():
    cfg = ExperimentConfig(n_train=12_000, n_val=3000, n_test=3000, sweep=SweepConfig(kt_grid=[4, 6, 8]))
    cfg.train.epochs = 30
    return run_kt_sweep(cfg)


def test_kt_sweep_proposed_leads_every_point(kt_table):
    for v in kt_table.values():
        best_baseline = max(kt_table.accuracy(s, v) for s in kt_table.schemes() if s != "proposed")
        assert kt_table.accuracy("proposed", v) >= best_baseline


def test_kt_sweep_accuracy_trend_non_increasing(kt_table):
    acc = [kt_table.accuracy("proposed", v) for v in kt_table.values()]
    assert all(b <= a + 0.03 for a, b in zip(acc, acc[1:]))


def test_summary_collects_results(tmp_path):
    cfg = small_config()
    write_table(ResultTable([result_row("mdl", "snr", 20.0, [0], [0])], cfg.hash()), tmp_path, "snr_sweep")
    summary = write_summary(tmp_path, cfg)
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == summary
    assert summary["config_hash"] == cfg.hash()
    assert summary["results"]["snr_sweep"][0]["accuracy"] == 1.0
