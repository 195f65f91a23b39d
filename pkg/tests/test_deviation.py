import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covdiff.channel import FLAT_RAYLEIGH, TDL_A, ChannelModelSpec
from covdiff.deviation import (
    deviation_bound,
    dominant_term,
    epsilon_h,
    loglog_slope,
    reference_covariance,
    scaling_experiment,
    true_window_covariance,
    write_deviation_csv,
)
from covdiff.scenario import ScenarioConfig

E = np.eye(4)


def test_reference_covariance_examples():
    np.testing.assert_allclose(reference_covariance(np.zeros((4, 2)), np.eye(2), 0.3), 0.3 * E)
    np.testing.assert_allclose(reference_covariance(E[:, :1], np.eye(1), 0.0), np.diag([1.0, 0, 0, 0]))


def test_reference_covariance_column_sum_oracle():
    rng = np.random.default_rng(0)
    h = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    oracle = sum(np.outer(h[:, k], h[:, k].conj()) for k in range(6)) + 0.01 * E
    np.testing.assert_allclose(reference_covariance(h, np.eye(6), 0.01), oracle, atol=1e-12)


def test_reference_covariance_dimension_mismatch():
    with pytest.raises(ValueError):
        reference_covariance(np.zeros((4, 3)), np.eye(2), 0.0)


def test_true_window_covariance_examples():
    h = np.ones((4, 2))
    np.testing.assert_allclose(
        true_window_covariance([h, h, h], np.eye(2), 0.1), reference_covariance(h, np.eye(2), 0.1)
    )
    two = [E[:, :1], E[:, 1:2]]
    np.testing.assert_allclose(true_window_covariance(two, np.eye(1), 0.0), np.diag([0.5, 0.5, 0, 0]))
    np.testing.assert_allclose(
        true_window_covariance(two, np.eye(1), 1.0), np.diag([1.5, 1.5, 1, 1])
    )
    with pytest.raises(ValueError):
        true_window_covariance([], np.eye(1), 0.0)


@pytest.mark.parametrize("rho, hsq, expected", [(1.0, 5.0, 0.0), (0.5, 1.0, 1.0), (0.98, 16.0, 0.8)])
def test_epsilon_h_examples(rho, hsq, expected):
    assert epsilon_h(rho, hsq) == pytest.approx(expected, abs=1e-12)


def test_epsilon_h_rejects_out_of_range():
    for rho in (0.0, -0.1, 1.01):
        with pytest.raises(ValueError):
            epsilon_h(rho, 1.0)
    with pytest.raises(ValueError):
        deviation_bound(1.5, 1.0)


def test_deviation_bound_examples():
    assert deviation_bound(1.0, 16.0) == 0.0
    assert deviation_bound(0.98, 16.0, 1.0) == pytest.approx(7.04, abs=1e-12)
    assert deviation_bound(0.9, 3.0, 2.0) == pytest.approx(2 * deviation_bound(0.9, 3.0, 1.0))
    assert deviation_bound(0.99, 16.0) < deviation_bound(0.9, 16.0)


@given(rho=st.floats(0.01, 1.0), hsq=st.floats(0.0, 100.0), rx=st.floats(0.0, 10.0))
def test_bound_functions_are_pure(rho, hsq, rx):
    assert epsilon_h(rho, hsq) == epsilon_h(rho, hsq)
    assert deviation_bound(rho, hsq, rx) == deviation_bound(rho, hsq, rx)


@given(a=st.floats(0.01, 0.99), b=st.floats(0.01, 0.99), hsq=st.floats(0.1, 100.0))
def test_bound_monotone_in_rho(a, b, hsq):
    lo, hi = sorted((a, b))
    assert deviation_bound(hi, hsq) <= deviation_bound(lo, hsq)


def test_dominant_term_slope_is_one_half():
    rho = np.array([0.9, 0.95, 0.98, 0.99, 0.995, 0.998])
    dom = [dominant_term(r, 16.0) for r in rho]
    assert loglog_slope(1 - rho, dom) == pytest.approx(0.5, abs=1e-12)


def test_flat_channel_deviation_is_round_off():
    reports = scaling_experiment(ChannelModelSpec(FLAT_RAYLEIGH), ScenarioConfig(), [0.9, 0.99], trials=500)
    for r in reports:
        assert r.empirical_deviation < 1e-12
        assert r.dominated
        assert r.analytic_bound > 1.0


@pytest.fixture(scope="module")
def tdl_reports():
    return scaling_experiment(ChannelModelSpec(TDL_A), ScenarioConfig(), [0.9, 0.95, 0.99], trials=3000)


def test_tdl_deviation_decreases_and_is_dominated(tdl_reports):
    emp = [r.empirical_deviation for r in tdl_reports]
    assert emp[0] > emp[1] > emp[2] > 0
    assert all(r.dominated for r in tdl_reports)
    for r in tdl_reports:
        assert r.epsilon_h == pytest.approx(np.sqrt(2 * (1 - r.rho_th) * r.mean_h_frob_sq))
        # E||H||_F^2 = n_rx * k_pre for unit-power entries
        assert r.mean_h_frob_sq == pytest.approx(16.0, rel=0.05)


def test_incompatible_rho_is_named():
    with pytest.raises(ValueError, match="rho_th=0.99999"):
        scaling_experiment(ChannelModelSpec(TDL_A), ScenarioConfig(), [0.9, 0.99999], trials=100)


def test_deviation_csv(tmp_path, tdl_reports):
    path = tmp_path / "deviation_report.csv"
    write_deviation_csv(path, tdl_reports, "h1")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# artifact=covdiff-") and "config_hash=h1" in lines[0]
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == ["rho_th", "span", "empirical", "stderr", "bound", "epsilon_h"]
    assert float(rows[2]["empirical"]) == tdl_reports[2].empirical_deviation
