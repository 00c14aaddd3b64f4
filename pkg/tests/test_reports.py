# -*- coding: utf-8 -*-
"""Séries por nó e relatório de decomposição: esquema de colunas e coerência."""

import numpy as np
import pytest

from hedging import RegressionSpec, decompose, hedge
from market import simulate_bundle_under_Q
from myopic import check_identity_eu1
from paths import TimeGrid
from reports import bundle_series, build_decomposition_report, hedge_series, myopic_series

X = 1.0

PI_COLUMNS = ["mean_0", "q05_0", "q50_0", "q95_0"]


@pytest.fixture(scope="module")
def small_bundle(constant_model, seeds):
    return simulate_bundle_under_Q(constant_model, TimeGrid(1.0, 16), 300, seeds)


@pytest.fixture(scope="module")
def small_result(small_bundle, constant_model, crra, seeds):
    return decompose(X, constant_model, crra, small_bundle.grid, 300, seeds,
                     spec=RegressionSpec(degree=2), bundle=small_bundle)


def test_bundle_series(small_bundle):
    df = bundle_series(small_bundle)
    assert list(df.columns) == [
        "t", "theta_mean_0", "theta_q05_0", "theta_q95_0", "z_mean", "z_se", "z_score", "s_mean_0",
    ]
    assert len(df) == 17
    assert df["z_mean"].iloc[0] == pytest.approx(1.0)
    np.testing.assert_allclose(df["theta_mean_0"], 0.4)


def test_myopic_series(small_bundle, log_utility, crra):
    df = myopic_series(X, small_bundle, log_utility)
    assert [f"pi_tilde_vw_{c}" for c in PI_COLUMNS] == [c for c in df.columns if c.startswith("pi_tilde")]
    assert not df["v_mean"].any()
    assert "eu1_rms" not in df.columns

    eu1 = check_identity_eu1(X, small_bundle, crra)
    df = myopic_series(X, small_bundle, crra, eu1=eu1)
    assert df["eu1_rms"].iloc[0] == pytest.approx(0.0, abs=1e-14)
    assert df["wealth_mean"].iloc[0] == pytest.approx(X)


def test_hedge_series(small_bundle, crra):
    result = hedge(X, small_bundle, crra, RegressionSpec(degree=2))
    df = hedge_series(X, small_bundle, crra, result)
    assert {"beta_mean_0", "beta_q05_0", "beta_q95_0", "pi_bar_vw_q50_0", "tower_z"} <= set(df.columns)
    assert len(df) == 17
    assert np.isnan(df["tower_z"].iloc[-1])
    assert np.all(np.isfinite(df["tower_z"].iloc[:-1]))


class TestDecompositionReport:
    def test_series_columns(self, small_result, crra):
        eu1 = check_identity_eu1(small_result.xstar.x_star, small_result.bundle, crra)
        report = build_decomposition_report(small_result, crra, eu1, {"master_seed": 1}, {"grid": {}})
        expected = (
            ["t"]
            + [f"pi_tilde_vw_{c}" for c in PI_COLUMNS]
            + [f"pi_bar_vw_{c}" for c in PI_COLUMNS]
            + ["v_mean", "v_se", "wealth_mean", "beta_mean_0", "beta_q05_0", "beta_q95_0", "eu1_rms"]
        )
        assert list(report.series.columns) == expected
        assert len(report.series) == 17

    def test_summary(self, small_result, crra):
        eu1 = check_identity_eu1(small_result.xstar.x_star, small_result.bundle, crra)
        report = build_decomposition_report(small_result, crra, eu1, {"master_seed": 1}, {}, slopes={"dt": 0.5})
        summary = report.summary()
        assert summary["x"] == X
        assert summary["x_star"] == pytest.approx(small_result.xstar.x_star)
        assert summary["header"] == {"seeds": {"master_seed": 1}, "config": {}, "conforming": True}
        assert summary["slopes"] == {"dt": 0.5}
        assert summary["metrics"]["n_paths"] == 300
        assert summary["metrics"]["truncation"] == "off"
        assert set(summary["expected_v"]) >= {"value", "stderr", "n_samples"}
