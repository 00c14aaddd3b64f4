# -*- coding: utf-8 -*-
"""Tabela de checks, bundles compartilhados, estudos de convergência e a bateria."""

import numpy as np
import pytest

from config import parse_config
from errors import InvalidArgumentError
from hedging import RegressionSpec, hedge, solve_xstar
from paths import SeedSpec, TimeGrid
from studies import (
    CheckResult,
    SuiteResult,
    _check_degree_refinement,
    _check_variational,
    _check_xstar,
    all_gating_passed,
    checks_frame,
    convergence_study,
    hitting_level,
    run_acceptance_suite,
    shared_q_bundles,
    terminal_rel_rms,
)

SMALL_CONFIG = """
[model]
mpr = constant
theta = 0.4
sigma = 0.2

[utility]
name = {utility}
{extra}

[grid]
n_steps = 16

[mc]
n_paths = 200

[hedging]
degree = 2
"""


def small_config(utility="power", extra="p = 0.5"):
    return parse_config(SMALL_CONFIG.format(utility=utility, extra=extra))


class TestCheckTable:
    def test_non_gating_failures_are_ignored(self):
        checks = [
            CheckResult("a", True, 0.1, 1.0, 10),
            CheckResult("b", False, 3.0, 1.0, 10, gating=False),
        ]
        assert all_gating_passed(checks)
        assert SuiteResult(checks).passed

    def test_gating_failure(self):
        suite = SuiteResult([CheckResult("a", False, 2.0, 1.0)])
        assert not suite.passed

    def test_frame_columns(self):
        df = checks_frame([CheckResult("a", True, 0.1, 1.0, 10, "ok")])
        assert list(df.columns) == ["name", "passed", "value", "threshold", "n_samples", "gating", "detail"]
        assert SuiteResult([]).to_frame().empty


class TestSharedBundles:
    def test_coarse_uses_same_brownian(self, constant_model):
        fine, coarse = shared_q_bundles(constant_model, TimeGrid(1.0, 16), 50, SeedSpec(3))
        assert fine.grid.n_steps == 16
        assert coarse.grid.n_steps == 8
        np.testing.assert_array_equal(coarse.Wtilde, fine.Wtilde[:, ::2])

    def test_terminal_rel_rms_is_small(self, constant_model, crra):
        fine, _ = shared_q_bundles(constant_model, TimeGrid(1.0, 64), 400, SeedSpec(4))
        x_star = solve_xstar(1.0, fine, crra).x_star
        result = hedge(x_star, fine, crra, RegressionSpec(degree=2))
        assert terminal_rel_rms(1.0, x_star, fine, crra, result) < 0.15


class TestConvergenceStudy:
    def test_degree_and_paths_ladders(self):
        study = convergence_study(small_config(), {"degree": (0, 2), "paths": (2,)})
        assert set(study.table["ladder"]) == {"degree", "paths"}
        assert len(study.table) == 8
        assert list(study.metric("paths", "expected_v").index) == [100.0, 200.0]
        assert np.isfinite(study.slope("degree", "variance_ratio"))
        assert np.isnan(study.slope("dt", "eu1_rms"))

    def test_dt_ladder_refines(self):
        study = convergence_study(small_config(), {"dt": (2,)})
        eu1 = study.metric("dt", "eu1_rms")
        assert list(eu1.index) == [1 / 8, 1 / 16]
        assert eu1.iloc[1] < eu1.iloc[0]
        assert study.slope("dt", "eu1_rms") > 0

    def test_unknown_ladder(self):
        with pytest.raises(InvalidArgumentError, match="escadas desconhecidas"):
            convergence_study(small_config(), {"seeds": (1,)})


class TestSuiteChecks:
    @pytest.fixture(scope="class")
    def bundles(self, constant_model):
        return shared_q_bundles(constant_model, TimeGrid(1.0, 32), 400, SeedSpec(6))

    @pytest.mark.parametrize("degree, compared", [(2, [1, 2]), (0, [0, 1])])
    def test_degree_refinement_compares_adjacent_degrees(self, degree, compared, bundles, crra):
        fine, _ = bundles
        cfg = small_config().with_overrides(steps=32, paths=400)
        spec = RegressionSpec(degree=degree)
        x_star = solve_xstar(1.0, fine, crra).x_star
        result = hedge(x_star, fine, crra, spec)
        check, table = _check_degree_refinement(cfg, x_star, fine, crra, spec, result, "off")
        assert check.name == "terminal_degree_refinement"
        assert list(table["degree"]) == compared
        assert (table["terminal_rel_rms"] > 0).all()

    def test_degree_refinement_is_indifferent_without_hedge(self, bundles, log_utility):
        fine, _ = bundles
        spec = RegressionSpec(degree=2)
        result = hedge(1.0, fine, log_utility, spec)
        check, table = _check_degree_refinement(small_config("log", ""), 1.0, fine, log_utility, spec, result, "off")
        assert check.passed
        assert table["terminal_rel_rms"].iloc[0] == table["terminal_rel_rms"].iloc[1]

    def test_variational_checks_mid_grid_anchor(self, bundles):
        fine, coarse = bundles
        checks, table = _check_variational(fine, coarse)
        assert [c.name for c in checks] == [
            "gronwall_bound", "phi1_closed_form_refinement[s=0]", "phi1_closed_form_refinement[s=0.5]",
        ]
        assert checks[0].passed
        assert table["ok"].all()
        assert all(c.value > 1.0 for c in checks[1:])

    def test_xstar_residual_tolerance(self, bundles, cara):
        fine, _ = bundles
        cfg = small_config("exponential", "a = 1.0")
        check, x_star = _check_xstar(cfg, fine, cara)
        assert check.passed, check
        assert check.threshold < 1.1e-8
        assert x_star > 1.0

    def test_hitting_level(self, constant_model):
        assert hitting_level(small_config(), constant_model) == pytest.approx(0.5)
        cfg = parse_config(SMALL_CONFIG.format(utility="log", extra="") + "[verify]\nhitting_level = 0.7\n")
        assert hitting_level(cfg, constant_model) == 0.7


@pytest.mark.slow
def test_acceptance_suite_on_log_utility():
    cfg = parse_config(
        SMALL_CONFIG.format(utility="log", extra="")
        + "[verify]\n"
        "eu1_paths = 500\neu1_finest_steps = 64\neu1_levels = 3\n"
        "budget_paths = 2000\nbudget_steps = 16\n"
        "nested_probe_nodes = 2\nnested_probe_states = 2\nnested_inner_paths = 200\n"
    ).with_overrides(steps=32, paths=2000)
    suite = run_acceptance_suite(cfg)
    by_name = {c.name: c for c in suite.checks}
    for name in (
        "log_degeneracy", "xstar", "representation_residual", "tower_property", "nonanticipativity",
        "terminal_degree_refinement", "gronwall_bound",
    ):
        assert by_name[name].passed, by_name[name]
    assert "beta_vs_lognormal_oracle" not in by_name
    assert "phi1_closed_form_refinement[s=0.5]" in by_name
    assert {"eu1_refinement", "nested_probe", "truncation_ladder", "degree_refinement", "gronwall"} <= set(suite.series)
    assert len(suite.to_frame()) == len(suite.checks)
