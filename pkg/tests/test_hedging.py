# -*- coding: utf-8 -*-
"""Pesos de μ, fluxo variacional, λ, regressão de β, x*, oráculos e a decomposição completa."""

import dataclasses

import numpy as np
import pytest

from errors import EstimationError, InvalidArgumentError, RootNotFoundError
from hedging import (
    BetaEstimate,
    KappaTruncation,
    RegressionSpec,
    TruncationLevels,
    anchor_nodes,
    decompose,
    estimate_beta,
    gronwall_table,
    hedge,
    hedging_portfolio,
    lambda_row,
    lambda_term_structure,
    lognormal_beta_oracle,
    mu_fd_check,
    mu_weights,
    nested_lambda_estimate,
    resolve_truncation,
    solve_phi1,
    solve_phi2,
    solve_variational,
    solve_xstar,
    state_features,
    truncate_kappa,
)
from market import MarketModel, OUMPR
from paths import TimeGrid
from studies import shared_q_bundles
from utility import PowerUtility

# =============================================================================
# Tolerâncias
# =============================================================================

N_SE = 4.0
X = 1.0
VOC_VS_EULER_REL = 0.1
ORACLE_REL_RMSE = 0.05
PHI1_CLOSED_FORM_RMS = 0.03
PHI1_MIN_DECAY = 1.2
REPRESENTATION_RATIO = 0.1
DEGREE_RATIO_SLACK = 1.05
TERMINAL_REL_RMS = 0.1


def _rel_rmse(fitted, exact):
    return float(np.sqrt(np.mean((fitted - exact) ** 2)) / np.sqrt(np.mean(exact**2)))


def _oracle_error(result, bundle, utility):
    oracle = lognormal_beta_oracle(X, bundle, utility)
    anchors = result.beta.anchors
    inner = anchors < bundle.grid.n_steps
    return _rel_rmse(result.beta.beta[:, inner, :], oracle[:, anchors[inner], :])


class _InhomogeneousOU(OUMPR):
    """Mesmo OU, mas sem o atalho de homogeneidade temporal (uma resolução por âncora)."""

    time_homogeneous = False


@pytest.fixture(scope="module")
def ou_sub(ou_q_bundle):
    return ou_q_bundle.restricted(np.arange(500))


@pytest.fixture(scope="module")
def crra_constant_hedge(constant_q_bundle):
    return hedge(X, constant_q_bundle, PowerUtility(0.5))


# =============================================================================
# Truncamento
# =============================================================================

class TestTruncation:
    def test_identity_inside(self):
        phi = truncate_kappa(2.0)
        x = np.linspace(-2.0, 2.0, 9)
        np.testing.assert_array_equal(phi(x), x)

    def test_saturation_and_symmetry(self):
        phi = truncate_kappa(3.0)
        assert phi(6.0) == pytest.approx(5.0)
        assert phi(100.0) == pytest.approx(5.0)
        assert phi(-100.0) == pytest.approx(-5.0)

    def test_monotone_and_continuous(self):
        phi = truncate_kappa(1.0)
        x = np.linspace(0.0, 3.0, 3001)
        y = phi(x)
        assert np.all(np.diff(y) >= 0)
        assert np.max(np.abs(np.diff(y))) < 2e-3

    def test_invalid_level(self):
        with pytest.raises(InvalidArgumentError):
            KappaTruncation(0.0)

    def test_resolve(self, constant_q_bundle):
        assert resolve_truncation("off", constant_q_bundle) is None
        assert resolve_truncation("auto", constant_q_bundle) is None
        levels = resolve_truncation(8.0, constant_q_bundle)
        assert isinstance(levels, TruncationLevels)
        assert levels.theta.k == pytest.approx(3.2)
        with pytest.raises(InvalidArgumentError):
            resolve_truncation("sometimes", constant_q_bundle)

    def test_wide_truncation_changes_nothing(self, constant_q_bundle, crra, crra_constant_hedge):
        truncated = hedge(X, constant_q_bundle, crra, truncation=8.0)
        assert truncated.truncation.multiplier == 8.0
        np.testing.assert_allclose(truncated.beta.beta, crra_constant_hedge.beta.beta, rtol=1e-12, atol=1e-14)


# =============================================================================
# Pesos de μ e derivadas funcionais
# =============================================================================

class TestMuWeights:
    def test_log_weights_vanish(self, ou_q_bundle, log_utility):
        assert mu_weights(X, ou_q_bundle, log_utility).is_zero

    def test_crra_weights(self, constant_q_bundle, crra):
        w = mu_weights(X, constant_q_bundle, crra)
        z = constant_q_bundle.Ztilde
        # F(z) = z^{-2}, F′(z) = −2 z^{-3}, U′(1) = 1
        np.testing.assert_allclose(w.c1, -2.0 * z**-3 * 0.16, rtol=1e-12)
        np.testing.assert_allclose(w.c2[..., 0], 2.0 * z**-2 * 0.4, rtol=1e-12)

    @pytest.mark.parametrize("fixture", ["constant_q_bundle", "ou_q_bundle"])
    def test_fd_remainder_is_quadratic(self, fixture, crra, request):
        report = mu_fd_check(X, request.getfixturevalue(fixture), crra)
        assert report.passed(1.7, 2.3), report.to_frame().to_dict("list")

    def test_constant_theta_has_no_w_sensitivity(self, constant_q_bundle, crra):
        assert mu_fd_check(X, constant_q_bundle, crra).w_exact


# =============================================================================
# Fluxo variacional
# =============================================================================

class TestVariationalFlow:
    def test_phi2_constant_is_identity(self, constant_model, grid_64):
        phi2 = solve_phi2(constant_model.mpr, grid_64, 10)
        assert not np.any(phi2[0])
        assert not np.any(phi2[1, :10])
        assert np.all(phi2[1, 10:, 0] == 1.0)

    def test_phi2_anchor_out_of_grid(self, ou_model, grid_64):
        with pytest.raises(InvalidArgumentError):
            solve_phi2(ou_model.mpr, grid_64, 65)

    def test_gronwall_bound(self, ou_model, grid_64):
        table = gronwall_table(ou_model.mpr, grid_64, [0, 16, 32, 48])
        assert table["ok"].all(), table.to_dict("list")
        assert list(table["anchor"]) == [0, 16, 32, 48]

    def test_gronwall_shift_matches_direct_solve(self, grid_64):
        homogeneous = gronwall_table(OUMPR(0.5, 1.0, 0.3, 0.2), grid_64, [8, 40])
        direct = gronwall_table(_InhomogeneousOU(0.5, 1.0, 0.3, 0.2), grid_64, [8, 40])
        np.testing.assert_allclose(homogeneous["max_ratio"], direct["max_ratio"], rtol=1e-12)

    def test_phi1_tracks_ztilde_for_constant_theta(self, constant_q_bundle):
        mpr = constant_q_bundle.model.mpr
        phi1 = solve_phi1(0, constant_q_bundle, solve_phi2(mpr, constant_q_bundle.grid, 0), mpr)
        assert np.all(phi1[:, 0, 0] == 1.0)
        rms = np.sqrt(np.mean((phi1[:, 0, :] - constant_q_bundle.Ztilde) ** 2))
        assert rms < PHI1_CLOSED_FORM_RMS

    def test_phi1_euler_error_decays(self, constant_model, grid_128, seeds):
        fine, coarse = shared_q_bundles(constant_model, grid_128, 1000, seeds)
        mpr = constant_model.mpr
        errors = []
        for bundle in (coarse, fine):
            phi1 = solve_phi1(0, bundle, solve_phi2(mpr, bundle.grid, 0), mpr)
            errors.append(np.sqrt(np.mean((phi1[:, 0, :] - bundle.Ztilde) ** 2)))
        assert errors[0] / errors[1] > PHI1_MIN_DECAY, errors


# =============================================================================
# λ
# =============================================================================

class TestLambda:
    def test_log_short_circuits(self, ou_q_bundle, log_utility):
        lam = lambda_term_structure(ou_q_bundle, mu_weights(X, ou_q_bundle, log_utility))
        assert lam.short_circuited
        assert not np.any(lam.values)

    def test_variation_of_constants_matches_euler(self, ou_sub, crra):
        s = 16
        weights = mu_weights(X, ou_sub, crra)
        voc = lambda_term_structure(ou_sub, weights, anchors=np.array([s])).values[:, 0, :]
        euler = lambda_row(s, ou_sub, solve_variational(s, ou_sub), weights)
        rel = np.linalg.norm(voc - euler) / np.linalg.norm(euler)
        assert rel < VOC_VS_EULER_REL, f"diferença relativa {rel:.4f}"

    def test_homogeneous_shortcut_is_exact(self, ou_sub, crra):
        model = ou_sub.model
        slow_model = MarketModel(model.sigma, model.s0, _InhomogeneousOU(0.5, 1.0, 0.3, 0.2))
        slow = dataclasses.replace(ou_sub, model=slow_model)
        anchors = np.array([0, 20, 40, 64])
        fast_lam = lambda_term_structure(ou_sub, mu_weights(X, ou_sub, crra), anchors)
        slow_lam = lambda_term_structure(slow, mu_weights(X, slow, crra), anchors)
        np.testing.assert_allclose(fast_lam.values, slow_lam.values, rtol=1e-10, atol=1e-14)

    def test_terminal_anchor_is_zero(self, ou_sub, crra):
        lam = lambda_term_structure(ou_sub, mu_weights(X, ou_sub, crra))
        assert lam.anchors[-1] == ou_sub.grid.n_steps
        assert not np.any(lam.values[:, -1])

    def test_anchor_nodes(self):
        grid = TimeGrid(1.0, 10)
        assert list(anchor_nodes(grid, 4)) == [0, 4, 8, 10]
        assert list(anchor_nodes(grid, 5)) == [0, 5, 10]
        with pytest.raises(InvalidArgumentError):
            anchor_nodes(grid, 0)


# =============================================================================
# β e π̄
# =============================================================================

class TestBeta:
    def test_matches_lognormal_oracle(self, constant_q_bundle, crra, crra_constant_hedge):
        err = _oracle_error(crra_constant_hedge, constant_q_bundle, crra)
        assert err < ORACLE_REL_RMSE, f"erro relativo {err:.4f}"

    def test_constant_basis_is_worse(self, constant_q_bundle, crra, crra_constant_hedge):
        flat = hedge(X, constant_q_bundle, crra, RegressionSpec(degree=0))
        assert _oracle_error(flat, constant_q_bundle, crra) > _oracle_error(crra_constant_hedge, constant_q_bundle, crra)

    def test_oracle_requires_lognormal_case(self, ou_q_bundle, crra):
        with pytest.raises(InvalidArgumentError):
            lognormal_beta_oracle(X, ou_q_bundle, crra)

    def test_representation_and_tower(self, crra_constant_hedge):
        rep = crra_constant_hedge.representation
        assert rep.variance_ratio < REPRESENTATION_RATIO, rep.as_dict()
        assert rep.tower_exceed_fraction <= 0.02
        assert len(rep.tower) == 128

    def test_ou_residual_falls_with_degree(self, ou_q_bundle, crra):
        ratios = [
            hedge(X, ou_q_bundle, crra, RegressionSpec(degree=d), anchor_stride=2).representation.variance_ratio
            for d in (1, 2, 3)
        ]
        assert ratios[1] <= DEGREE_RATIO_SLACK * ratios[0], ratios
        assert ratios[2] <= DEGREE_RATIO_SLACK * ratios[1], ratios

    def test_features_are_log_density_and_theta(self, ou_q_bundle):
        features = state_features(ou_q_bundle, 10)
        np.testing.assert_allclose(features[:, 0], np.log(ou_q_bundle.Ztilde[:, 10]))
        np.testing.assert_array_equal(features[:, 1], ou_q_bundle.theta[:, 10, 0])

    def test_ill_conditioned_without_fallback(self, ou_sub, crra):
        spec = RegressionSpec(degree=3, cond_limit=1.0, fallback_ridge=0.0)
        with pytest.raises(EstimationError):
            hedge(X, ou_sub, crra, spec)

    def test_ill_conditioned_uses_fallback_ridge(self, ou_sub, crra):
        result = hedge(X, ou_sub, crra, RegressionSpec(degree=2, cond_limit=1.0), anchor_stride=16)
        anchors = result.beta.anchors
        # âncora 0 não tem variável de estado que varie entre caminhos
        inner = (anchors > 0) & (anchors < ou_sub.grid.n_steps)
        assert np.all(result.beta.ridge_used[inner] > 0)
        assert result.beta.ridge_used[0] == 0.0

    def test_invalid_spec(self):
        with pytest.raises(InvalidArgumentError):
            RegressionSpec(degree=-1)
        with pytest.raises(InvalidArgumentError):
            RegressionSpec(ridge=-0.1)

    def test_beta_path_is_piecewise_constant(self):
        beta = np.arange(3, dtype=float).reshape(1, 3, 1)
        est = BetaEstimate(np.array([0, 2, 4]), beta, beta, np.ones(3), np.zeros(3))
        np.testing.assert_array_equal(est.beta_path(5)[0, :, 0], [0, 0, 1, 1, 2])

    def test_estimate_skips_zero_lambda(self, ou_q_bundle, log_utility):
        lam = lambda_term_structure(ou_q_bundle, mu_weights(X, ou_q_bundle, log_utility))
        est = estimate_beta(lam, ou_q_bundle)
        assert not np.any(est.beta)

    def test_log_hedge_is_zero(self, ou_q_bundle, log_utility):
        result = hedge(X, ou_q_bundle, log_utility)
        assert not np.any(result.strategy.units)
        assert result.representation.variance_ratio == 0.0

    def test_hedging_portfolio_shape(self, ou_q_bundle):
        with pytest.raises(InvalidArgumentError):
            hedging_portfolio(np.zeros((3, 4, 1)), ou_q_bundle)


# =============================================================================
# x*
# =============================================================================

class TestXStar:
    def test_log_is_identity(self, constant_q_bundle, log_utility):
        res = solve_xstar(X, constant_q_bundle, log_utility)
        assert res.x_star == X
        assert res.iterations == 0

    def test_crra_matches_closed_form(self, constant_q_bundle, crra):
        res = solve_xstar(X, constant_q_bundle, crra)
        assert res.closed_form is not None
        assert res.x_star == pytest.approx(res.closed_form, rel=1e-6)
        assert abs(res.residual) < 1e-6
        assert 0 < res.x_star < X
        assert "closed_form" in res.as_dict()

    def test_exponential_shift(self, constant_q_bundle, cara):
        # F constante: V_z(T) = −0.08 qualquer que seja z
        res = solve_xstar(X, constant_q_bundle, cara)
        assert res.x_star == pytest.approx(1.08, rel=1e-6)
        assert res.closed_form is None

    def test_no_sign_change(self, constant_q_bundle, crra):
        with pytest.raises(RootNotFoundError) as info:
            solve_xstar(X, constant_q_bundle, crra, upper_factor=0.5)
        assert info.value.h_lo < 0 and info.value.h_hi < 0

    def test_rejects_non_positive_wealth(self, constant_q_bundle, crra):
        with pytest.raises(InvalidArgumentError):
            solve_xstar(-1.0, constant_q_bundle, crra)


# =============================================================================
# Oráculo aninhado
# =============================================================================

class TestNested:
    def test_nested_matches_lognormal_oracle(self, constant_q_bundle, crra, seeds):
        node, path = 32, 3
        mean, se = nested_lambda_estimate(X, constant_q_bundle, crra, node, path, 2000, seeds.derive(9))
        exact = lognormal_beta_oracle(X, constant_q_bundle, crra)[path, node, 0]
        assert abs(mean[0] - exact) <= N_SE * se[0] + 1e-3 * abs(exact), (mean, se, exact)

    def test_terminal_node_is_zero(self, constant_q_bundle, crra, seeds):
        mean, se = nested_lambda_estimate(X, constant_q_bundle, crra, 128, 0, 10, seeds)
        assert not np.any(mean) and not np.any(se)


# =============================================================================
# Decomposição
# =============================================================================

class TestDecompose:
    def test_crra_constant(self, constant_q_bundle, crra, seeds):
        result = decompose(X, constant_q_bundle.model, crra, constant_q_bundle.grid, constant_q_bundle.n_paths,
                           seeds, bundle=constant_q_bundle)
        assert result.terminal_rel_rms < TERMINAL_REL_RMS, result.terminal_rel_rms
        assert result.xstar.x_star == pytest.approx(result.xstar.closed_form, rel=1e-6)
        assert set(result.expected_utility) == {"combined", "myopic", "merton"}
        assert result.conforming
        np.testing.assert_allclose(result.combined.units, result.myopic.units + result.hedge.strategy.units)

    def test_builds_its_own_bundle(self, constant_model, crra, seeds):
        grid = TimeGrid(1.0, 16)
        a = decompose(X, constant_model, crra, grid, 200, seeds)
        b = decompose(X, constant_model, crra, grid, 200, seeds, workers=3)
        assert a.bundle.n_paths == 200
        np.testing.assert_array_equal(a.wealth.values, b.wealth.values)

    def test_exponential_is_labelled(self, constant_q_bundle, cara, seeds):
        result = decompose(X, constant_q_bundle.model, cara, constant_q_bundle.grid, constant_q_bundle.n_paths,
                           seeds, bundle=constant_q_bundle, anchor_stride=8)
        assert not result.conforming
        assert result.floored == {"combined": 0, "myopic": 0, "merton": 0}
