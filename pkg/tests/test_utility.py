# -*- coding: utf-8 -*-
"""Inversa do marginal, integrando F e a validação das hipóteses de utilidade."""

import numpy as np
import pytest

from errors import InvalidArgumentError
from utility import (
    ExponentialUtility,
    LogUtility,
    PowerUtility,
    UtilityModel,
    correction_integrand,
    make_utility,
    validate_utility,
)

Z_GRID = np.logspace(-2, 2, 17)

UTILITIES = [LogUtility(), PowerUtility(0.5), PowerUtility(-1.0), ExponentialUtility(1.0)]
IDS = ["log", "power_0.5", "power_-1", "exponential_1"]


@pytest.mark.parametrize("u", UTILITIES, ids=IDS)
def test_inverse_of_marginal(u):
    x = np.logspace(-2, 1, 13)
    np.testing.assert_allclose(u.I(u.dU(x)), x, rtol=1e-10)


@pytest.mark.parametrize("u", UTILITIES, ids=IDS)
def test_closed_form_F_matches_generic_formula(u):
    generic = UtilityModel.correction_integrand(u, Z_GRID)
    np.testing.assert_allclose(u.correction_integrand(Z_GRID), generic, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("u", UTILITIES, ids=IDS)
def test_F_derivative_by_finite_difference(u):
    h = 1e-6 * Z_GRID
    fd = (u.correction_integrand(Z_GRID + h) - u.correction_integrand(Z_GRID - h)) / (2 * h)
    np.testing.assert_allclose(u.correction_derivative(Z_GRID), fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("u", UTILITIES, ids=IDS)
def test_closed_form_F_derivative_matches_generic(u):
    generic = UtilityModel.correction_derivative(u, Z_GRID)
    # cancelamento entre termos de ordem z^{-4} no log e no exponencial
    np.testing.assert_allclose(u.correction_derivative(Z_GRID), generic, rtol=1e-10, atol=1e-9)


class TestPowerUtility:
    def test_constants(self):
        u = PowerUtility(0.5)
        assert u.q == pytest.approx(-2.0)
        assert u.k0 == pytest.approx(1.0)
        np.testing.assert_allclose(u.correction_integrand(Z_GRID), Z_GRID**-2.0)

    @pytest.mark.parametrize("p", [1.0, 0.0, 1.5, float("nan")])
    def test_invalid_p(self, p):
        with pytest.raises(InvalidArgumentError, match="p<1, p≠0"):
            PowerUtility(p)

    def test_risk_tolerance(self):
        assert PowerUtility(0.5).risk_tolerance(3.0) == pytest.approx(6.0)


class TestSpecialCases:
    def test_log_F_is_exactly_zero(self):
        assert not np.any(LogUtility().correction_integrand(Z_GRID))
        assert not np.any(LogUtility().correction_derivative(Z_GRID))

    def test_exponential_F_is_constant(self):
        np.testing.assert_array_equal(ExponentialUtility(2.0).correction_integrand(Z_GRID), -0.25)

    def test_F_requires_positive_argument(self):
        with pytest.raises(InvalidArgumentError):
            correction_integrand(PowerUtility(0.5), np.array([1.0, 0.0]))

    def test_exponential_requires_positive_a(self):
        with pytest.raises(InvalidArgumentError):
            ExponentialUtility(-1.0)


class TestMakeUtility:
    def test_aliases(self):
        assert isinstance(make_utility("LOG"), LogUtility)
        assert make_utility("crra", p=0.5) == PowerUtility(0.5)
        assert make_utility("cara", a=2.0) == ExponentialUtility(2.0)

    def test_missing_parameter(self):
        with pytest.raises(InvalidArgumentError, match="exige p"):
            make_utility("power")

    def test_unknown(self):
        with pytest.raises(InvalidArgumentError):
            make_utility("quadratic")

    def test_describe(self):
        assert PowerUtility(0.5).describe() == "power(p=0.5)"
        assert LogUtility().describe() == "log"


class TestValidateUtility:
    @pytest.mark.parametrize("u", UTILITIES[:3], ids=IDS[:3])
    def test_inada_utilities_conform(self, u):
        report = validate_utility(u)
        assert report.conforming, report.messages
        assert report.growth_ok

    def test_power_growth_exponent(self):
        report = validate_utility(PowerUtility(0.5))
        assert report.growth_alpha == pytest.approx(2.0, abs=1e-6)
        assert report.growth_k1 == pytest.approx(6.0, rel=1e-5)

    def test_log_growth_exponent(self):
        assert validate_utility(LogUtility()).growth_alpha == pytest.approx(1.0, abs=1e-6)

    def test_exponential_is_flagged(self):
        report = validate_utility(ExponentialUtility(1.0))
        assert not report.conforming
        assert not report.inada_zero
        assert any("Inada em 0" in m for m in report.messages)
        assert set(report.to_frame()["check"]) >= {"inada_zero", "growth"}
