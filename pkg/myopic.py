# -*- coding: utf-8 -*-
"""
myopic.py — Portfólio míope π̃, processo de correção V_x, riqueza
autofinanciada e as identidades exatas da parte míope.

Identidade de trabalho (por caminho, em todo nó t):
    X^{x,π̃}(t) + V_x(t) = I(U′(x) Z̃(t))
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from errors import InvalidArgumentError
from market import (
    MarketModel,
    SimulationBundle,
    simulate_bundle_under_P,
    simulate_bundle_under_Q,
)
from paths import (
    Estimate,
    Measure,
    SeedSpec,
    TimeGrid,
    coarsen,
    loglog_slope,
    mc_mean,
    sample_brownian,
)
from utility import UtilityModel

logger = logging.getLogger(__name__)


# =============================================================================
# TIPOS
# =============================================================================

class StrategyLabel(str, Enum):
    MYOPIC = "myopic"
    HEDGING = "hedging"
    COMBINED = "combined"
    MERTON = "merton"


@dataclass(frozen=True, eq=False)
class StrategyPath:
    """Quantidade de ações π_i(t) por (caminho, nó, ativo)."""

    units: np.ndarray
    label: StrategyLabel

    def __post_init__(self):
        units = np.asarray(self.units, dtype=float)
        if units.ndim != 3:
            raise InvalidArgumentError("estratégia deve ter formato (caminho, nó, ativo)")
        if not np.all(np.isfinite(units)):
            raise InvalidArgumentError(f"estratégia {self.label} com valores não finitos")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "label", StrategyLabel(self.label))

    def __add__(self, other: "StrategyPath") -> "StrategyPath":
        if other.units.shape != self.units.shape:
            raise InvalidArgumentError("estratégias em grades diferentes")
        return StrategyPath(self.units + other.units, StrategyLabel.COMBINED)

    def value(self, bundle: SimulationBundle) -> np.ndarray:
        """Valor aplicado π_i S_i."""
        return self.units * bundle.S


@dataclass(frozen=True, eq=False)
class WealthPath:
    values: np.ndarray
    initial_wealth: float

    def __post_init__(self):
        if not np.all(self.values[:, 0] == self.initial_wealth):
            raise InvalidArgumentError("riqueza deve começar em x")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("riqueza com valores não finitos")

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def _check_wealth(x: float) -> float:
    x = float(x)
    if not (x > 0 and math.isfinite(x)):
        raise InvalidArgumentError(f"riqueza inicial deve ser positiva (recebido {x})")
    return x


# =============================================================================
# π̃, V_x E RIQUEZA
# =============================================================================

def myopic_portfolio(x: float, bundle: SimulationBundle, utility: UtilityModel) -> StrategyPath:
    """(π̃_x)_i = −(1/S_i)·[(σᵀ)^{-1} U′(x) I′(U′(x)Z̃) Z̃ θ̃]_i."""
    x = _check_wealth(x)
    y = float(utility.dU(x))
    z = bundle.Ztilde
    scale = y * utility.dI(y * z) * z
    mapped = bundle.model.merton_proportion(scale[..., None] * bundle.theta)
    return StrategyPath(-mapped / bundle.S, StrategyLabel.MYOPIC)


def optimal_wealth_level(x: float, bundle: SimulationBundle, utility: UtilityModel) -> np.ndarray:
    """I(U′(x)Z̃(t)) por (caminho, nó)."""
    return utility.I(float(utility.dU(_check_wealth(x))) * bundle.Ztilde)


def correction_integrand_path(x: float, bundle: SimulationBundle, utility: UtilityModel) -> np.ndarray:
    y = float(utility.dU(_check_wealth(x)))
    return utility.correction_integrand(y * bundle.Ztilde) * np.sum(bundle.theta**2, axis=2)


def correction_process(x: float, bundle: SimulationBundle, utility: UtilityModel) -> np.ndarray:
    """V_x(t) = ∫_0^t F(U′(x)Z̃)‖θ̃‖² du (trapézio acumulado), V_x(0) = 0."""
    integrand = correction_integrand_path(x, bundle, utility)
    return cumulative_trapezoid(integrand, dx=bundle.grid.dt, axis=1, initial=0.0)


def simulate_wealth(x: float, strategy: StrategyPath, bundle: SimulationBundle) -> WealthPath:
    """X(t_{k+1}) = X(t_k) + π(t_k)ᵀ(S(t_{k+1}) − S(t_k))."""
    if strategy.units.shape != bundle.S.shape:
        raise InvalidArgumentError("estratégia e bundle em grades diferentes")
    gains = np.sum(strategy.units[:, :-1] * np.diff(bundle.S, axis=1), axis=2)
    values = np.empty(gains.shape[:1] + (gains.shape[1] + 1,))
    values[:, 0] = x
    np.cumsum(gains, axis=1, out=values[:, 1:])
    values[:, 1:] += x
    return WealthPath(values, float(x))


FeedbackRule = Callable[[np.ndarray, int], np.ndarray]


def simulate_feedback_wealth(
    x: float,
    bundle: SimulationBundle,
    rule: FeedbackRule,
    label: StrategyLabel = StrategyLabel.MERTON,
) -> Tuple[StrategyPath, WealthPath]:
    """Regra em malha fechada: π(t_k) = rule(X(t_k), k)."""
    n_paths, n_nodes, n = bundle.S.shape
    units = np.zeros((n_paths, n_nodes, n))
    values = np.empty((n_paths, n_nodes))
    values[:, 0] = x
    for k in range(n_nodes - 1):
        units[:, k] = rule(values[:, k], k)
        values[:, k + 1] = values[:, k] + np.sum(units[:, k] * (bundle.S[:, k + 1] - bundle.S[:, k]), axis=1)
    units[:, -1] = rule(values[:, -1], n_nodes - 1)
    return StrategyPath(units, label), WealthPath(values, float(x))


def merton_rule(bundle: SimulationBundle, utility: UtilityModel) -> FeedbackRule:
    """π_i S_i = τ(X)·[(σᵀ)^{-1}θ̃]_i com τ = −U′/U″; sem posição quando X ≤ 0 (utilidades de Inada)."""
    proportion = bundle.model.merton_proportion(bundle.theta)

    def rule(wealth: np.ndarray, k: int) -> np.ndarray:
        if utility.conforming:
            alive = wealth > 0
            tau = np.where(alive, utility.risk_tolerance(np.where(alive, wealth, 1.0)), 0.0)
        else:
            tau = utility.risk_tolerance(wealth)
        return tau[:, None] * proportion[:, k] / bundle.S[:, k]

    return rule


def value_weights(strategy: StrategyPath, bundle: SimulationBundle, level: np.ndarray) -> np.ndarray:
    """π_i S_i / nível de riqueza, por (caminho, nó, ativo)."""
    return strategy.value(bundle) / level[..., None]


# =============================================================================
# IDENTIDADE X + V = I(U′(x)Z̃)
# =============================================================================

@dataclass(frozen=True)
class Eu1Report:
    max_abs: float
    rms: float
    terminal_rms: float
    per_node_rms: np.ndarray
    n_paths: int
    n_steps: int

    def as_dict(self) -> dict:
        return {
            "max_abs": self.max_abs,
            "rms": self.rms,
            "terminal_rms": self.terminal_rms,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
        }


def eu1_residual(x: float, bundle: SimulationBundle, utility: UtilityModel) -> np.ndarray:
    wealth = simulate_wealth(x, myopic_portfolio(x, bundle, utility), bundle)
    return wealth.values + correction_process(x, bundle, utility) - optimal_wealth_level(x, bundle, utility)


def check_identity_eu1(x: float, bundle: SimulationBundle, utility: UtilityModel) -> Eu1Report:
    r = eu1_residual(x, bundle, utility)
    return Eu1Report(
        max_abs=float(np.max(np.abs(r))),
        rms=float(np.sqrt(np.mean(r**2))),
        terminal_rms=float(np.sqrt(np.mean(r[:, -1] ** 2))),
        per_node_rms=np.sqrt(np.mean(r**2, axis=0)),
        n_paths=bundle.n_paths,
        n_steps=bundle.grid.n_steps,
    )


@dataclass
class RefinementStudy:
    table: pd.DataFrame
    slope: float

    @property
    def min_decay(self) -> float:
        decay = self.table["decay"].dropna()
        return float(decay.min()) if len(decay) else float("nan")

    @property
    def finest_rms(self) -> float:
        return float(self.table["rms"].iloc[-1])


def _simulate(model: MarketModel, grid: TimeGrid, seeds: SeedSpec, brownian, measure: Measure) -> SimulationBundle:
    if measure == Measure.P:
        return simulate_bundle_under_P(model, grid, brownian.n_paths, seeds, brownian=brownian)
    return simulate_bundle_under_Q(model, grid, brownian.n_paths, seeds, brownian=brownian)


def eu1_refinement_study(
    x: float,
    model: MarketModel,
    utility: UtilityModel,
    finest: TimeGrid,
    n_paths: int,
    seeds: SeedSpec,
    levels: int = 4,
    measure: Measure = Measure.Q,
    chunk_size: int = 2000,
    workers: int = 1,
) -> RefinementStudy:
    """
    RMS do resíduo em `levels` grades (cada uma a metade da seguinte), todas
    obtidas somando os incrementos da grade mais fina: mesmo Browniano em todos os níveis.
    """
    factors = [2 ** (levels - 1 - lvl) for lvl in range(levels)]
    sq_sum = np.zeros(levels)
    counts = np.zeros(levels)
    max_abs = np.zeros(levels)

    for first in range(0, n_paths, chunk_size):
        size = min(chunk_size, n_paths - first)
        base = sample_brownian(finest, model.n, size, seeds, measure, workers, first_path=first)
        for lvl, factor in enumerate(factors):
            ensemble = coarsen(base, factor)
            r = eu1_residual(x, _simulate(model, ensemble.grid, seeds, ensemble, measure), utility)
            sq_sum[lvl] += float(np.sum(r**2))
            counts[lvl] += r.size
            max_abs[lvl] = max(max_abs[lvl], float(np.max(np.abs(r))))

    rms = np.sqrt(sq_sum / counts)
    steps = [finest.n_steps // f for f in factors]
    table = pd.DataFrame({
        "n_steps": steps,
        "dt": [finest.horizon / s for s in steps],
        "rms": rms,
        "max_abs": max_abs,
    })
    table["decay"] = table["rms"].shift(1) / table["rms"]
    slope = loglog_slope(table["dt"], table["rms"])
    logger.info("Refinamento eu1: rms=%s, inclinação=%.3f", np.array2string(rms, precision=3), slope)
    return RefinementStudy(table, slope)


# =============================================================================
# ORÇAMENTO E TEMPOS DE PARADA
# =============================================================================

@dataclass(frozen=True)
class FixedTime:
    t: float

    def indices(self, bundle: SimulationBundle) -> np.ndarray:
        return np.full(bundle.n_paths, bundle.grid.index_at(self.t))

    def describe(self) -> str:
        return f"t={self.t:g}"


@dataclass(frozen=True)
class ThetaHitting:
    """Primeiro nó com θ̃_c ≥ level, limitado a T."""

    level: float
    component: int = 0

    def indices(self, bundle: SimulationBundle) -> np.ndarray:
        hit = bundle.theta[:, :, self.component] >= self.level
        return np.where(hit.any(axis=1), np.argmax(hit, axis=1), bundle.grid.n_steps)

    def describe(self) -> str:
        return f"hit(theta>={self.level:g})∧T"


StoppingRule = Union[FixedTime, ThetaHitting]


def check_budget_martingale(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    rule: StoppingRule,
) -> Estimate:
    """E_P[Z̃(τ)X(τ)] (bundle sob P) ou Ẽ[X(τ)] (bundle sob Q̃): ambos devem dar x."""
    wealth = simulate_wealth(x, myopic_portfolio(x, bundle, utility), bundle)
    tau = rule.indices(bundle)
    rows = np.arange(bundle.n_paths)
    stopped = wealth.values[rows, tau]
    if bundle.simulated_under == Measure.P:
        return mc_mean(stopped, weights=bundle.Ztilde[rows, tau])
    return mc_mean(stopped)


# =============================================================================
# ADMISSIBILIDADE
# =============================================================================

@dataclass
class AdmissibilityReport:
    n_violations: int
    min_value: float
    locations: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def admissibility_report(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    max_locations: int = 10,
) -> AdmissibilityReport:
    """X^{x,π̃} + V_x > 0 em todos os nós; violações com (caminho, passo)."""
    wealth = simulate_wealth(x, myopic_portfolio(x, bundle, utility), bundle)
    total = wealth.values + correction_process(x, bundle, utility)
    bad = np.argwhere(~(total > 0))
    report = AdmissibilityReport(
        n_violations=int(bad.shape[0]),
        min_value=float(np.min(total)),
        locations=[(int(p), int(k)) for p, k in bad[:max_locations]],
    )
    if not report.ok:
        logger.warning(
            "Admissibilidade violada em %d nós (primeiro: caminho %d, passo %d)",
            report.n_violations, *report.locations[0],
        )
    return report
