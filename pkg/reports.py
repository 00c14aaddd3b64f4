# -*- coding: utf-8 -*-
"""
reports.py — Séries por nó (pandas) e o relatório de decomposição.

Principais recursos:
- bundle_series / myopic_series / hedge_series: uma linha por nó da grade,
  médias e quantis por ativo (sufixo _i no nome da coluna).
- DecompositionReport: x, x*, Ẽ V_{x*}(T) ± EP, séries, métricas de resíduo,
  inclinações de convergência, semente e eco da config.

Esquema das colunas (congelado):
    t
    theta_mean_i, theta_q05_i, theta_q95_i, z_mean, z_se, z_score, s_mean_i
    pi_tilde_vw_mean_i, pi_tilde_vw_q05_i, pi_tilde_vw_q50_i, pi_tilde_vw_q95_i
    pi_bar_vw_mean_i, pi_bar_vw_q05_i, pi_bar_vw_q50_i, pi_bar_vw_q95_i
    v_mean, v_se, wealth_mean, eu1_rms
    beta_mean_i, beta_q05_i, beta_q95_i, tower_z
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from hedging import DecompositionResult, HedgeResult
from market import SimulationBundle, z_martingale_table
from myopic import (
    Eu1Report,
    StrategyPath,
    correction_process,
    myopic_portfolio,
    optimal_wealth_level,
    simulate_wealth,
    value_weights,
)
from paths import Estimate
from utility import UtilityModel

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.5, 0.95)


# =============================================================================
# HELPERS
# =============================================================================

def _per_asset(name: str, values: np.ndarray, quantiles=(0.05, 0.95)) -> Dict[str, np.ndarray]:
    """values: (caminho, nó, ativo) → colunas de média e quantis por ativo."""
    cols: Dict[str, np.ndarray] = {}
    for a in range(values.shape[2]):
        cols[f"{name}_mean_{a}"] = np.mean(values[:, :, a], axis=0)
        for q in quantiles:
            cols[f"{name}_q{int(round(q * 100)):02d}_{a}"] = np.quantile(values[:, :, a], q, axis=0)
    return cols


def _weighted_node_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.mean(values * weights[:, None], axis=0)


def _weighted_node_se(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    weighted = values * weights[:, None]
    return np.std(weighted, axis=0, ddof=1) / np.sqrt(values.shape[0])


# =============================================================================
# SÉRIES POR NÓ
# =============================================================================

def bundle_series(bundle: SimulationBundle) -> pd.DataFrame:
    """θ̃, Z̃ (teste de martingal por nó) e preços."""
    z_table = z_martingale_table(bundle)
    cols: Dict[str, Any] = {"t": bundle.grid.nodes}
    cols.update(_per_asset("theta", bundle.theta))
    cols["z_mean"] = z_table["mean"].to_numpy()
    cols["z_se"] = z_table["se"].to_numpy()
    cols["z_score"] = z_table["z"].to_numpy()
    for a in range(bundle.n):
        cols[f"s_mean_{a}"] = np.mean(bundle.S[:, :, a], axis=0)
    return pd.DataFrame(cols)


def myopic_series(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    eu1: Optional[Eu1Report] = None,
) -> pd.DataFrame:
    """π̃ em pesos de valor contra I(U′(x)Z̃(t)), V_x e riqueza."""
    myopic = myopic_portfolio(x, bundle, utility)
    level = optimal_wealth_level(x, bundle, utility)
    weights = bundle.q_weights()
    v = correction_process(x, bundle, utility)
    wealth = simulate_wealth(x, myopic, bundle)

    cols: Dict[str, Any] = {"t": bundle.grid.nodes}
    cols.update(_per_asset("pi_tilde_vw", value_weights(myopic, bundle, level), QUANTILES))
    cols["v_mean"] = _weighted_node_mean(v, weights)
    cols["v_se"] = _weighted_node_se(v, weights)
    cols["wealth_mean"] = _weighted_node_mean(wealth.values, weights)
    if eu1 is not None:
        cols["eu1_rms"] = eu1.per_node_rms
    return pd.DataFrame(cols)


def hedge_series(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    result: HedgeResult,
) -> pd.DataFrame:
    """β̂ e π̄ em pesos de valor; tower_z é o teste Ẽ[β̂ᵀΔW̃] = 0 do passo que começa no nó."""
    n_nodes = bundle.grid.n_steps + 1
    beta_path = result.beta.beta_path(n_nodes)
    level = optimal_wealth_level(x, bundle, utility)

    cols: Dict[str, Any] = {"t": bundle.grid.nodes}
    cols.update(_per_asset("beta", beta_path))
    cols.update(_per_asset("pi_bar_vw", value_weights(result.strategy, bundle, level), QUANTILES))
    tower = result.representation.tower["z"].to_numpy()
    cols["tower_z"] = np.append(tower, np.nan)
    return pd.DataFrame(cols)


def _strategy_vw(strategy: StrategyPath, bundle: SimulationBundle, level: np.ndarray, name: str) -> Dict[str, Any]:
    return _per_asset(name, value_weights(strategy, bundle, level), QUANTILES)


# =============================================================================
# RELATÓRIO
# =============================================================================

@dataclass(eq=False)
class DecompositionReport:
    """Tudo o que o comando decompose emite; cada métrica com tamanho de amostra (e EP quando couber)."""

    x: float
    x_star: float
    expected_v: Estimate
    series: pd.DataFrame
    metrics: Dict[str, Any]
    expected_utility: Dict[str, Estimate]
    seeds: Dict[str, Any]
    config: Dict[str, Any]
    slopes: Dict[str, float] = field(default_factory=dict)
    conforming: bool = True

    def summary(self) -> Dict[str, Any]:
        return {
            "header": {"seeds": self.seeds, "config": self.config, "conforming": self.conforming},
            "x": self.x,
            "x_star": self.x_star,
            "expected_v": self.expected_v.as_dict(),
            "metrics": self.metrics,
            "expected_utility": {k: v.as_dict() for k, v in self.expected_utility.items()},
            "slopes": self.slopes,
        }


def build_decomposition_report(
    result: DecompositionResult,
    utility: UtilityModel,
    eu1: Eu1Report,
    seeds: Dict[str, Any],
    config: Dict[str, Any],
    slopes: Optional[Dict[str, float]] = None,
) -> DecompositionReport:
    bundle = result.bundle
    x_star = result.xstar.x_star
    level = optimal_wealth_level(x_star, bundle, utility)
    weights = bundle.q_weights()
    beta_path = result.hedge.beta.beta_path(bundle.grid.n_steps + 1)

    cols: Dict[str, Any] = {"t": bundle.grid.nodes}
    cols.update(_strategy_vw(result.myopic, bundle, level, "pi_tilde_vw"))
    cols.update(_strategy_vw(result.hedge.strategy, bundle, level, "pi_bar_vw"))
    cols["v_mean"] = _weighted_node_mean(result.correction, weights)
    cols["v_se"] = _weighted_node_se(result.correction, weights)
    cols["wealth_mean"] = _weighted_node_mean(result.wealth.values, weights)
    cols.update(_per_asset("beta", beta_path))
    cols["eu1_rms"] = eu1.per_node_rms

    rep = result.hedge.representation
    metrics = {
        "n_paths": bundle.n_paths,
        "n_steps": bundle.grid.n_steps,
        "eu1": eu1.as_dict(),
        "representation": rep.as_dict(),
        "terminal_rms": result.terminal_rms,
        "terminal_rel_rms": result.terminal_rel_rms,
        "xstar": result.xstar.as_dict(),
        "floored": dict(result.floored),
        "truncation": result.hedge.truncation.describe() if result.hedge.truncation is not None else "off",
        "ridge_used": bool(np.any(result.hedge.beta.ridge_used)),
        "max_condition": float(np.max(result.hedge.beta.condition)) if len(result.hedge.beta.condition) else 0.0,
    }
    return DecompositionReport(
        x=result.x,
        x_star=x_star,
        expected_v=result.xstar.expected_v,
        series=pd.DataFrame(cols),
        metrics=metrics,
        expected_utility=dict(result.expected_utility),
        seeds=seeds,
        config=config,
        slopes=dict(slopes or {}),
        conforming=result.conforming,
    )
