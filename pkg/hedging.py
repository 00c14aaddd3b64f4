# -*- coding: utf-8 -*-
"""
hedging.py — Representação de Clark-Haussmann do claim V_x(T) e o
portfólio de hedge π̄.

Estado Y = (Z̃, W) sob Q̃:
    dZ̃ = Z̃‖θ̃‖² dt − Z̃ θ̃ᵀ dW̃,     dW = −Θ̄(W) dt + dW̃.
Fluxo variacional Φ(t, s) (colunas j = 0..n, j = 0 é a direção de Z̃):
    Φ^{2,j}: integro-EDO determinística (o núcleo do OU não depende da trajetória),
    Φ^{1,j}: EDE linear escalar por caminho.
λ(t) = [∫_t^T μ(du) Φ(u, t)] g(t),  g = [−Z̃θ̃ᵀ; I_n],  β = Ẽ(λ(t) | F_t) por regressão.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.optimize import bisect
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import PolynomialFeatures, StandardScaler

from errors import EstimationError, InvalidArgumentError, NumericOverflowError, RootNotFoundError
from market import (
    MarketModel,
    MarketPriceOfRiskModel,
    SimulationBundle,
    frechet_apply,
    simulate_bundle_under_Q,
)
from myopic import (
    StrategyLabel,
    StrategyPath,
    WealthPath,
    correction_integrand_path,
    correction_process,
    merton_rule,
    myopic_portfolio,
    optimal_wealth_level,
    simulate_feedback_wealth,
    simulate_wealth,
)
from paths import Estimate, Measure, SeedSpec, TimeGrid, euler_step_functional, loglog_slope, mc_mean
from utility import LogUtility, PowerUtility, UtilityModel

logger = logging.getLogger(__name__)

TruncationSetting = Union[str, float]


# =============================================================================
# TRUNCAMENTO φ_k
# =============================================================================

@dataclass(frozen=True)
class KappaTruncation:
    """
    φ_k ímpar: identidade em [−k, k], mistura cúbica k + s − s³/(3k²) com
    s = |x| − k em [k, 2k], constante 5k/3 além de 2k.
    """

    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise InvalidArgumentError(f"nível de truncamento deve ser > 0 (recebido {self.k})")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.k
        s = np.clip(np.abs(x) - k, 0.0, k)
        blended = k + s - s**3 / (3.0 * k**2)
        return np.where(np.abs(x) <= k, x, np.sign(x) * blended)


def truncate_kappa(k: float) -> KappaTruncation:
    return KappaTruncation(float(k))


@dataclass(frozen=True)
class TruncationLevels:
    theta: KappaTruncation
    z: KappaTruncation
    multiplier: float

    @classmethod
    def from_quantile(cls, bundle: SimulationBundle, multiplier: float, q: float = 0.999) -> "TruncationLevels":
        k_theta = float(np.quantile(np.abs(bundle.theta), q)) * multiplier
        k_z = float(np.quantile(bundle.Ztilde, q)) * multiplier
        return cls(truncate_kappa(k_theta if k_theta > 0 else multiplier), truncate_kappa(k_z), float(multiplier))

    def describe(self) -> dict:
        return {"multiplier": self.multiplier, "k_theta": self.theta.k, "k_z": self.z.k}


AUTO_TRUNCATION_MULTIPLIER = 8.0


def resolve_truncation(setting: TruncationSetting, bundle: SimulationBundle) -> Optional[TruncationLevels]:
    """'off'/'auto' → sem truncamento (auto liga só após overflow); número → múltiplo do quantil 99,9%."""
    if isinstance(setting, str):
        if setting in ("off", "auto"):
            return None
        raise InvalidArgumentError(f"truncamento inválido: {setting!r}")
    return TruncationLevels.from_quantile(bundle, float(setting))


def _state(bundle: SimulationBundle, truncation: Optional[TruncationLevels]) -> Tuple[np.ndarray, np.ndarray]:
    if truncation is None:
        return bundle.Ztilde, bundle.theta
    return truncation.z(bundle.Ztilde), truncation.theta(bundle.theta)


# =============================================================================
# PESOS DE μ E FUNCIONAL L
# =============================================================================

@dataclass(frozen=True, eq=False)
class MuDerivativeWeights:
    c1: np.ndarray
    c2: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.c1)) and np.all(np.isfinite(self.c2))):
            raise InvalidArgumentError("pesos de μ não finitos")

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.c1) or np.any(self.c2))


def weights_at_marginal(
    y: Union[float, np.ndarray],
    bundle: SimulationBundle,
    utility: UtilityModel,
    truncation: Optional[TruncationLevels] = None,
) -> MuDerivativeWeights:
    """c1 = y·F′(yZ̃)‖θ̃‖², c2 = 2F(yZ̃)θ̃ para o nível de utilidade marginal y."""
    z, theta = _state(bundle, truncation)
    arg = np.asarray(y, dtype=float) * z
    c1 = np.asarray(y, dtype=float) * utility.correction_derivative(arg) * np.sum(theta**2, axis=2)
    c2 = 2.0 * utility.correction_integrand(arg)[..., None] * theta
    return MuDerivativeWeights(c1, c2)


def mu_weights(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    truncation: Optional[TruncationLevels] = None,
) -> MuDerivativeWeights:
    if not x > 0:
        raise InvalidArgumentError("x deve ser positivo")
    return weights_at_marginal(float(utility.dU(x)), bundle, utility, truncation)


def functional_L(
    x: float,
    utility: UtilityModel,
    mpr: MarketPriceOfRiskModel,
    grid: TimeGrid,
    z: np.ndarray,
    w: np.ndarray,
) -> np.ndarray:
    """L(z, w) = ∫_0^T F(U′(x)z(u))‖Θ̄(u, w)‖² du por caminho."""
    theta = mpr.evaluate(grid, w)
    integrand = utility.correction_integrand(float(utility.dU(x)) * z) * np.sum(theta**2, axis=-1)
    return trapezoid(integrand, dx=grid.dt, axis=-1)


@dataclass(frozen=True)
class MuFdReport:
    eps: Tuple[float, ...]
    z_remainder: Tuple[float, ...]
    w_remainder: Tuple[float, ...]
    z_slope: float
    w_slope: float
    z_exact: bool
    w_exact: bool

    def passed(self, lo: float = 1.7, hi: float = 2.3) -> bool:
        z_ok = self.z_exact or lo <= self.z_slope <= hi
        w_ok = self.w_exact or lo <= self.w_slope <= hi
        return bool(z_ok and w_ok)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"eps": self.eps, "z_remainder": self.z_remainder, "w_remainder": self.w_remainder})


def mu_fd_check(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    eps_ladder: Sequence[float] = (1e-2, 1e-3, 1e-4),
    n_probe: int = 8,
) -> MuFdReport:
    """
    Diferenças finitas direcionais de L contra ∫c1·v1 (v1 = u/T) e
    ∫c2ᵀ[Θ̄′(w)v2] (v2(u) = u). Resto quadrático em ε para F suave.
    """
    grid = bundle.grid
    mpr = bundle.model.mpr
    z = bundle.Ztilde[:n_probe]
    w = bundle.W[:n_probe]
    theta = mpr.evaluate(grid, w)
    y = float(utility.dU(x))

    c1 = y * utility.correction_derivative(y * z) * np.sum(theta**2, axis=-1)
    c2 = 2.0 * utility.correction_integrand(y * z)[..., None] * theta

    t = grid.nodes
    v1 = np.broadcast_to(t / grid.horizon, z.shape)
    gamma = np.broadcast_to(t[:, None], w.shape[1:])
    dz_lin = trapezoid(c1 * v1, dx=grid.dt, axis=-1)
    dw_lin = trapezoid(np.sum(c2 * frechet_apply(mpr, grid, w, gamma), axis=-1), dx=grid.dt, axis=-1)

    base = functional_L(x, utility, mpr, grid, z, w)
    scale = 1.0 + float(np.max(np.abs(base)))
    z_rem, w_rem = [], []
    for eps in eps_ladder:
        z_rem.append(float(np.max(np.abs(functional_L(x, utility, mpr, grid, z + eps * v1, w) - base - eps * dz_lin))))
        w_rem.append(float(np.max(np.abs(functional_L(x, utility, mpr, grid, z, w + eps * gamma) - base - eps * dw_lin))))

    z_exact = max(z_rem) <= 1e-13 * scale
    w_exact = max(w_rem) <= 1e-13 * scale
    return MuFdReport(
        eps=tuple(float(e) for e in eps_ladder),
        z_remainder=tuple(z_rem),
        w_remainder=tuple(w_rem),
        z_slope=float("nan") if z_exact else loglog_slope(eps_ladder, z_rem),
        w_slope=float("nan") if w_exact else loglog_slope(eps_ladder, w_rem),
        z_exact=z_exact,
        w_exact=w_exact,
    )


# =============================================================================
# FLUXO VARIACIONAL
# =============================================================================

@dataclass(frozen=True, eq=False)
class VariationalSolution:
    anchor: int
    phi2: np.ndarray                  # (n+1, N+1, n), zero antes da âncora
    phi1: Optional[np.ndarray] = None  # (P, n+1, N+1)


def solve_phi2(mpr: MarketPriceOfRiskModel, grid: TimeGrid, s: int) -> np.ndarray:
    """dΦ^{2,j}/dt = −[Θ̄′ Φ^{2,j}(·, s)](t), Φ^{2,j}(s, s) = e_{j−1}, Φ^{2,0} ≡ 0."""
    n = mpr.dim
    size = grid.n_steps + 1
    if not 0 <= s < size:
        raise InvalidArgumentError(f"âncora {s} fora da grade")
    phi2 = np.zeros((n + 1, size, n))
    eye = np.eye(n)
    if mpr.is_constant:
        phi2[1:, s:, :] = eye[:, None, :]
        return phi2

    op = mpr.kernel_operator(grid, s)
    phi2[1:, s, :] = eye
    for k in range(s, grid.n_steps):
        response = np.einsum("iab,jib->ja", op[k, s:k + 1], phi2[1:, s:k + 1])
        phi2[1:, k + 1] = phi2[1:, k] - grid.dt * response
    return phi2


def kernel_response(mpr: MarketPriceOfRiskModel, grid: TimeGrid, phi2: np.ndarray, s: int) -> np.ndarray:
    """ψ_j(t) = [Θ̄′ Φ^{2,j}(·, s)](t), formato (n+1, N+1, n)."""
    if mpr.is_constant:
        return np.zeros_like(phi2)
    return np.einsum("kiab,jib->jka", mpr.kernel_operator(grid, s), phi2)


def gronwall_check(mpr: MarketPriceOfRiskModel, grid: TimeGrid, phi2: np.ndarray, s: int) -> Tuple[bool, float]:
    """sup_{s≤v≤t} ‖Φ^{2,j}(v, s)‖ ≤ e^{K(t−s)}; devolve (ok, maior razão)."""
    bound = np.exp(mpr.total_variation_bound(grid.horizon) * (grid.nodes[s:] - grid.nodes[s]))
    norms = np.linalg.norm(phi2[:, s:, :], axis=2)
    running = np.maximum.accumulate(norms, axis=1)
    ratio = float(np.max(running / bound))
    return ratio <= 1.0 + 1e-12, ratio


def gronwall_table(mpr: MarketPriceOfRiskModel, grid: TimeGrid, anchors: Sequence[int]) -> pd.DataFrame:
    rows = []
    base = solve_phi2(mpr, grid, 0) if mpr.time_homogeneous else None
    for s in anchors:
        if base is not None:
            phi2 = np.zeros_like(base)
            phi2[:, s:] = base[:, : grid.n_steps + 1 - s]
        else:
            phi2 = solve_phi2(mpr, grid, s)
        ok, ratio = gronwall_check(mpr, grid, phi2, s)
        rows.append({"anchor": int(s), "t": float(grid.nodes[s]), "max_ratio": ratio, "ok": ok})
    return pd.DataFrame(rows)


def solve_phi1(
    s: int,
    bundle: SimulationBundle,
    phi2: np.ndarray,
    mpr: MarketPriceOfRiskModel,
    truncation: Optional[TruncationLevels] = None,
) -> np.ndarray:
    """
    Euler em [s, T] de
        dΦ^{1,j} = (‖θ̃‖²Φ^{1,j} + 2Z̃θ̃ᵀψ_j)dt − (θ̃ Φ^{1,j} + Z̃ψ_j)ᵀ dW̃,
    Φ^{1,j}(s, s) = δ_{0j}. Formato (P, n+1, N+1).
    """
    grid = bundle.grid
    z, theta = _state(bundle, truncation)
    psi = kernel_response(mpr, grid, phi2, s)
    n_paths, n = bundle.n_paths, bundle.n
    phi1 = np.zeros((n_paths, n + 1, grid.n_steps + 1))
    phi1[:, 0, s] = 1.0
    dwt = bundle.dWtilde

    for k in range(s, grid.n_steps):
        th, zk, ps = theta[:, k], z[:, k], psi[:, k]
        th2 = np.sum(th**2, axis=1)
        cross = th @ ps.T

        def drift(t, state):
            return th2[:, None] * state + 2.0 * zk[:, None] * cross

        def diffusion(t, state):
            return -(th[:, None, :] * state[:, :, None] + zk[:, None, None] * ps[None, :, :])

        phi1[:, :, k + 1] = euler_step_functional(
            phi1[:, :, k], drift, diffusion, grid.nodes[k], phi1[:, :, k], grid.dt, dwt[:, k], step=k, what="Φ¹",
        )
    return phi1


def solve_variational(
    s: int,
    bundle: SimulationBundle,
    truncation: Optional[TruncationLevels] = None,
) -> VariationalSolution:
    mpr = bundle.model.mpr
    phi2 = solve_phi2(mpr, bundle.grid, s)
    return VariationalSolution(s, phi2, solve_phi1(s, bundle, phi2, mpr, truncation))


# =============================================================================
# λ(t)
# =============================================================================

def lambda_row(
    s: int,
    bundle: SimulationBundle,
    variational: VariationalSolution,
    weights: MuDerivativeWeights,
    truncation: Optional[TruncationLevels] = None,
) -> np.ndarray:
    """λ(t_s) por caminho, (P, n), com Φ¹ de Euler."""
    grid = bundle.grid
    mpr = bundle.model.mpr
    z, theta = _state(bundle, truncation)
    psi = kernel_response(mpr, grid, variational.phi2, s)
    integrand = weights.c1[:, None, :] * variational.phi1 + np.einsum("pkb,jkb->pjk", weights.c2, psi)
    row = trapezoid(integrand[:, :, s:], dx=grid.dt, axis=2)
    return -row[:, :1] * z[:, s, None] * theta[:, s, :] + row[:, 1:]


@dataclass(frozen=True, eq=False)
class LambdaTermStructure:
    anchors: np.ndarray
    values: np.ndarray  # (P, A, n)
    short_circuited: bool = False


def anchor_nodes(grid: TimeGrid, stride: int = 1) -> np.ndarray:
    if stride < 1:
        raise InvalidArgumentError("anchor_stride deve ser ≥ 1")
    anchors = np.arange(0, grid.n_steps + 1, stride)
    if anchors[-1] != grid.n_steps:
        anchors = np.append(anchors, grid.n_steps)
    return anchors


def _psi_table(mpr: MarketPriceOfRiskModel, grid: TimeGrid, anchors: np.ndarray) -> np.ndarray:
    """Tabela [r, i, a, b] = ψ_{1+a}(t_r; âncora i)_b, zero para r < âncora."""
    size, n = grid.n_steps + 1, mpr.dim
    table = np.zeros((size, len(anchors), n, n))
    if mpr.time_homogeneous:
        psi0 = kernel_response(mpr, grid, solve_phi2(mpr, grid, 0), 0)[1:]  # (n, N+1, n)
        lag = np.arange(size)[:, None] - anchors[None, :]
        valid = lag >= 0
        table[valid] = np.moveaxis(psi0[:, lag[valid], :], 1, 0)
        return table
    for i, s in enumerate(anchors):
        psi = kernel_response(mpr, grid, solve_phi2(mpr, grid, int(s)), int(s))[1:]
        table[s:, i] = np.moveaxis(psi[:, s:, :], 1, 0)
    return table


def _trapezoid_weights(n_steps: int, dt: float, anchors: np.ndarray) -> np.ndarray:
    """Pesos do trapézio em [t_m, T] por âncora m, formato (N+1, A)."""
    k = np.arange(n_steps + 1)[:, None]
    m = anchors[None, :]
    w = np.where(k >= m, dt, 0.0)
    w = np.where((k == m) | (k == n_steps), 0.5 * w, w)
    w[:, anchors == n_steps] = 0.0
    return w


def lambda_term_structure(
    bundle: SimulationBundle,
    weights: MuDerivativeWeights,
    anchors: Optional[np.ndarray] = None,
    truncation: Optional[TruncationLevels] = None,
) -> LambdaTermStructure:
    """
    λ em todas as âncoras de uma vez. Φ^{1,j} pela variação das constantes,
        Φ^{1,j}(u, t) = Z̃(u)[δ_{0j}/Z̃(t) − Σ_{t≤r<u} ψ_j(r)ᵀ ΔW_r],
    e a soma dupla reordenada: o termo em c1 vira −Σ_r ΔW_r C_r ψ_j(r),
    com C_r = Σ_{k>r} w_k c1_k Z̃_k (independente da âncora).
    """
    grid = bundle.grid
    mpr = bundle.model.mpr
    n_steps, dt = grid.n_steps, grid.dt
    anchors = anchor_nodes(grid) if anchors is None else np.unique(np.asarray(anchors, dtype=int))
    n_paths, n = bundle.n_paths, bundle.n

    if weights.is_zero:
        logger.debug("Pesos de μ nulos: λ ≡ 0 sem resolver Φ")
        return LambdaTermStructure(anchors, np.zeros((n_paths, len(anchors), n)), True)

    z, theta = _state(bundle, truncation)
    f = weights.c1 * z
    seg = 0.5 * dt * (f[:, :-1] + f[:, 1:])
    tail = np.zeros_like(f)
    tail[:, :-1] = np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]
    lam = -theta[:, anchors, :] * tail[:, anchors, None]

    if not mpr.is_constant:
        psi = _psi_table(mpr, grid, anchors)
        w_after = np.full(n_steps + 1, dt)
        w_after[-1] = 0.5 * dt
        cw = f * w_after
        c_after = np.cumsum(cw[:, ::-1], axis=1)[:, ::-1] - cw
        dw = np.zeros((n_paths, n_steps + 1, n))
        dw[:, :-1] = bundle.dW
        drive = -dw * c_after[..., None]
        lam = lam + np.einsum("prb,riab->pia", drive, psi, optimize=True)
        trap = _trapezoid_weights(n_steps, dt, anchors)
        lam = lam + np.einsum("pkb,kiab->pia", weights.c2, psi * trap[:, :, None, None], optimize=True)

    if not np.all(np.isfinite(lam)):
        bad = np.argwhere(~np.isfinite(lam))[0]
        raise NumericOverflowError("λ", int(bad[0]), int(anchors[bad[1]]))
    return LambdaTermStructure(anchors, lam, False)


# =============================================================================
# REGRESSÃO: β = Ẽ(λ(t) | F_t)
# =============================================================================

@dataclass(frozen=True)
class RegressionSpec:
    degree: int = 3
    ridge: float = 0.0
    cond_limit: float = 1e10
    fallback_ridge: float = 1e-8

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise InvalidArgumentError("degree deve ser inteiro ≥ 0")
        if self.ridge < 0 or self.fallback_ridge < 0:
            raise InvalidArgumentError("ridge deve ser ≥ 0")


@dataclass(frozen=True, eq=False)
class BetaEstimate:
    anchors: np.ndarray
    beta: np.ndarray          # (P, A, n) valores ajustados
    raw_lambda: np.ndarray    # (P, A, n)
    condition: np.ndarray     # (A,)
    ridge_used: np.ndarray    # (A,)
    models: Tuple[Optional[Pipeline], ...] = ()

    def beta_path(self, n_nodes: int) -> np.ndarray:
        """β̂ constante por partes entre âncoras, (P, n_nodes, n)."""
        idx = np.searchsorted(self.anchors, np.arange(n_nodes), side="right") - 1
        return self.beta[:, idx]


def state_features(bundle: SimulationBundle, k: int) -> np.ndarray:
    """(log Z̃(t_k), θ̃(t_k)) por caminho."""
    return np.column_stack([np.log(bundle.Ztilde[:, k]), bundle.theta[:, k, :]])


def _varying_columns(features: np.ndarray) -> np.ndarray:
    spread = np.std(features, axis=0)
    return spread > 1e-12 * (1.0 + np.abs(np.mean(features, axis=0)))


def estimate_beta(
    lam: LambdaTermStructure,
    bundle: SimulationBundle,
    spec: RegressionSpec = RegressionSpec(),
) -> BetaEstimate:
    """
    Regressão por nó, entre caminhos, de λ(t) num polinômio das variáveis de
    estado padronizadas. Bundle sob P: mínimos quadrados ponderados por Z̃(T).
    """
    anchors = lam.anchors
    n_paths, n_anchors, n = lam.values.shape
    condition = np.zeros(n_anchors)
    ridge_used = np.zeros(n_anchors)
    if lam.short_circuited or not np.any(lam.values):
        return BetaEstimate(anchors, np.zeros_like(lam.values), lam.values, condition, ridge_used,
                            tuple([None] * n_anchors))

    sample_weight = bundle.Ztilde[:, -1] if bundle.simulated_under == Measure.P else None
    root_w = np.sqrt(sample_weight) if sample_weight is not None else np.ones(n_paths)
    beta = np.zeros_like(lam.values)
    models: List[Optional[Pipeline]] = []

    for i, k in enumerate(anchors):
        target = lam.values[:, i, :]
        features = state_features(bundle, int(k))
        if not np.all(np.isfinite(features)):
            raise EstimationError("variáveis de estado não finitas", int(k))
        features = features[:, _varying_columns(features)]

        if features.shape[1] == 0:
            mean = np.average(target, axis=0, weights=sample_weight)
            beta[:, i, :] = mean
            condition[i] = 1.0
            models.append(None)
            continue

        scaler = StandardScaler()
        poly = PolynomialFeatures(degree=int(spec.degree), include_bias=True)
        design = poly.fit_transform(scaler.fit_transform(features, sample_weight=sample_weight))
        cond = float(np.linalg.cond(design * root_w[:, None]))
        condition[i] = cond

        ridge = spec.ridge
        if not math.isfinite(cond) or cond > spec.cond_limit:
            if ridge == 0.0:
                if spec.fallback_ridge <= 0.0:
                    raise EstimationError(f"design mal condicionado (cond={cond:.3g})", int(k))
                ridge = spec.fallback_ridge
                logger.warning("Nó %d: cond=%.3g, ridge de fallback %.1e", k, cond, ridge)
        ridge_used[i] = ridge
        logger.debug("Nó %d: cond=%.3g ridge=%g", k, cond, ridge)

        reg = Ridge(alpha=ridge, fit_intercept=False) if ridge > 0 else LinearRegression(fit_intercept=False)
        reg.fit(design, target, sample_weight=sample_weight)
        fitted = reg.predict(design).reshape(n_paths, n)
        if not np.all(np.isfinite(fitted)):
            raise EstimationError("ajuste não finito", int(k))
        beta[:, i, :] = fitted
        models.append(Pipeline([("scale", scaler), ("poly", poly), ("reg", reg)]))

    return BetaEstimate(anchors, beta, lam.values, condition, ridge_used, tuple(models))


# =============================================================================
# RESÍDUO DA REPRESENTAÇÃO E π̄
# =============================================================================

def _weighted_var(values: np.ndarray, weights: np.ndarray) -> float:
    mean = np.average(values, weights=weights)
    return float(np.average((values - mean) ** 2, weights=weights))


@dataclass
class RepresentationReport:
    expected_v: Estimate
    v_variance: float
    residual_variance: float
    variance_ratio: float
    replication_ratio: float
    tower_max_z: float
    tower_exceed_fraction: float
    tower: pd.DataFrame = field(repr=False, default_factory=pd.DataFrame)

    def as_dict(self) -> dict:
        return {
            "expected_v": self.expected_v.as_dict(),
            "v_variance": self.v_variance,
            "residual_variance": self.residual_variance,
            "variance_ratio": self.variance_ratio,
            "replication_ratio": self.replication_ratio,
            "tower_max_z": self.tower_max_z,
            "tower_exceed_fraction": self.tower_exceed_fraction,
        }


def hedging_portfolio(beta_path: np.ndarray, bundle: SimulationBundle) -> StrategyPath:
    """π̄ = (Aᵀ)^{-1}β com A_ij = S_i σ_ij, isto é S⊙π̄ = βᵀσ^{-1}."""
    if beta_path.shape != bundle.S.shape:
        raise InvalidArgumentError("β̂ deve ter formato (caminho, nó, ativo)")
    return StrategyPath(bundle.model.merton_proportion(beta_path) / bundle.S, StrategyLabel.HEDGING)


def representation_residual(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    beta: BetaEstimate,
    z_limit: float = 4.0,
) -> RepresentationReport:
    """V_x(T) − ẼV_x(T) − Σβ̂ᵀΔW̃ e o teste de torre Ẽ[β̂ᵀΔW̃] = 0 por nó."""
    weights = bundle.q_weights()
    v_T = correction_process(x, bundle, utility)[:, -1]
    ev = mc_mean(v_T, weights)

    beta_path = beta.beta_path(bundle.grid.n_steps + 1)
    increments = np.sum(beta_path[:, :-1] * bundle.dWtilde, axis=2)
    residual = v_T - ev.value - np.sum(increments, axis=1)

    hedge = hedging_portfolio(beta_path, bundle)
    replicated = simulate_wealth(ev.value, hedge, bundle).terminal

    v_var = _weighted_var(v_T, weights)
    res_var = _weighted_var(residual, weights)
    rep_var = _weighted_var(v_T - replicated, weights)

    rows = []
    for k in range(bundle.grid.n_steps):
        est = mc_mean(increments[:, k], weights)
        rows.append({"t": float(bundle.grid.nodes[k]), "mean": est.value, "se": est.stderr, "z": est.z_score(0.0)})
    tower = pd.DataFrame(rows)
    z_abs = tower["z"].replace(np.inf, np.nan).fillna(0.0)

    return RepresentationReport(
        expected_v=ev,
        v_variance=v_var,
        residual_variance=res_var,
        variance_ratio=res_var / v_var if v_var > 0 else 0.0,
        replication_ratio=rep_var / v_var if v_var > 0 else 0.0,
        tower_max_z=float(z_abs.max()) if len(z_abs) else 0.0,
        tower_exceed_fraction=float((z_abs > z_limit).mean()) if len(z_abs) else 0.0,
        tower=tower,
    )


# =============================================================================
# x*
# =============================================================================

@dataclass(frozen=True)
class XStarResult:
    x: float
    x_star: float
    expected_v: Estimate
    residual: float
    iterations: int
    closed_form: Optional[float] = None

    def as_dict(self) -> dict:
        out = {
            "x": self.x,
            "x_star": self.x_star,
            "expected_v": self.expected_v.as_dict(),
            "residual": self.residual,
            "iterations": self.iterations,
        }
        if self.closed_form is not None:
            out["closed_form"] = self.closed_form
        return out


def expected_terminal_correction(z: float, bundle: SimulationBundle, utility: UtilityModel) -> Estimate:
    """Ẽ V_z(T) no bundle fixo (números aleatórios comuns em z)."""
    integrand = correction_integrand_path(z, bundle, utility)
    return mc_mean(trapezoid(integrand, dx=bundle.grid.dt, axis=1), bundle.q_weights())


def solve_xstar(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    xtol_rel: float = 1e-8,
    upper_factor: float = 10.0,
) -> XStarResult:
    """Raiz de h(z) = z + Ẽ V_z(T) − x por bisseção em [1e-12·x, upper_factor·x]."""
    if not x > 0:
        raise InvalidArgumentError("x deve ser positivo")
    if isinstance(utility, LogUtility):
        zero = Estimate(0.0, 0.0, bundle.n_paths)
        return XStarResult(x, x, zero, 0.0, 0)

    def h(z: float) -> float:
        return z + expected_terminal_correction(z, bundle, utility).value - x

    lo, hi = 1e-12 * x, upper_factor * x
    h_lo, h_hi = h(lo), h(hi)
    if not (math.isfinite(h_lo) and math.isfinite(h_hi)) or h_lo * h_hi > 0:
        raise RootNotFoundError(lo, hi, h_lo, h_hi)

    root, info = bisect(h, lo, hi, xtol=xtol_rel * x, full_output=True, disp=False)
    ev = expected_terminal_correction(root, bundle, utility)

    closed = None
    if isinstance(utility, PowerUtility):
        c = expected_terminal_correction(x, bundle, utility).value / x
        closed = x / (1.0 + c)

    logger.info("x* = %.8g (x = %g, Ẽ V = %.6g, %d iterações)", root, x, ev.value, info.iterations)
    return XStarResult(x, float(root), ev, float(h(root)), int(info.iterations), closed)


# =============================================================================
# ORÁCULOS
# =============================================================================

def lognormal_beta_oracle(x: float, bundle: SimulationBundle, utility: PowerUtility) -> np.ndarray:
    """
    CRRA com θ̃ constante (n = 1):
    β(t) = −k·q·θ·Z̃(t)^q ∫_t^T e^{½q(q+1)θ²(u−t)} du, k = x p θ²/(2(p−1)²).
    """
    if not isinstance(utility, PowerUtility) or not bundle.model.mpr.is_constant or bundle.n != 1:
        raise InvalidArgumentError("oráculo lognormal exige utilidade power, θ̃ constante e n = 1")
    theta = float(bundle.model.mpr.theta0()[0])
    q = utility.q
    k = x * utility.k0 * theta**2
    rate = 0.5 * q * (q + 1.0) * theta**2
    remaining = bundle.grid.horizon - bundle.grid.nodes
    integral = np.expm1(rate * remaining) / rate if rate != 0 else remaining
    return -k * q * theta * bundle.Ztilde**q * integral


def nested_lambda_estimate(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    node: int,
    path: int,
    n_inner: int,
    seeds: SeedSpec,
    truncation: Optional[TruncationLevels] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ẽ(λ(t) | F_t) por Monte Carlo aninhado a partir do estado (Z̃(t), θ̃(t)) do
    caminho: modelo reiniciado em θ̃(t), nível marginal U′(x)Z̃(t). Devolve (média, erro padrão).
    """
    grid = bundle.grid
    n = bundle.n
    if node >= grid.n_steps:
        return np.zeros(n), np.zeros(n)
    sub_grid = TimeGrid(grid.horizon - float(grid.nodes[node]), grid.n_steps - node)
    model = bundle.model
    sub_model = MarketModel(model.sigma, bundle.S[path, node], model.mpr.restarted(bundle.theta[path, node]))
    sub = simulate_bundle_under_Q(sub_model, sub_grid, n_inner, seeds)
    y = float(utility.dU(x)) * float(bundle.Ztilde[path, node])
    weights = weights_at_marginal(y, sub, utility, truncation)
    lam = lambda_term_structure(sub, weights, anchors=np.array([0]), truncation=truncation).values[:, 0, :]
    return np.mean(lam, axis=0), np.std(lam, axis=0, ddof=1) / math.sqrt(n_inner)


def nested_probe_table(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    beta: BetaEstimate,
    nodes: Sequence[int],
    n_states: int,
    n_inner: int,
    seeds: SeedSpec,
) -> pd.DataFrame:
    """β̂ contra o oráculo aninhado em nós × estados de prova."""
    rows = []
    label = 0
    for node in nodes:
        i = int(np.searchsorted(beta.anchors, node, side="right") - 1)
        for path in range(min(n_states, bundle.n_paths)):
            mean, se = nested_lambda_estimate(x, bundle, utility, int(node), path, n_inner, seeds.derive(label))
            label += 1
            for a in range(bundle.n):
                diff = float(beta.beta[path, i, a] - mean[a])
                rows.append({
                    "node": int(node), "path": path, "asset": a,
                    "beta_hat": float(beta.beta[path, i, a]), "nested": float(mean[a]),
                    "nested_se": float(se[a]), "z": abs(diff) / se[a] if se[a] > 0 else (0.0 if diff == 0 else np.inf),
                })
    return pd.DataFrame(rows)


# =============================================================================
# PIPELINE DE HEDGE E DECOMPOSIÇÃO
# =============================================================================

@dataclass(eq=False)
class HedgeResult:
    x: float
    weights: MuDerivativeWeights
    lam: LambdaTermStructure
    beta: BetaEstimate
    strategy: StrategyPath
    representation: RepresentationReport
    truncation: Optional[TruncationLevels] = None


def hedge(
    x: float,
    bundle: SimulationBundle,
    utility: UtilityModel,
    spec: RegressionSpec = RegressionSpec(),
    anchor_stride: int = 1,
    truncation: TruncationSetting = "off",
) -> HedgeResult:
    levels = resolve_truncation(truncation, bundle)
    anchors = anchor_nodes(bundle.grid, anchor_stride)
    try:
        weights = mu_weights(x, bundle, utility, levels)
        lam = lambda_term_structure(bundle, weights, anchors, levels)
    except NumericOverflowError:
        if truncation != "auto":
            raise
        levels = TruncationLevels.from_quantile(bundle, AUTO_TRUNCATION_MULTIPLIER)
        logger.warning("Overflow em λ: truncamento ligado (k_θ=%.4g, k_Z=%.4g)", levels.theta.k, levels.z.k)
        weights = mu_weights(x, bundle, utility, levels)
        lam = lambda_term_structure(bundle, weights, anchors, levels)

    beta = estimate_beta(lam, bundle, spec)
    strategy = hedging_portfolio(beta.beta_path(bundle.grid.n_steps + 1), bundle)
    representation = representation_residual(x, bundle, utility, beta)
    logger.info(
        "Hedge: grau %d, %d âncoras, razão de variância do resíduo %.4f",
        spec.degree, len(anchors), representation.variance_ratio,
    )
    return HedgeResult(x, weights, lam, beta, strategy, representation, levels)


def expected_utility(
    utility: UtilityModel,
    terminal: np.ndarray,
    bundle: SimulationBundle,
    floor: float,
) -> Tuple[Estimate, int]:
    """E_P[U(X_T)]; sob Q̃ pondera por 1/Z̃(T). Riqueza ≤ 0 vira 'floor' (contada) nas utilidades de Inada."""
    floored = 0
    values = terminal
    if utility.conforming:
        bad = ~(terminal > 0)
        floored = int(np.sum(bad))
        values = np.where(bad, floor, terminal)
    return mc_mean(utility.U(values), bundle.p_weights()), floored


@dataclass(eq=False)
class DecompositionResult:
    x: float
    xstar: XStarResult
    bundle: SimulationBundle
    myopic: StrategyPath
    hedge: HedgeResult
    combined: StrategyPath
    wealth: WealthPath
    correction: np.ndarray
    terminal_rms: float
    terminal_rel_rms: float
    expected_utility: Dict[str, Estimate]
    floored: Dict[str, int]
    conforming: bool = True


def decompose(
    x: float,
    model: MarketModel,
    utility: UtilityModel,
    grid: TimeGrid,
    n_paths: int,
    seeds: SeedSpec,
    spec: RegressionSpec = RegressionSpec(),
    anchor_stride: int = 1,
    truncation: TruncationSetting = "off",
    workers: int = 1,
    bundle: Optional[SimulationBundle] = None,
) -> DecompositionResult:
    """x*, π̃_{x*} + π̄_{x*}, riqueza a partir de x e o confronto X(T) × I(U′(x*)Z̃(T))."""
    if bundle is None:
        bundle = simulate_bundle_under_Q(model, grid, n_paths, seeds, workers=workers)
    if not utility.conforming:
        logger.warning("Utilidade %s fora das hipóteses padrão: execução rotulada", utility.describe())

    xstar = solve_xstar(x, bundle, utility)
    x_star = xstar.x_star
    myopic = myopic_portfolio(x_star, bundle, utility)
    hedge_result = hedge(x_star, bundle, utility, spec, anchor_stride, truncation)
    combined = myopic + hedge_result.strategy
    wealth = simulate_wealth(x, combined, bundle)

    target = optimal_wealth_level(x_star, bundle, utility)[:, -1]
    mismatch = wealth.terminal - target
    rms = float(np.sqrt(np.mean(mismatch**2)))
    rel_rms = rms / float(np.sqrt(np.mean(target**2)))

    floor = 1e-12 * x
    eu, floored = {}, {}
    eu["combined"], floored["combined"] = expected_utility(utility, wealth.terminal, bundle, floor)
    myopic_only = simulate_wealth(x, myopic_portfolio(x, bundle, utility), bundle)
    eu["myopic"], floored["myopic"] = expected_utility(utility, myopic_only.terminal, bundle, floor)
    _, merton_wealth = simulate_feedback_wealth(x, bundle, merton_rule(bundle, utility))
    eu["merton"], floored["merton"] = expected_utility(utility, merton_wealth.terminal, bundle, floor)

    logger.info("Decomposição: x*=%.6g, RMS relativo terminal %.4f", x_star, rel_rms)
    return DecompositionResult(
        x=x,
        xstar=xstar,
        bundle=bundle,
        myopic=myopic,
        hedge=hedge_result,
        combined=combined,
        wealth=wealth,
        correction=correction_process(x_star, bundle, utility),
        terminal_rms=rms,
        terminal_rel_rms=rel_rms,
        expected_utility=eu,
        floored=floored,
        conforming=utility.conforming,
    )
