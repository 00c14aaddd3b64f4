# -*- coding: utf-8 -*-
"""
market.py — Preço de mercado do risco θ̃ como funcional não antecipativo,
exponencial estocástica Z̃, troca de medida (Girsanov) e preços das ações.

Modelos de θ̃:
- ConstantMPR: θ̃ ≡ θ0 (núcleo de Fréchet nulo).
- OUMPR: dU = (α − βU)dt + v dW, n = 1. Núcleo = átomo v em t + densidade
  −vβ e^{β(u−t)} em [0, t]; não depende da trajetória base.

Dois caminhos de simulação:
- simulate_bundle_under_P: W Browniano sob P, W̃ = W + ∫θ̃.
- simulate_bundle_under_Q: W̃ Browniano sob Q̃, W recuperado por dW = dW̃ − θ̃ dt.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import InvalidArgumentError, NumericOverflowError
from paths import (
    Estimate,
    Measure,
    PathEnsemble,
    SeedSpec,
    TimeGrid,
    integrate_functional,
    loglog_slope,
    mc_mean,
    sample_brownian,
)

logger = logging.getLogger(__name__)


# =============================================================================
# PREÇO DE MERCADO DO RISCO
# =============================================================================

class MarketPriceOfRiskModel(ABC):
    """
    Interface comum: dinâmica sob P (drift/difusão do θ̃), funcional de
    trajetória (evaluate) e núcleo de Fréchet (átomo + densidade).
    """

    name: str = "abstract"
    time_homogeneous: bool = True

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @abstractmethod
    def theta0(self) -> np.ndarray: ...

    @abstractmethod
    def drift(self, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def diffusion(self, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def mean_path(self, grid: TimeGrid) -> np.ndarray:
        """Parte determinística do funcional: θ̃ avaliado na trajetória nula, (N+1, n)."""

    @abstractmethod
    def kernel_atom(self, t: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def kernel_density(self, u: np.ndarray, t: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def total_variation_bound(self, horizon: float) -> float: ...

    @abstractmethod
    def restarted(self, theta0: np.ndarray) -> "MarketPriceOfRiskModel": ...

    @property
    def is_constant(self) -> bool:
        return False

    def kernel_operator(self, grid: TimeGrid, start: int = 0) -> np.ndarray:
        return _kernel_operator(self, grid.horizon, grid.n_steps, int(start))

    def evaluate(self, grid: TimeGrid, w: np.ndarray) -> np.ndarray:
        """θ̃(t_k) = Θ̃(t_k, w) para w com formato (..., N+1, n)."""
        w = _check_path(grid, w, self.dim, "w")
        base = self.mean_path(grid)
        if self.is_constant:
            return np.broadcast_to(base, w.shape).copy()
        w0 = w - w[..., :1, :]
        return base + np.einsum("kiab,...ib->...ka", self.kernel_operator(grid), w0)

    def simulate_theta(self, grid: TimeGrid, increments: np.ndarray) -> np.ndarray:
        """Euler da EDE de θ̃ dirigida pelos incrementos de W (sob P)."""
        n_paths = increments.shape[0]
        if self.is_constant:
            return np.broadcast_to(self.theta0(), (n_paths, grid.n_steps + 1, self.dim)).copy()
        return integrate_functional(
            grid,
            self.theta0(),
            lambda t, h: self.drift(h[:, -1]),
            lambda t, h: self.diffusion(h[:, -1]),
            increments,
            what="θ̃",
        )


@dataclass(frozen=True)
class ConstantMPR(MarketPriceOfRiskModel):
    theta: Tuple[float, ...]
    name = "constant"

    def __post_init__(self):
        theta = tuple(float(v) for v in np.atleast_1d(self.theta))
        if not theta or not all(math.isfinite(v) for v in theta):
            raise InvalidArgumentError("theta constante deve ser vetor finito não vazio")
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return len(self.theta)

    @property
    def is_constant(self) -> bool:
        return True

    def theta0(self) -> np.ndarray:
        return np.array(self.theta)

    def drift(self, theta):
        return np.zeros_like(theta)

    def diffusion(self, theta):
        return np.zeros(theta.shape + (self.dim,))

    def mean_path(self, grid):
        return np.tile(self.theta0(), (grid.n_steps + 1, 1))

    def kernel_atom(self, t):
        return np.zeros(np.shape(t) + (self.dim, self.dim))

    def kernel_density(self, u, t):
        return np.zeros(np.broadcast(u, t).shape + (self.dim, self.dim))

    def total_variation_bound(self, horizon):
        return 0.0

    def restarted(self, theta0):
        return self


@dataclass(frozen=True)
class OUMPR(MarketPriceOfRiskModel):
    alpha: float
    beta: float
    v: float
    u0: float
    name = "ou"

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgumentError(f"beta deve ser > 0 (recebido {self.beta})")
        for nome in ("alpha", "beta", "v", "u0"):
            valor = float(getattr(self, nome))
            if not math.isfinite(valor):
                raise InvalidArgumentError(f"{nome} deve ser finito")
            object.__setattr__(self, nome, valor)

    @property
    def dim(self) -> int:
        return 1

    def theta0(self):
        return np.array([self.u0])

    def drift(self, theta):
        return self.alpha - self.beta * theta

    def diffusion(self, theta):
        return np.full(theta.shape + (1,), self.v)

    def mean_path(self, grid):
        decay = np.exp(-self.beta * grid.nodes)
        m = decay * self.u0 + (self.alpha / self.beta) * (1.0 - decay)
        return m[:, None]

    def kernel_atom(self, t):
        return np.full(np.shape(t) + (1, 1), self.v)

    def kernel_density(self, u, t):
        lag = np.minimum(np.asarray(u, dtype=float) - np.asarray(t, dtype=float), 0.0)
        return (-self.v * self.beta * np.exp(self.beta * lag))[..., None, None]

    def total_variation_bound(self, horizon):
        return abs(self.v) * (1.0 + self.beta * horizon)

    def restarted(self, theta0):
        return OUMPR(self.alpha, self.beta, self.v, float(np.ravel(theta0)[0]))

    def exact_mean(self, t: float) -> float:
        decay = math.exp(-self.beta * t)
        return decay * self.u0 + (self.alpha / self.beta) * (1.0 - decay)

    def exact_variance(self, t: float) -> float:
        return self.v**2 * (1.0 - math.exp(-2.0 * self.beta * t)) / (2.0 * self.beta)


@lru_cache(maxsize=16)
def _kernel_operator(mpr: MarketPriceOfRiskModel, horizon: float, n_steps: int, start: int) -> np.ndarray:
    """
    Matriz (N+1, N+1, n, n): [Θ̄′γ](t_k) = Σ_i op[k, i] γ(t_i) integrando em
    [t_start, t_k] pela regra do trapézio, com o átomo na diagonal.
    Linhas k < start ficam em zero.
    """
    grid = TimeGrid(horizon, n_steps)
    nodes = grid.nodes
    n = mpr.dim
    size = n_steps + 1
    op = np.zeros((size, size, n, n))
    if mpr.is_constant:
        op.flags.writeable = False
        return op

    k_idx, i_idx = np.tril_indices(size)
    keep = i_idx >= start
    k_idx, i_idx = k_idx[keep], i_idx[keep]

    weights = np.full(k_idx.shape, grid.dt)
    weights[(i_idx == start) | (i_idx == k_idx)] = 0.5 * grid.dt
    weights[k_idx == start] = 0.0

    op[k_idx, i_idx] = weights[:, None, None] * mpr.kernel_density(nodes[i_idx], nodes[k_idx])
    diag = np.arange(start, size)
    op[diag, diag] += mpr.kernel_atom(nodes[diag])
    op.flags.writeable = False
    return op


def _check_path(grid: TimeGrid, path: np.ndarray, dim: int, what: str) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if path.ndim == 1 and dim == 1:
        path = path[:, None]
    if path.ndim < 2 or path.shape[-2] != grid.n_steps + 1 or path.shape[-1] != dim:
        raise InvalidArgumentError(
            f"{what}: formato {path.shape} incompatível com a grade (..., {grid.n_steps + 1}, {dim})"
        )
    return path


# =============================================================================
# OU: SOLUÇÕES DE REFERÊNCIA
# =============================================================================

def ou_theta_sde(params: OUMPR, grid: TimeGrid, w: np.ndarray) -> np.ndarray:
    """Euler de dU = (α − βU)dt + v dW com os incrementos de w. Rota de referência."""
    if not isinstance(params, OUMPR):
        raise InvalidArgumentError("ou_theta_sde exige o modelo OU")
    w = _check_path(grid, w, 1, "W")
    single = w.ndim == 2
    w3 = w[None] if single else w.reshape(-1, grid.n_steps + 1, 1)
    theta = params.simulate_theta(grid, np.diff(w3, axis=1))
    return theta[0] if single else theta.reshape(w.shape)


def ou_theta_closed_form(params: OUMPR, grid: TimeGrid, w: np.ndarray) -> np.ndarray:
    """
    Fórmula fechada com o termo extra v²/(2β) na média de longo prazo,
    integral estocástica ∫e^{βu}dW pela extremidade esquerda.
    Só para comparação: a rota EDE é a verdade implementada.
    """
    if not isinstance(params, OUMPR):
        raise InvalidArgumentError("ou_theta_closed_form exige o modelo OU")
    w = _check_path(grid, w, 1, "W")
    t = grid.nodes
    b = params.beta
    decay = np.exp(-b * t)
    level = params.alpha / b + params.v**2 / (2.0 * b)
    dw = np.diff(w[..., 0], axis=-1)
    weighted = np.exp(b * t[:-1]) * dw
    stoch = np.concatenate([np.zeros(dw.shape[:-1] + (1,)), np.cumsum(weighted, axis=-1)], axis=-1)
    u = decay * params.u0 + level * (1.0 - decay) + params.v * decay * stoch
    return u[..., None]


# =============================================================================
# DERIVADA DE FRÉCHET
# =============================================================================

@dataclass(frozen=True)
class FrechetCheckReport:
    eps: Tuple[float, ...]
    remainder: Tuple[float, ...]
    slope: float
    affine: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"eps": self.eps, "remainder": self.remainder})


def frechet_apply(
    mpr: MarketPriceOfRiskModel,
    grid: TimeGrid,
    base: np.ndarray,
    gamma: np.ndarray,
    start: int = 0,
) -> np.ndarray:
    """[Θ̄′(base)γ](t_k) com quadratura do trapézio; o núcleo não depende de base."""
    _check_path(grid, base, mpr.dim, "base")
    gamma = _check_path(grid, gamma, mpr.dim, "gamma")
    if mpr.is_constant:
        return np.zeros_like(gamma)
    return np.einsum("kiab,...ib->...ka", mpr.kernel_operator(grid, start), gamma)


def frechet_fd_check(
    mpr: MarketPriceOfRiskModel,
    grid: TimeGrid,
    base: np.ndarray,
    gamma: np.ndarray,
    eps_ladder: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
) -> FrechetCheckReport:
    """R(ε) = ‖Θ̄(y+εγ) − Θ̄(y) − εΘ̄′(y)γ‖∞ e a inclinação log-log em ε."""
    base = _check_path(grid, base, mpr.dim, "base")
    gamma = _check_path(grid, gamma, mpr.dim, "gamma")
    theta_base = mpr.evaluate(grid, base)
    linear = frechet_apply(mpr, grid, base, gamma)
    scale = 1.0 + float(np.max(np.abs(theta_base)))

    remainders = []
    for eps in eps_ladder:
        shifted = mpr.evaluate(grid, base + eps * gamma)
        remainders.append(float(np.max(np.abs(shifted - theta_base - eps * linear))))

    affine = max(remainders) <= 1e-10 * scale
    slope = float("nan") if affine else loglog_slope(eps_ladder, remainders)
    return FrechetCheckReport(tuple(float(e) for e in eps_ladder), tuple(remainders), slope, affine)


def nonanticipativity_check(
    mpr: MarketPriceOfRiskModel,
    grid: TimeGrid,
    w: np.ndarray,
    k: int,
    seeds: Optional[SeedSpec] = None,
) -> bool:
    """Perturba w depois de t_k e confere θ̃ em t_0..t_k bit a bit."""
    w = _check_path(grid, w, mpr.dim, "w")
    rng = (seeds or SeedSpec(0)).path_rng(0)
    perturbed = np.array(w, copy=True)
    perturbed[..., k + 1:, :] += rng.standard_normal(perturbed[..., k + 1:, :].shape)
    before = mpr.evaluate(grid, w)[..., : k + 1, :]
    after = mpr.evaluate(grid, perturbed)[..., : k + 1, :]
    return bool(np.array_equal(before, after))


# =============================================================================
# MODELO DE MERCADO E EXPONENCIAL ESTOCÁSTICA
# =============================================================================

@dataclass(frozen=True, eq=False)
class MarketModel:
    sigma: np.ndarray
    s0: np.ndarray
    mpr: MarketPriceOfRiskModel

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        n = self.mpr.dim
        if sigma.shape != (n, n):
            raise InvalidArgumentError(f"sigma deve ser {n}×{n} (recebido {sigma.shape})")
        if s0.shape != (n,) or np.any(s0 <= 0):
            raise InvalidArgumentError("s0 deve ser vetor positivo com um preço por ativo")
        if np.linalg.matrix_rank(sigma) < n:
            raise InvalidArgumentError("sigma não tem posto completo")
        sigma.flags.writeable = False
        s0.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "s0", s0)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.sigma))

    def alpha(self, theta: np.ndarray) -> np.ndarray:
        """α = σθ̃ por nó."""
        return theta @ self.sigma.T

    def merton_proportion(self, theta: np.ndarray) -> np.ndarray:
        """(σσᵀ)^{-1}α = (σᵀ)^{-1}θ̃."""
        return theta @ np.linalg.inv(self.sigma)


def stochastic_exponential(grid: TimeGrid, theta: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Z̃(t_k) = exp(−Σθᵀ ΔW − ½Σ‖θ‖² dt), somas pela extremidade esquerda."""
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    if theta.shape != w.shape or theta.shape[-2] != grid.n_steps + 1:
        raise InvalidArgumentError("theta e W devem compartilhar a grade")
    th = theta[..., :-1, :]
    increments = -np.sum(th * np.diff(w, axis=-2), axis=-1) - 0.5 * np.sum(th**2, axis=-1) * grid.dt
    exponent = np.concatenate([np.zeros(increments.shape[:-1] + (1,)), np.cumsum(increments, axis=-1)], axis=-1)
    with np.errstate(over="ignore", under="ignore"):
        z = np.exp(exponent)
    bad = ~np.isfinite(z) | (z <= 0)
    if np.any(bad):
        flat = bad.reshape(-1, bad.shape[-1])
        path = int(np.flatnonzero(flat.any(axis=1))[0])
        step = int(np.flatnonzero(flat[path])[0])
        raise NumericOverflowError("Z̃", path, step)
    return z


# =============================================================================
# BUNDLES
# =============================================================================

@dataclass(frozen=True, eq=False)
class SimulationBundle:
    grid: TimeGrid
    model: MarketModel
    W: np.ndarray
    Wtilde: np.ndarray
    theta: np.ndarray
    Ztilde: np.ndarray
    S: np.ndarray
    simulated_under: Measure

    def __post_init__(self):
        shape = self.W.shape
        if self.Wtilde.shape != shape or self.theta.shape != shape or self.S.shape != shape:
            raise InvalidArgumentError("arrays do bundle com formatos diferentes")
        if self.Ztilde.shape != shape[:2]:
            raise InvalidArgumentError("Z̃ deve ter formato (caminho, nó)")
        if not np.all(self.Ztilde[:, 0] == 1.0) or np.any(self.Ztilde <= 0):
            raise InvalidArgumentError("Z̃(0) = 1 e Z̃ > 0 violados")
        if np.any(self.S <= 0):
            raise InvalidArgumentError("preços devem ser positivos")
        for arr in (self.W, self.Wtilde, self.theta, self.Ztilde, self.S):
            arr.flags.writeable = False

    @property
    def n_paths(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[2]

    @property
    def dW(self) -> np.ndarray:
        return np.diff(self.W, axis=1)

    @property
    def dWtilde(self) -> np.ndarray:
        return np.diff(self.Wtilde, axis=1)

    def q_weights(self) -> np.ndarray:
        """Pesos que transformam médias amostrais em Ẽ[·]: Z̃(T) sob P, 1 sob Q̃."""
        if self.simulated_under == Measure.P:
            return self.Ztilde[:, -1]
        return np.ones(self.n_paths)

    def p_weights(self) -> np.ndarray:
        """Pesos que transformam médias amostrais em E_P[·]: 1 sob P, 1/Z̃(T) sob Q̃."""
        if self.simulated_under == Measure.P:
            return np.ones(self.n_paths)
        return 1.0 / self.Ztilde[:, -1]

    def restricted(self, paths: np.ndarray) -> "SimulationBundle":
        return SimulationBundle(
            self.grid, self.model, self.W[paths], self.Wtilde[paths], self.theta[paths],
            self.Ztilde[paths], self.S[paths], self.simulated_under,
        )


def _log_euler_prices(model: MarketModel, grid: TimeGrid, theta: np.ndarray, dW: np.ndarray) -> np.ndarray:
    half_var = 0.5 * np.sum(model.sigma**2, axis=1)
    log_incr = (model.alpha(theta[:, :-1]) - half_var) * grid.dt + np.einsum("ij,pkj->pki", model.sigma, dW)
    log_s = np.concatenate([np.zeros_like(log_incr[:, :1]), np.cumsum(log_incr, axis=1)], axis=1)
    with np.errstate(over="ignore"):
        s = model.s0 * np.exp(log_s)
    if not np.all(np.isfinite(s)):
        finite = np.isfinite(s).all(axis=2)
        path = int(np.flatnonzero(~finite.all(axis=1))[0])
        raise NumericOverflowError("S", path, int(np.argmin(finite[path])) - 1)
    return s


def _theta_drift_integral(grid: TimeGrid, theta: np.ndarray) -> np.ndarray:
    integral = np.zeros_like(theta)
    np.cumsum(theta[:, :-1] * grid.dt, axis=1, out=integral[:, 1:])
    return integral


def _check_brownian(brownian: PathEnsemble, grid: TimeGrid, dim: int, measure: Measure) -> None:
    if brownian.grid != grid or brownian.dim != dim:
        raise InvalidArgumentError("ensemble Browniano não bate com grade/dimensão do modelo")
    if brownian.measure != measure:
        raise InvalidArgumentError(f"ensemble deveria ser Browniano sob {measure.value}")


def simulate_bundle_under_P(
    model: MarketModel,
    grid: TimeGrid,
    n_paths: int,
    seeds: SeedSpec,
    brownian: Optional[PathEnsemble] = None,
    workers: int = 1,
) -> SimulationBundle:
    if brownian is None:
        brownian = sample_brownian(grid, model.n, n_paths, seeds, Measure.P, workers)
    _check_brownian(brownian, grid, model.n, Measure.P)

    w = np.array(brownian.values)
    dw = brownian.increments
    theta = model.mpr.simulate_theta(grid, dw)
    z = stochastic_exponential(grid, theta, w)
    w_tilde = w + _theta_drift_integral(grid, theta)
    s = _log_euler_prices(model, grid, theta, dw)
    logger.info("Bundle sob P: %d caminhos, %d passos, modelo %s", brownian.n_paths, grid.n_steps, model.mpr.name)
    return SimulationBundle(grid, model, w, w_tilde, theta, z, s, Measure.P)


def simulate_bundle_under_Q(
    model: MarketModel,
    grid: TimeGrid,
    n_paths: int,
    seeds: SeedSpec,
    brownian: Optional[PathEnsemble] = None,
    workers: int = 1,
) -> SimulationBundle:
    """
    W̃ Browniano sob Q̃; θ̃ integra dθ = (b(θ) − c(θ)θ)dt + c(θ)dW̃, que é a EDE
    sob P reescrita com dW = dW̃ − θ̃ dt; então W = W̃ − ∫θ̃.
    """
    if brownian is None:
        brownian = sample_brownian(grid, model.n, n_paths, seeds, Measure.Q, workers)
    _check_brownian(brownian, grid, model.n, Measure.Q)

    mpr = model.mpr
    w_tilde = np.array(brownian.values)
    dw_tilde = brownian.increments
    if mpr.is_constant:
        theta = mpr.simulate_theta(grid, dw_tilde)
    else:
        theta = integrate_functional(
            grid,
            mpr.theta0(),
            lambda t, h: mpr.drift(h[:, -1]) - np.einsum("pij,pj->pi", mpr.diffusion(h[:, -1]), h[:, -1]),
            lambda t, h: mpr.diffusion(h[:, -1]),
            dw_tilde,
            what="θ̃ (Q̃)",
        )
    w = w_tilde - _theta_drift_integral(grid, theta)
    z = stochastic_exponential(grid, theta, w)
    s = _log_euler_prices(model, grid, theta, np.diff(w, axis=1))
    logger.info("Bundle sob Q̃: %d caminhos, %d passos, modelo %s", brownian.n_paths, grid.n_steps, mpr.name)
    return SimulationBundle(grid, model, w, w_tilde, theta, z, s, Measure.Q)


# =============================================================================
# ESTIMADORES E DIAGNÓSTICOS
# =============================================================================

def q_expectation(payoff: np.ndarray, ztilde_T: np.ndarray) -> Estimate:
    """Ẽ[payoff] = E_P[Z̃(T)·payoff] a partir de um bundle sob P."""
    return mc_mean(payoff, weights=ztilde_T)


def z_martingale_table(bundle: SimulationBundle) -> pd.DataFrame:
    """E_P Z̃(t_k) por nó; sob Q̃ usa E_P[Z̃(t)] = Ẽ[Z̃(t)/Z̃(T)]."""
    weights = bundle.p_weights()
    rows = []
    for k, t in enumerate(bundle.grid.nodes):
        est = mc_mean(bundle.Ztilde[:, k], weights)
        rows.append({"t": t, "mean": est.value, "se": est.stderr, "z": est.z_score(1.0)})
    return pd.DataFrame(rows)


def moment_diagnostics(bundle: SimulationBundle, kappas: Sequence[int] = (2, 4, 8)) -> pd.DataFrame:
    """Ẽ sup_t ‖θ̃‖^κ na amostra completa e na primeira metade."""
    sup_norm = np.max(np.linalg.norm(bundle.theta, axis=2), axis=1)
    weights = bundle.q_weights()
    half = max(1, bundle.n_paths // 2)
    rows = []
    for kappa in kappas:
        full = mc_mean(sup_norm**kappa, weights)
        part = mc_mean(sup_norm[:half] ** kappa, weights[:half])
        rel = abs(full.value - part.value) / abs(full.value) if full.value else 0.0
        rows.append({
            "kappa": int(kappa),
            "full": full.value,
            "full_se": full.stderr,
            "half": part.value,
            "rel_change": rel,
            "finite": bool(np.isfinite(full.value)),
        })
    return pd.DataFrame(rows)
