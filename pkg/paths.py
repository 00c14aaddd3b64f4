# -*- coding: utf-8 -*-
"""
paths.py — Grades de tempo, ensembles Brownianos e integração de Euler
para EDEs dependentes da trajetória.

Principais recursos:
- TimeGrid uniforme em [0, T] (make_grid) e refinamento por fator (coarsen).
- PathEnsemble imutável com formato (caminho, nó, dimensão) e medida declarada.
- SeedSpec: um fluxo independente por caminho (SeedSequence com spawn_key),
  então o ensemble é função pura de (semente, grade, n_paths).
- euler_step_functional / integrate_functional: passo de Euler–Maruyama com
  drift/difusão avaliados sobre o histórico completo da trajetória.
- Estimate / mc_mean: média de Monte Carlo com erro padrão.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidArgumentError, NumericOverflowError

logger = logging.getLogger(__name__)

# Drift/difusão recebem (t, histórico até t) e devolvem arrays por caminho.
PathFunctional = Callable[[float, np.ndarray], np.ndarray]


# =============================================================================
# GRADE DE TEMPO
# =============================================================================

@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidArgumentError(f"horizonte deve ser positivo (recebido {self.horizon})")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgumentError(f"n_steps deve ser inteiro ≥ 1 (recebido {self.n_steps})")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.linspace(0.0, self.horizon, self.n_steps + 1)
        nodes.flags.writeable = False
        return nodes

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise InvalidArgumentError(f"fator {factor} não divide n_steps={self.n_steps}")
        return TimeGrid(self.horizon, self.n_steps // factor)

    def index_at(self, t: float) -> int:
        """Primeiro nó com t_k ≥ t (tempo 'encaixado' na grade)."""
        if t < 0 or t > self.horizon * (1 + 1e-12):
            raise InvalidArgumentError(f"t={t} fora de [0, {self.horizon}]")
        return int(min(self.n_steps, math.ceil(t / self.dt - 1e-9)))


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    return TimeGrid(float(horizon), int(n_steps))


# =============================================================================
# SEMENTES E ENSEMBLES
# =============================================================================

class Measure(str, Enum):
    P = "P"
    Q = "Q-tilde"


@dataclass(frozen=True)
class SeedSpec:
    """
    Semente mestra + rótulo de fluxo. O caminho i usa
    SeedSequence(master_seed, spawn_key=stream + (i,)), independente dos demais.
    """

    master_seed: int
    stream: Tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2**64):
            raise InvalidArgumentError("master_seed deve ser inteiro de 64 bits sem sinal")

    def path_rng(self, path_index: int) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed), spawn_key=self.stream + (int(path_index),))
        return np.random.Generator(np.random.PCG64(seq))

    def derive(self, label: int) -> "SeedSpec":
        """Fluxo auxiliar independente (ex.: Monte Carlo aninhado)."""
        return SeedSpec(self.master_seed, self.stream + (int(label),))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    grid: TimeGrid
    values: np.ndarray
    measure: Measure = Measure.P

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1] != self.grid.n_steps + 1 or values.shape[0] < 1 or values.shape[2] < 1:
            raise InvalidArgumentError(
                f"formato {values.shape} incompatível com (n_paths, {self.grid.n_steps + 1}, dim)"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("ensemble contém valores não finitos")
        values = values.view()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "measure", Measure(self.measure))

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)


def sample_brownian(
    grid: TimeGrid,
    dim: int,
    n_paths: int,
    seeds: SeedSpec,
    measure: Measure = Measure.P,
    workers: int = 1,
    first_path: int = 0,
) -> PathEnsemble:
    """
    Movimento Browniano dim-dimensional, W(0)=0, incrementos N(0, dt) independentes.
    Cada caminho consome o próprio fluxo (índice global first_path + i); com
    workers>1 os blocos de caminhos rodam num pool de threads e o resultado
    continua bit-idêntico.
    """
    if dim < 1 or n_paths < 1:
        raise InvalidArgumentError(f"dim e n_paths devem ser ≥ 1 (recebidos {dim}, {n_paths})")

    n = grid.n_steps
    draws = np.empty((n_paths, n, dim))

    def _fill(block: np.ndarray) -> None:
        for i in block:
            draws[i] = seeds.path_rng(first_path + i).standard_normal((n, dim))

    blocks = np.array_split(np.arange(n_paths), max(1, min(n_paths, 4 * int(workers))))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            list(pool.map(_fill, blocks))
    else:
        for block in blocks:
            _fill(block)

    values = np.zeros((n_paths, n + 1, dim))
    np.cumsum(draws * math.sqrt(grid.dt), axis=1, out=values[:, 1:, :])
    logger.debug("Browniano amostrado: %d caminhos × %d passos × dim %d", n_paths, n, dim)
    return PathEnsemble(grid, values, measure)


def coarsen(ensemble: PathEnsemble, factor: int) -> PathEnsemble:
    """Mesma trajetória numa grade mais grossa: incrementos somados em blocos de 'factor'."""
    coarse_grid = ensemble.grid.coarsen(factor)
    return PathEnsemble(coarse_grid, ensemble.values[:, ::factor, :], ensemble.measure)


# =============================================================================
# EULER–MARUYAMA
# =============================================================================

def _first_bad_path(arr: np.ndarray) -> int:
    arr = np.atleast_1d(arr)
    bad = np.flatnonzero((~np.isfinite(arr)).reshape(arr.shape[0], -1).any(axis=1))
    return int(bad[0]) if bad.size else 0


def euler_step_functional(
    state: np.ndarray,
    drift: PathFunctional,
    diffusion: PathFunctional,
    t: float,
    history: Optional[np.ndarray],
    dt: float,
    dW: np.ndarray,
    step: int = 0,
    what: str = "euler",
) -> np.ndarray:
    """
    Um passo: state + drift·dt + diffusion·dW.

    A difusão pode ter o formato do estado (ruído diagonal, produto elemento a
    elemento) ou um eixo a mais (matriz aplicada ao incremento).
    """
    state = np.asarray(state, dtype=float)
    b = np.asarray(drift(t, history), dtype=float)
    c = np.asarray(diffusion(t, history), dtype=float)
    dW = np.asarray(dW, dtype=float)

    with np.errstate(over="ignore", invalid="ignore"):
        if c.ndim == state.ndim + 1:
            noise = np.einsum("...ij,...j->...i", c, dW)
        else:
            noise = c * dW
        new_state = state + b * dt + noise

    if not np.all(np.isfinite(new_state)):
        raise NumericOverflowError(what, path=_first_bad_path(new_state), step=step)
    return new_state


def integrate_functional(
    grid: TimeGrid,
    x0: np.ndarray,
    drift: PathFunctional,
    diffusion: PathFunctional,
    increments: np.ndarray,
    what: str = "euler",
    start: int = 0,
) -> np.ndarray:
    """
    Integra dX = drift dt + diffusion dW a partir do nó 'start'.
    increments: (P, N, m). Retorna (P, N+1, d); nós anteriores a 'start' ficam em zero.
    """
    n_paths, n_steps = increments.shape[0], increments.shape[1]
    if n_steps != grid.n_steps:
        raise InvalidArgumentError("incrementos não batem com a grade")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,) + np.shape(x0)[-1:]).copy() \
        if np.ndim(x0) <= 1 else np.asarray(x0, dtype=float)
    out = np.zeros((n_paths, n_steps + 1) + x0.shape[1:])
    out[:, start] = x0
    nodes = grid.nodes
    for k in range(start, n_steps):
        out[:, k + 1] = euler_step_functional(
            out[:, k], drift, diffusion, nodes[k], out[:, start:k + 1],
            grid.dt, increments[:, k], step=k, what=what,
        )
    return out


# =============================================================================
# ESTIMATIVAS DE MONTE CARLO
# =============================================================================

@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_samples: int

    def z_score(self, target: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.value == target else math.inf
        return abs(self.value - target) / self.stderr

    def within(self, target: float, n_se: float = 3.0, atol: float = 0.0) -> bool:
        return abs(self.value - target) <= n_se * self.stderr + atol

    def as_dict(self) -> dict:
        return {"value": float(self.value), "stderr": float(self.stderr), "n_samples": int(self.n_samples)}


def mc_mean(samples: np.ndarray, weights: Optional[np.ndarray] = None) -> Estimate:
    """Média (ponderada por densidade, se houver) com erro padrão; redução em ordem fixa."""
    x = np.asarray(samples, dtype=float).ravel()
    if weights is not None:
        x = x * np.asarray(weights, dtype=float).ravel()
    n = x.size
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(np.mean(x)), se, n)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Inclinação do ajuste log(y) ~ log(x); nan se algum valor não for positivo."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
