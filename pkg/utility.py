# -*- coding: utf-8 -*-
"""
utility.py — Famílias de utilidade com inversa do marginal I = (U′)^{-1}
e o integrando de correção F(z) = ½ I″(z) z² + I′(z) z.

Derivadas sempre em forma fechada por variante; diferenças finitas só nos testes.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from errors import InvalidArgumentError
from paths import loglog_slope

logger = logging.getLogger(__name__)

ArrayLike = np.ndarray


class UtilityModel(ABC):
    name: str = "abstract"
    # Satisfaz as condições de Inada (hipóteses padrão do modelo)
    conforming: bool = True

    @abstractmethod
    def U(self, x): ...

    @abstractmethod
    def dU(self, x): ...

    @abstractmethod
    def d2U(self, x): ...

    @abstractmethod
    def I(self, y): ...

    @abstractmethod
    def dI(self, y): ...

    @abstractmethod
    def d2I(self, y): ...

    @abstractmethod
    def d3I(self, y): ...

    def correction_integrand(self, z):
        z = _positive(z)
        return 0.5 * self.d2I(z) * z**2 + self.dI(z) * z

    def correction_derivative(self, z):
        """F′(z) = ½ I‴ z² + 2 I″ z + I′."""
        z = _positive(z)
        return 0.5 * self.d3I(z) * z**2 + 2.0 * self.d2I(z) * z + self.dI(z)

    def risk_tolerance(self, x):
        """Tolerância absoluta ao risco −U′/U″."""
        return -self.dU(x) / self.d2U(x)

    def params(self) -> dict:
        return {}

    def describe(self) -> str:
        extra = ", ".join(f"{k}={v:g}" for k, v in self.params().items())
        return f"{self.name}({extra})" if extra else self.name


def _positive(z):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise InvalidArgumentError("F(z) exige z > 0")
    return z


@dataclass(frozen=True)
class LogUtility(UtilityModel):
    name = "log"

    def U(self, x):
        return np.log(x)

    def dU(self, x):
        return 1.0 / np.asarray(x, dtype=float)

    def d2U(self, x):
        return -1.0 / np.asarray(x, dtype=float) ** 2

    def I(self, y):
        return 1.0 / np.asarray(y, dtype=float)

    def dI(self, y):
        return -1.0 / np.asarray(y, dtype=float) ** 2

    def d2I(self, y):
        return 2.0 / np.asarray(y, dtype=float) ** 3

    def d3I(self, y):
        return -6.0 / np.asarray(y, dtype=float) ** 4

    # Identicamente nulos: sem ruído de arredondamento a jusante
    def correction_integrand(self, z):
        return np.zeros_like(_positive(z))

    def correction_derivative(self, z):
        return np.zeros_like(_positive(z))


@dataclass(frozen=True)
class PowerUtility(UtilityModel):
    """CRRA x^p/p, p < 1, p ≠ 0. I(y) = y^q com q = 1/(p−1)."""

    p: float
    name = "power"

    def __post_init__(self):
        p = float(self.p)
        if not (p < 1 and p != 0 and math.isfinite(p)):
            raise InvalidArgumentError("p deve satisfazer p<1, p≠0")
        object.__setattr__(self, "p", p)

    @property
    def q(self) -> float:
        return 1.0 / (self.p - 1.0)

    @property
    def k0(self) -> float:
        """F(z) = k0·z^q, k0 = p/(2(p−1)²)."""
        return self.p / (2.0 * (self.p - 1.0) ** 2)

    def U(self, x):
        return np.asarray(x, dtype=float) ** self.p / self.p

    def dU(self, x):
        return np.asarray(x, dtype=float) ** (self.p - 1.0)

    def d2U(self, x):
        return (self.p - 1.0) * np.asarray(x, dtype=float) ** (self.p - 2.0)

    def I(self, y):
        return np.asarray(y, dtype=float) ** self.q

    def dI(self, y):
        q = self.q
        return q * np.asarray(y, dtype=float) ** (q - 1.0)

    def d2I(self, y):
        q = self.q
        return q * (q - 1.0) * np.asarray(y, dtype=float) ** (q - 2.0)

    def d3I(self, y):
        q = self.q
        return q * (q - 1.0) * (q - 2.0) * np.asarray(y, dtype=float) ** (q - 3.0)

    def correction_integrand(self, z):
        return self.k0 * _positive(z) ** self.q

    def correction_derivative(self, z):
        return self.k0 * self.q * _positive(z) ** (self.q - 1.0)

    def params(self) -> dict:
        return {"p": self.p}


@dataclass(frozen=True)
class ExponentialUtility(UtilityModel):
    """
    CARA −e^{−ax}/a. U′(0+) = a é finito: fora das hipóteses padrão.
    F ≡ −1/(2a) pela fórmula de F.
    """

    a: float
    name = "exponential"
    conforming = False

    def __post_init__(self):
        a = float(self.a)
        if not (a > 0 and math.isfinite(a)):
            raise InvalidArgumentError("a deve ser > 0")
        object.__setattr__(self, "a", a)

    def U(self, x):
        return -np.exp(-self.a * np.asarray(x, dtype=float)) / self.a

    def dU(self, x):
        return np.exp(-self.a * np.asarray(x, dtype=float))

    def d2U(self, x):
        return -self.a * np.exp(-self.a * np.asarray(x, dtype=float))

    def I(self, y):
        return -np.log(y) / self.a

    def dI(self, y):
        return -1.0 / (self.a * np.asarray(y, dtype=float))

    def d2I(self, y):
        return 1.0 / (self.a * np.asarray(y, dtype=float) ** 2)

    def d3I(self, y):
        return -2.0 / (self.a * np.asarray(y, dtype=float) ** 3)

    def correction_integrand(self, z):
        return np.full_like(_positive(z), -0.5 / self.a)

    def correction_derivative(self, z):
        return np.zeros_like(_positive(z))

    def params(self) -> dict:
        return {"a": self.a}


def correction_integrand(u: UtilityModel, z) -> np.ndarray:
    return u.correction_integrand(z)


def make_utility(name: str, p: Optional[float] = None, a: Optional[float] = None) -> UtilityModel:
    key = (name or "").strip().lower()
    if key == "log":
        return LogUtility()
    if key in ("power", "crra"):
        if p is None:
            raise InvalidArgumentError("utilidade power exige p")
        return PowerUtility(p)
    if key in ("exponential", "cara"):
        if a is None:
            raise InvalidArgumentError("utilidade exponential exige a")
        return ExponentialUtility(a)
    raise InvalidArgumentError(f"utilidade desconhecida: {name!r}")


# =============================================================================
# VALIDAÇÃO
# =============================================================================

@dataclass
class UtilityValidationReport:
    utility: str
    inada_zero: bool
    inada_infinity: bool
    inverse_decay: bool
    inversion_max_residual: float
    inversion_ok: bool
    monotone_ok: bool
    growth_alpha: float
    growth_k1: float
    growth_ok: bool
    messages: List[str] = field(default_factory=list)

    @property
    def conforming(self) -> bool:
        return self.inada_zero and self.inada_infinity and self.inverse_decay and self.inversion_ok and self.monotone_ok

    def to_frame(self) -> pd.DataFrame:
        checks = {
            "inada_zero": self.inada_zero,
            "inada_infinity": self.inada_infinity,
            "inverse_decay": self.inverse_decay,
            "inversion": self.inversion_ok,
            "monotone": self.monotone_ok,
            "growth": self.growth_ok,
        }
        return pd.DataFrame({"check": list(checks), "passed": list(checks.values())})


def _strictly_decreasing(values: np.ndarray) -> bool:
    return bool(np.all(np.diff(values) < 0))


def validate_utility(
    u: UtilityModel,
    x_grid: Optional[np.ndarray] = None,
    y_grid: Optional[np.ndarray] = None,
    slope_tol: float = 1e-2,
) -> UtilityValidationReport:
    """
    Relatório (sem exceções): tendências de Inada, resíduo de inversão,
    monotonicidade e ajuste do limite de crescimento
    max(y²|I″|, −yI′, I) < k1·y^{−α}.
    """
    x_grid = np.logspace(-4, 4, 81) if x_grid is None else np.asarray(x_grid, dtype=float)
    y_grid = np.logspace(-3, 3, 61) if y_grid is None else np.asarray(y_grid, dtype=float)
    messages: List[str] = []

    with np.errstate(all="ignore"):
        # U′(0+) = ∞: crescimento polinomial ao encolher x
        small = np.array([1e-2, 1e-4, 1e-6, 1e-8])
        du_small = u.dU(small)
        inada_zero = bool(np.all(np.diff(du_small) > 0)) and loglog_slope(small, du_small) <= -slope_tol
        if not inada_zero:
            messages.append("U′(0+) finito: condição de Inada em 0 falha")

        # U′(∞) = 0
        large = np.array([1e2, 1e4, 1e6, 1e8])
        du_large = u.dU(large)
        positive = du_large[du_large > 0]
        inada_infinity = bool(np.all(np.diff(du_large) <= 0)) and (
            du_large[-1] <= 1e-3 * float(u.dU(1.0)) or loglog_slope(large[du_large > 0], positive) <= -slope_tol
        )
        if not inada_infinity:
            messages.append("U′(∞) ≠ 0")

        # I(y) → 0 quando y cresce
        i_large = u.I(large)
        inverse_decay = bool(np.all(i_large > 0) and np.all(np.diff(i_large) < 0))
        if not inverse_decay:
            messages.append("I(y) não decai a 0 para y grande")

        du = u.dU(x_grid)
        usable = np.isfinite(du) & (du > np.finfo(float).tiny)
        residual = np.abs(u.I(du[usable]) - x_grid[usable]) / (1.0 + x_grid[usable])
        inversion_max = float(np.max(residual)) if residual.size else float("nan")
        inversion_ok = bool(residual.size) and inversion_max <= 1e-10
        if usable.sum() < x_grid.size:
            messages.append(f"inversão avaliada em {int(usable.sum())}/{x_grid.size} pontos (U′ sem representação)")

        monotone_ok = _strictly_decreasing(du[usable]) and _strictly_decreasing(u.I(y_grid))

        growth = np.maximum.reduce([y_grid**2 * np.abs(u.d2I(y_grid)), -y_grid * u.dI(y_grid), u.I(y_grid)])
    slope = loglog_slope(y_grid, growth)
    alpha = -slope
    if np.isfinite(alpha) and alpha > 0:
        scaled = growth * y_grid**alpha
        k1 = float(np.max(scaled) * (1.0 + 1e-6))
        log_resid = np.log(scaled) - np.mean(np.log(scaled))
        growth_ok = bool(np.max(np.abs(log_resid)) <= 1e-3)
    else:
        k1, growth_ok = float("nan"), False
    if not growth_ok:
        messages.append("limite de crescimento em lei de potência não se ajusta")

    report = UtilityValidationReport(
        utility=u.describe(),
        inada_zero=inada_zero,
        inada_infinity=inada_infinity,
        inverse_decay=inverse_decay,
        inversion_max_residual=inversion_max,
        inversion_ok=inversion_ok,
        monotone_ok=monotone_ok,
        growth_alpha=float(alpha),
        growth_k1=k1,
        growth_ok=growth_ok,
        messages=messages,
    )
    if not report.conforming:
        logger.warning("Utilidade %s fora das hipóteses padrão: %s", u.describe(), "; ".join(messages))
    return report
