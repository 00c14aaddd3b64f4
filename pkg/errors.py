# -*- coding: utf-8 -*-
"""
errors.py — Hierarquia de exceções do motor de decomposição.

Cada classe carrega o código de saída usado pela CLI (app.py):
- 2: argumento/configuração inválida
- 3: falha numérica (overflow, regressão degenerada, raiz não encontrada)

Falhas de verificação (verify) não são exceções: viram linhas da tabela de checks
e resultam em código 1.
"""

from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_ERROR = 3


class DecompositionError(Exception):
    """Base de todos os erros do pipeline."""

    exit_code = EXIT_NUMERIC_ERROR


class InvalidArgumentError(DecompositionError, ValueError):
    exit_code = EXIT_CONFIG_ERROR


class ConfigError(DecompositionError):
    """Erro de parsing (linha/chave) ou de validação (caminho do campo)."""

    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        prefix = []
        if field:
            prefix.append(field)
        if line is not None:
            prefix.append(f"linha {line}")
        full = f"{' @ '.join(prefix)}: {message}" if prefix else message
        super().__init__(full)
        self.field = field
        self.line = line


class NumericOverflowError(DecompositionError, FloatingPointError):
    """Valor não finito durante a integração; informa (caminho, passo)."""

    def __init__(self, what: str, path: int, step: int):
        super().__init__(f"{what}: valor não finito no caminho {path}, passo {step}")
        self.path = int(path)
        self.step = int(step)


class EstimationError(DecompositionError):
    def __init__(self, message: str, node: int):
        super().__init__(f"nó {node}: {message}")
        self.node = int(node)


class RootNotFoundError(DecompositionError):
    """Sem troca de sinal no intervalo de busca de x* (x* não existe no intervalo)."""

    def __init__(self, lo: float, hi: float, h_lo: float, h_hi: float):
        super().__init__(
            f"sem troca de sinal em [{lo:.6g}, {hi:.6g}]: h(lo)={h_lo:.6g}, h(hi)={h_hi:.6g}"
        )
        self.lo, self.hi = lo, hi
        self.h_lo, self.h_hi = h_lo, h_hi
