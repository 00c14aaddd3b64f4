# -*- coding: utf-8 -*-
"""
config.py — Configuração de execução (RunConfig) em formato INI.

Principais recursos:
- Uma seção por bloco: [model], [utility], [grid], [mc], [hedging], [outputs], [verify].
- Vetores separados por vírgula; matrizes com linhas separadas por ';'
  (sigma = 0.2, 0.0; 0.05, 0.3).
- Chave ou seção desconhecida → ConfigError nomeando a chave; chave duplicada
  ou linha malformada → ConfigError com o número da linha.
- Validação com caminho do campo ("utility.p: p deve satisfazer p<1, p≠0").
- echo(): configuração completa (com defaults) como dict aninhado, gravada em
  todo summary.json; config_hash() identifica a execução no ledger.
- Construtores build_* para os objetos de domínio.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from errors import ConfigError, InvalidArgumentError
from hedging import RegressionSpec, TruncationSetting
from market import ConstantMPR, MarketModel, OUMPR
from paths import Measure, SeedSpec, TimeGrid
from utility import UtilityModel, make_utility

logger = logging.getLogger(__name__)


# =============================================================================
# CONVERSORES
# =============================================================================

def _text(raw: str) -> str:
    return raw.strip()


def _lower(raw: str) -> str:
    return raw.strip().lower()


def _float(raw: str) -> float:
    return float(raw.strip())


def _int(raw: str) -> int:
    value = float(raw.strip())
    if not value.is_integer():
        raise ValueError(f"esperado inteiro, recebido {raw.strip()!r}")
    return int(value)


def _bool(raw: str) -> bool:
    key = raw.strip().lower()
    if key in ("1", "on", "yes", "true", "sim"):
        return True
    if key in ("0", "off", "no", "false", "nao", "não"):
        return False
    raise ValueError(f"esperado on/off, recebido {raw.strip()!r}")


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(p) for p in raw.split(",") if p.strip())


def _ints(raw: str) -> Tuple[int, ...]:
    return tuple(_int(p) for p in raw.split(",") if p.strip())


def _words(raw: str) -> Tuple[str, ...]:
    return tuple(p.strip().lower() for p in raw.split(",") if p.strip())


def _matrix(raw: str) -> Tuple[Tuple[float, ...], ...]:
    rows = tuple(_floats(r) for r in raw.split(";") if r.strip())
    if len({len(r) for r in rows}) > 1:
        raise ValueError("linhas da matriz com tamanhos diferentes")
    return rows


def _opt_float(raw: str) -> Optional[float]:
    key = raw.strip().lower()
    return None if key in ("", "none") else float(key)


def _truncation(raw: str) -> str:
    key = raw.strip().lower()
    if key in ("off", "auto"):
        return key
    float(key)
    return key


def _key(parse: Callable[[str], Any], default: Any):
    return field(default=default, metadata={"parse": parse})


# =============================================================================
# BLOCOS
# =============================================================================

@dataclass(frozen=True)
class ModelConfig:
    mpr: str = _key(_lower, "constant")
    theta: Tuple[float, ...] = _key(_floats, (0.4,))
    alpha: float = _key(_float, 0.5)
    beta: float = _key(_float, 1.0)
    v: float = _key(_float, 0.3)
    u0: float = _key(_float, 0.2)
    sigma: Tuple[Tuple[float, ...], ...] = _key(_matrix, ((0.2,),))
    s0: Tuple[float, ...] = _key(_floats, (1.0,))
    wealth: float = _key(_float, 1.0)


@dataclass(frozen=True)
class UtilityConfig:
    name: str = _key(_lower, "log")
    p: Optional[float] = _key(_opt_float, None)
    a: Optional[float] = _key(_opt_float, None)


@dataclass(frozen=True)
class GridConfig:
    horizon: float = _key(_float, 1.0)
    n_steps: int = _key(_int, 256)


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = _key(_int, 10000)
    master_seed: int = _key(_int, 20240601)
    measure: str = _key(_lower, "q")
    workers: int = _key(_int, 1)


@dataclass(frozen=True)
class HedgingConfig:
    degree: int = _key(_int, 3)
    ridge: float = _key(_float, 0.0)
    anchor_stride: int = _key(_int, 1)
    truncation: str = _key(_truncation, "off")
    cond_limit: float = _key(_float, 1e10)


@dataclass(frozen=True)
class OutputsConfig:
    directory: str = _key(_text, "out")
    formats: Tuple[str, ...] = _key(_words, ("csv", "json"))
    ledger: bool = _key(_bool, False)


@dataclass(frozen=True)
class VerifyConfig:
    eu1_paths: int = _key(_int, 20000)
    eu1_finest_steps: int = _key(_int, 2048)
    eu1_levels: int = _key(_int, 4)
    budget_paths: int = _key(_int, 100000)
    budget_steps: int = _key(_int, 64)
    hitting_level: Optional[float] = _key(_opt_float, None)
    nested_probe_nodes: int = _key(_int, 3)
    nested_probe_states: int = _key(_int, 4)
    nested_inner_paths: int = _key(_int, 2000)
    truncation_ladder: Tuple[float, ...] = _key(_floats, (4.0, 8.0, 16.0))


_SECTIONS: Dict[str, type] = {
    "model": ModelConfig,
    "utility": UtilityConfig,
    "grid": GridConfig,
    "mc": MCConfig,
    "hedging": HedgingConfig,
    "outputs": OutputsConfig,
    "verify": VerifyConfig,
}

OUTPUT_FORMATS = ("csv", "json", "xlsx")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    utility: UtilityConfig = UtilityConfig()
    grid: GridConfig = GridConfig()
    mc: MCConfig = MCConfig()
    hedging: HedgingConfig = HedgingConfig()
    outputs: OutputsConfig = OutputsConfig()
    verify: VerifyConfig = VerifyConfig()

    def echo(self) -> Dict[str, Dict[str, Any]]:
        """Config completa; tuplas viram listas para o JSON."""
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        payload = json.dumps(self.echo(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def with_overrides(
        self,
        seed: Optional[int] = None,
        steps: Optional[int] = None,
        paths: Optional[int] = None,
        out: Optional[str] = None,
    ) -> "RunConfig":
        """Flags da CLI têm precedência sobre o arquivo."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, master_seed=int(seed)))
        if paths is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, n_paths=int(paths)))
        if steps is not None:
            cfg = replace(cfg, grid=replace(cfg.grid, n_steps=int(steps)))
        if out is not None:
            cfg = replace(cfg, outputs=replace(cfg.outputs, directory=str(out)))
        validate_config(cfg)
        return cfg


# =============================================================================
# PARSING
# =============================================================================

def _line_of(text: str, section: str, key: str) -> Optional[int]:
    """Linha da chave (ou do cabeçalho, com key vazia) para mensagens de erro."""
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip().lower()
            if current == section and not key:
                return number
        elif current == section and stripped.split("=", 1)[0].strip().lower() == key:
            return number
    return None


def _read_ini(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        inline_comment_prefixes=(";", "#"),
        comment_prefixes=(";", "#"),
        strict=True,
        interpolation=None,
        default_section="__defaults__",
    )
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"chave duplicada '{e.option}'", field=f"{e.section}.{e.option}", line=e.lineno)
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"seção duplicada [{e.section}]", line=e.lineno)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("linha fora de seção", line=e.lineno)
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError("linha malformada (esperado 'chave = valor')", line=lineno)
    return parser


def parse_config(text: str) -> RunConfig:
    """Texto INI → RunConfig validada. Nada é ignorado em silêncio."""
    parser = _read_ini(text)
    blocks: Dict[str, Any] = {}
    for section in parser.sections():
        name = section.strip().lower()
        cls = _SECTIONS.get(name)
        if cls is None:
            raise ConfigError(f"seção desconhecida [{section}]", field=section, line=_line_of(text, name, ""))
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            path = f"{name}.{key}"
            spec = known.get(key)
            if spec is None:
                raise ConfigError(f"chave desconhecida '{key}'", field=path, line=_line_of(text, name, key))
            try:
                values[key] = spec.metadata["parse"](raw)
            except ValueError as e:
                raise ConfigError(f"valor inválido {raw.strip()!r} ({e})", field=path, line=_line_of(text, name, key))
        blocks[name] = cls(**values)

    cfg = RunConfig(**blocks)
    validate_config(cfg)
    return cfg


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"arquivo não encontrado: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    cfg = parse_config(text)
    logger.info("Configuração carregada de %s (hash %s)", path, cfg.config_hash())
    return cfg


# =============================================================================
# VALIDAÇÃO
# =============================================================================

def _require(ok: bool, path: str, message: str) -> None:
    if not ok:
        raise ConfigError(message, field=path)


def validate_config(cfg: RunConfig) -> None:
    m = cfg.model
    _require(m.mpr in ("constant", "ou"), "model.mpr", f"variante desconhecida {m.mpr!r} (constant|ou)")
    if m.mpr == "constant":
        _require(len(m.theta) >= 1 and all(math.isfinite(v) for v in m.theta), "model.theta", "theta deve ser vetor finito")
        n = len(m.theta)
    else:
        _require(m.beta > 0, "model.beta", "beta deve ser > 0")
        n = 1
    sigma = np.asarray(m.sigma, dtype=float)
    _require(sigma.shape == (n, n), "model.sigma", f"sigma deve ser {n}×{n} (recebido {sigma.shape})")
    _require(bool(np.all(np.isfinite(sigma))) and np.linalg.matrix_rank(sigma) == n, "model.sigma", "sigma deve ser não singular")
    _require(len(m.s0) == n and all(v > 0 for v in m.s0), "model.s0", f"s0 deve ter {n} preços positivos")
    _require(m.wealth > 0, "model.wealth", "riqueza inicial deve ser > 0")

    u = cfg.utility
    _require(u.name in ("log", "power", "crra", "exponential", "cara"), "utility.name", f"utilidade desconhecida {u.name!r}")
    if u.name in ("power", "crra"):
        _require(u.p is not None, "utility.p", "utilidade power exige p")
        _require(u.p < 1 and u.p != 0, "utility.p", "p deve satisfazer p<1, p≠0")
    if u.name in ("exponential", "cara"):
        _require(u.a is not None and u.a > 0, "utility.a", "a deve ser > 0")

    _require(cfg.grid.horizon > 0, "grid.horizon", "horizonte deve ser > 0")
    _require(cfg.grid.n_steps >= 1, "grid.n_steps", "n_steps deve ser ≥ 1")

    _require(cfg.mc.n_paths >= 2, "mc.n_paths", "n_paths deve ser ≥ 2")
    _require(0 <= cfg.mc.master_seed < 2**64, "mc.master_seed", "semente deve ser inteiro de 64 bits sem sinal")
    _require(cfg.mc.measure in ("p", "q"), "mc.measure", "medida deve ser p ou q")
    _require(cfg.mc.workers >= 1, "mc.workers", "workers deve ser ≥ 1")

    h = cfg.hedging
    _require(h.degree >= 0, "hedging.degree", "grau da base deve ser ≥ 0")
    _require(h.ridge >= 0, "hedging.ridge", "ridge deve ser ≥ 0")
    _require(h.anchor_stride >= 1, "hedging.anchor_stride", "anchor_stride deve ser ≥ 1")
    _require(h.cond_limit > 1, "hedging.cond_limit", "cond_limit deve ser > 1")
    if h.truncation not in ("off", "auto"):
        _require(float(h.truncation) > 0, "hedging.truncation", "multiplicador de truncamento deve ser > 0")

    unknown = [f for f in cfg.outputs.formats if f not in OUTPUT_FORMATS]
    _require(not unknown, "outputs.formats", f"formatos desconhecidos {unknown} (csv|json|xlsx)")

    v = cfg.verify
    _require(v.eu1_levels >= 2, "verify.eu1_levels", "eu1_levels deve ser ≥ 2")
    _require(v.eu1_finest_steps % 2 ** (v.eu1_levels - 1) == 0, "verify.eu1_finest_steps",
             "eu1_finest_steps deve ser divisível por 2^(eu1_levels−1)")
    _require(len(v.truncation_ladder) >= 2 and all(k > 0 for k in v.truncation_ladder),
             "verify.truncation_ladder", "escada de truncamento precisa de ≥ 2 níveis positivos")
    for name in ("eu1_paths", "budget_paths", "budget_steps", "nested_probe_states", "nested_inner_paths"):
        _require(getattr(v, name) >= 2, f"verify.{name}", f"{name} deve ser ≥ 2")


# =============================================================================
# CONSTRUTORES
# =============================================================================

def build_model(cfg: RunConfig) -> MarketModel:
    m = cfg.model
    mpr = ConstantMPR(m.theta) if m.mpr == "constant" else OUMPR(m.alpha, m.beta, m.v, m.u0)
    try:
        return MarketModel(np.array(m.sigma, dtype=float), np.array(m.s0, dtype=float), mpr)
    except InvalidArgumentError as e:
        raise ConfigError(str(e), field="model")


def build_utility(cfg: RunConfig) -> UtilityModel:
    try:
        return make_utility(cfg.utility.name, p=cfg.utility.p, a=cfg.utility.a)
    except InvalidArgumentError as e:
        raise ConfigError(str(e), field="utility")


def build_grid(cfg: RunConfig) -> TimeGrid:
    return TimeGrid(float(cfg.grid.horizon), int(cfg.grid.n_steps))


def build_seeds(cfg: RunConfig) -> SeedSpec:
    return SeedSpec(int(cfg.mc.master_seed))


def build_measure(cfg: RunConfig) -> Measure:
    return Measure.P if cfg.mc.measure == "p" else Measure.Q


def build_regression_spec(cfg: RunConfig, degree: Optional[int] = None) -> RegressionSpec:
    h = cfg.hedging
    return RegressionSpec(degree=h.degree if degree is None else int(degree), ridge=h.ridge, cond_limit=h.cond_limit)


def build_truncation(cfg: RunConfig) -> TruncationSetting:
    t = cfg.hedging.truncation
    return t if t in ("off", "auto") else float(t)
