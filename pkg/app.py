# -*- coding: utf-8 -*-
"""
app.py — CLI do motor de decomposição π̂ = π̃ + π̄.

    python app.py {simulate|myopic|hedge|decompose|verify|study} --config <ini>
                  [--out DIR] [--seed U64] [--steps N] [--paths M] [--log-level NIVEL]
    python app.py runs [--limit N]

Códigos de saída: 0 sucesso, 1 check falhou (verify), 2 configuração, 3 falha numérica.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from config import (
    RunConfig,
    build_grid,
    build_measure,
    build_model,
    build_regression_spec,
    build_seeds,
    build_truncation,
    build_utility,
    load_config,
)
from db import count_runs, list_runs, record_run
from errors import EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_OK, ConfigError, DecompositionError
from export import summary_text, write_artifacts
from hedging import decompose, hedge, solve_xstar
from market import SimulationBundle, moment_diagnostics, simulate_bundle_under_P, simulate_bundle_under_Q
from myopic import FixedTime, ThetaHitting, admissibility_report, check_budget_martingale, check_identity_eu1
from paths import Measure
from reports import build_decomposition_report, bundle_series, hedge_series, myopic_series
from studies import DEFAULT_LADDER, convergence_study, hitting_level, run_acceptance_suite

logger = logging.getLogger("app")

# ---- Versão do esquema dos artefatos (mude quando alterar colunas/chaves) ----
ARTIFACT_SCHEMA_VERSION = "1"

COMMANDS = ("simulate", "myopic", "hedge", "decompose", "verify", "study")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# =======================
# Helpers
# =======================

def _header(command: str, cfg: RunConfig) -> Dict[str, Any]:
    return {
        "command": command,
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seeds": {"master_seed": cfg.mc.master_seed, "stream": []},
        "config": cfg.echo(),
        "config_hash": cfg.config_hash(),
    }


def _bundle(cfg: RunConfig) -> SimulationBundle:
    model, grid, seeds = build_model(cfg), build_grid(cfg), build_seeds(cfg)
    if build_measure(cfg) == Measure.P:
        return simulate_bundle_under_P(model, grid, cfg.mc.n_paths, seeds, workers=cfg.mc.workers)
    return simulate_bundle_under_Q(model, grid, cfg.mc.n_paths, seeds, workers=cfg.mc.workers)


def _parse_ladder(items: Optional[Sequence[str]]) -> Optional[Dict[str, Tuple[float, ...]]]:
    """'degree=0,1,2,3' → {'degree': (0, 1, 2, 3)}."""
    if not items:
        return None
    ladder: Dict[str, Tuple[float, ...]] = {}
    for item in items:
        name, sep, values = item.partition("=")
        name = name.strip().lower()
        if not sep or name not in DEFAULT_LADDER:
            raise ConfigError(f"escada inválida {item!r} (use dt=, degree=, truncation= ou paths=)", field="--ladder")
        try:
            ladder[name] = tuple(float(v) for v in values.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"valores inválidos em {item!r}", field="--ladder")
        if not ladder[name]:
            raise ConfigError(f"escada {name} vazia", field="--ladder")
    return ladder


# =======================
# Comandos
# =======================

def _cmd_simulate(cfg: RunConfig) -> Tuple[int, Dict[str, pd.DataFrame], Dict[str, Any]]:
    bundle = _bundle(cfg)
    series = bundle_series(bundle)
    moments = moment_diagnostics(bundle)
    summary = {
        "n_paths": bundle.n_paths,
        "n_steps": bundle.grid.n_steps,
        "measure": bundle.simulated_under.value,
        "model": bundle.model.mpr.name,
        "z_martingale_max_z": float(series["z_score"].replace(float("inf"), float("nan")).max()),
        "sigma_condition_number": bundle.model.condition_number,
        "moments": moments,
    }
    return EXIT_OK, {"bundle": series, "moments": moments}, summary


def _cmd_myopic(cfg: RunConfig) -> Tuple[int, Dict[str, pd.DataFrame], Dict[str, Any]]:
    bundle = _bundle(cfg)
    utility = build_utility(cfg)
    x = cfg.model.wealth
    eu1 = check_identity_eu1(x, bundle, utility)
    budget = {}
    horizon = bundle.grid.horizon
    rules = (FixedTime(horizon / 2), FixedTime(horizon), ThetaHitting(hitting_level(cfg, bundle.model)))
    for rule in rules:
        est = check_budget_martingale(x, bundle, utility, rule)
        budget[rule.describe()] = {**est.as_dict(), "z": est.z_score(x)}
    adm = admissibility_report(x, bundle, utility)
    summary = {
        "x": x,
        "utility": utility.describe(),
        "conforming": utility.conforming,
        "n_paths": bundle.n_paths,
        "n_steps": bundle.grid.n_steps,
        "eu1": eu1.as_dict(),
        "budget": budget,
        "admissibility": {"violations": adm.n_violations, "min_value": adm.min_value, "locations": adm.locations},
    }
    return EXIT_OK, {"myopic": myopic_series(x, bundle, utility, eu1)}, summary


def _cmd_hedge(cfg: RunConfig) -> Tuple[int, Dict[str, pd.DataFrame], Dict[str, Any]]:
    bundle = _bundle(cfg)
    utility = build_utility(cfg)
    xstar = solve_xstar(cfg.model.wealth, bundle, utility)
    result = hedge(xstar.x_star, bundle, utility, build_regression_spec(cfg),
                   cfg.hedging.anchor_stride, build_truncation(cfg))
    summary = {
        "xstar": xstar.as_dict(),
        "degree": cfg.hedging.degree,
        "n_anchors": int(len(result.beta.anchors)),
        "representation": result.representation.as_dict(),
        "ridge_nodes": int((result.beta.ridge_used > 0).sum()),
        "max_condition": float(result.beta.condition.max()) if len(result.beta.condition) else 0.0,
        "truncation": result.truncation.describe() if result.truncation is not None else "off",
        "lambda_short_circuited": result.lam.short_circuited,
    }
    series = {
        "hedge": hedge_series(xstar.x_star, bundle, utility, result),
        "tower": result.representation.tower,
    }
    return EXIT_OK, series, summary


def _cmd_decompose(cfg: RunConfig) -> Tuple[int, Dict[str, pd.DataFrame], Dict[str, Any]]:
    bundle = _bundle(cfg)
    utility = build_utility(cfg)
    result = decompose(
        cfg.model.wealth, bundle.model, utility, bundle.grid, bundle.n_paths, build_seeds(cfg),
        build_regression_spec(cfg), cfg.hedging.anchor_stride, build_truncation(cfg), bundle=bundle,
    )
    eu1 = check_identity_eu1(result.xstar.x_star, bundle, utility)
    report = build_decomposition_report(
        result, utility, eu1,
        seeds={"master_seed": cfg.mc.master_seed, "stream": []},
        config=cfg.echo(),
    )
    summary = report.summary()
    summary.pop("header")
    return EXIT_OK, {"decomposition": report.series}, summary


def _cmd_verify(cfg: RunConfig) -> Tuple[int, Dict[str, pd.DataFrame], Dict[str, Any]]:
    suite = run_acceptance_suite(cfg)
    table = suite.to_frame()
    summary = {
        "passed": suite.passed,
        "n_checks": len(suite.checks),
        "n_failed": int(sum(1 for c in suite.checks if c.gating and not c.passed)),
        "checks": [c.as_dict() for c in suite.checks],
    }
    series = {"checks": table, **suite.series}
    return (EXIT_OK if suite.passed else EXIT_CHECK_FAILED), series, summary


def _cmd_study(cfg: RunConfig, ladder=None) -> Tuple[int, Dict[str, pd.DataFrame], Dict[str, Any]]:
    study = convergence_study(cfg, ladder)
    summary = {"slopes": study.slopes}
    return EXIT_OK, {"convergence": study.table, "slopes": study.slopes}, summary


_HANDLERS = {
    "simulate": _cmd_simulate,
    "myopic": _cmd_myopic,
    "hedge": _cmd_hedge,
    "decompose": _cmd_decompose,
    "verify": _cmd_verify,
}


def run_command(command: str, cfg: RunConfig, ladder=None) -> Tuple[int, List[str]]:
    """Executa o comando, grava os artefatos em cfg.outputs.directory e devolve (status, arquivos)."""
    if command not in COMMANDS:
        raise ConfigError(f"comando desconhecido {command!r}", field="command")
    if command == "study":
        status, series, body = _cmd_study(cfg, ladder)
    else:
        status, series, body = _HANDLERS[command](cfg)

    summary = {"header": _header(command, cfg), **body}
    written = write_artifacts(cfg.outputs.directory, series, summary, cfg.outputs.formats)

    if cfg.outputs.ledger:
        record_run(command, cfg.config_hash(), cfg.mc.master_seed, cfg.mc.n_paths, cfg.grid.n_steps,
                   status, summary_text(summary))
    logger.info("Comando %s concluído (status %d)", command, status)
    return status, written


# =======================
# CLI
# =======================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="Decomposição de portfólio por Monte Carlo")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (padrão: env DECOMP_LOG_LEVEL ou INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--log-level", default=argparse.SUPPRESS)
        if name == "study":
            p.add_argument("--ladder", action="append", default=None,
                           help="ex.: --ladder dt=4 --ladder degree=0,1,2,3")

    runs = sub.add_parser("runs", help="lista o ledger de execuções")
    runs.add_argument("--limit", type=int, default=20)
    runs.add_argument("--log-level", default=argparse.SUPPRESS)
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.environ.get("DECOMP_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT, force=True)


def _show_runs(limit: int) -> int:
    df = list_runs(limit=limit)
    print(f"{count_runs()} execuções no ledger")
    if not df.empty:
        print(df.drop(columns=["summary_json"]).to_string(index=False))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG_ERROR
    configure_logging(args.log_level)

    try:
        if args.command == "runs":
            return _show_runs(args.limit)
        cfg = load_config(args.config).with_overrides(args.seed, args.steps, args.paths, args.out)
        ladder = _parse_ladder(getattr(args, "ladder", None))
        status, _ = run_command(args.command, cfg, ladder)
        return status
    except DecompositionError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
