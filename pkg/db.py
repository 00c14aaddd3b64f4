# -*- coding: utf-8 -*-
"""
db.py — Ledger de execuções em SQLite (opcional, [outputs] ledger = on)

Principais recursos:
- Diretório do ledger: DECOMP_DB_DIR via env -> ./data -> /tmp, criado só na
  primeira gravação.
- Uma engine por diretório, com o esquema criado na primeira conexão (WAL).
- Tabela runs: comando, hash da config, semente, n_paths, n_steps, status de saída,
  resumo JSON e created_at. O timestamp vive só aqui, nunca nos artefatos.
- record_run, list_runs, count_runs, delete_all_runs.
"""

from __future__ import annotations

import logging
import math
import os
import tempfile
from datetime import datetime, timezone
from typing import Optional

import pandas as pd
from sqlalchemy import create_engine, event, text
from sqlalchemy.engine import Engine

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURAÇÃO DO LEDGER
# =============================================================================

BASE_DIR = os.path.abspath(os.path.dirname(__file__))
DB_FILENAME = "runs.db"
DB_DIR = os.environ.get("DECOMP_DB_DIR") or os.path.join(BASE_DIR, "data")

_ENGINE: Optional[Engine] = None

_SCHEMA = (
    """
    CREATE TABLE IF NOT EXISTS runs (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        command      TEXT NOT NULL,
        config_hash  TEXT NOT NULL,
        master_seed  TEXT NOT NULL,
        n_paths      INTEGER,
        n_steps      INTEGER,
        exit_status  INTEGER NOT NULL,
        summary_json TEXT,
        created_at   TEXT
    )
    """,
    "CREATE INDEX IF NOT EXISTS ix_runs_config ON runs (config_hash, master_seed)",
)


def set_db_dir(path: str) -> str:
    """Aponta o ledger para outro diretório (descarta a engine atual)."""
    global DB_DIR
    dispose_engine()
    DB_DIR = path
    return db_path()


def db_path() -> str:
    return os.path.join(DB_DIR, DB_FILENAME)


def _writable_dir() -> str:
    """DB_DIR, ou um diretório temporário quando DB_DIR não pode ser criado/gravado."""
    try:
        os.makedirs(DB_DIR, exist_ok=True)
        if os.access(DB_DIR, os.W_OK):
            return DB_DIR
    except OSError:
        pass
    fallback = os.path.join(tempfile.gettempdir(), "decomposicao_db")
    os.makedirs(fallback, exist_ok=True)
    logger.warning("Ledger em %s não é gravável; usando %s", DB_DIR, fallback)
    return fallback


def _on_connect(dbapi_conn, _record) -> None:
    cur = dbapi_conn.cursor()
    cur.execute("PRAGMA journal_mode=WAL")
    cur.execute("PRAGMA synchronous=NORMAL")
    for statement in _SCHEMA:
        cur.execute(statement)
    cur.close()


def get_engine() -> Engine:
    """Engine do ledger; o esquema é garantido a cada nova conexão."""
    global _ENGINE
    if _ENGINE is None:
        path = os.path.join(_writable_dir(), DB_FILENAME)
        _ENGINE = create_engine(f"sqlite:///{path}", future=True)
        event.listen(_ENGINE, "connect", _on_connect)
    return _ENGINE


def dispose_engine() -> None:
    global _ENGINE
    if _ENGINE is not None:
        _ENGINE.dispose()
        _ENGINE = None


def _count_or_none(v) -> Optional[int]:
    """n_paths/n_steps como inteiro; ausente ou não numérico vira NULL."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    try:
        return int(float(str(v).strip()))
    except (TypeError, ValueError):
        return None


# =============================================================================
# RUNS
# =============================================================================

def record_run(
    command: str,
    config_hash: str,
    master_seed: int,
    n_paths: int,
    n_steps: int,
    exit_status: int,
    summary_json: str = "",
) -> int:
    """Insere uma linha no ledger; retorna o id."""
    with get_engine().begin() as conn:
        result = conn.execute(
            text("""
                INSERT INTO runs (command, config_hash, master_seed, n_paths, n_steps,
                                  exit_status, summary_json, created_at)
                VALUES (:command, :config_hash, :master_seed, :n_paths, :n_steps,
                        :exit_status, :summary_json, :created_at)
            """),
            {
                "command": str(command),
                "config_hash": str(config_hash),
                # sqlite INTEGER é de 64 bits com sinal; a semente é u64
                "master_seed": str(int(master_seed)),
                "n_paths": _count_or_none(n_paths),
                "n_steps": _count_or_none(n_steps),
                "exit_status": int(exit_status),
                "summary_json": summary_json or "",
                "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            },
        )
        run_id = int(result.lastrowid)
    logger.info("Execução %s registrada no ledger (id %d, status %d)", command, run_id, exit_status)
    return run_id


def list_runs(limit: int = 100, command: Optional[str] = None) -> pd.DataFrame:
    """Execuções mais recentes primeiro, como DataFrame."""
    where = "WHERE command = :command" if command else ""
    eng = get_engine()
    with eng.connect() as conn:
        rows = conn.execute(
            text(f"""
                SELECT id, command, config_hash, master_seed, n_paths, n_steps,
                       exit_status, summary_json, created_at
                FROM runs
                {where}
                ORDER BY id DESC
                LIMIT :limit
            """),
            {"limit": int(limit), "command": command},
        ).fetchall()
    cols = ["id", "command", "config_hash", "master_seed", "n_paths", "n_steps",
            "exit_status", "summary_json", "created_at"]
    return pd.DataFrame([tuple(r) for r in rows], columns=cols)


def count_runs() -> int:
    """Conta todas as execuções registradas."""
    eng = get_engine()
    with eng.connect() as conn:
        return int(conn.execute(text("SELECT COUNT(*) FROM runs")).scalar_one() or 0)


def delete_all_runs() -> int:
    """Apaga todo o ledger; retorna a quantidade apagada."""
    eng = get_engine()
    with eng.begin() as conn:
        total = conn.execute(text("SELECT COUNT(*) FROM runs")).scalar_one()
        conn.execute(text("DELETE FROM runs"))
    return int(total or 0)
