# export.py
"""
export.py — Escrita dos artefatos de execução.

- CSV por série (cabeçalho + uma linha por nó), float_format fixo "%.12g".
- summary.json único por execução (sort_keys, sem timestamps).
- xlsx opcional: uma aba formatada por série (cabeçalho em negrito, autofiltro, larguras).
"""

import io
import json
import logging
import math
import os
import re
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"

# ---------------- Helpers de formatação ----------------

_INVALID_SHEET_CHARS_RE = re.compile(r'[:\\/?*\[\]]')
_INVALID_FILE_CHARS_RE = re.compile(r'[^A-Za-z0-9_.-]+')


def _sanitize_sheet_name(name: str, fallback: str = "Serie") -> str:
    """
    Nome de aba aceito pelo Excel: sem : \\ / ? * [ ], até 31 caracteres,
    fallback se vazio após limpeza.
    """
    name = _INVALID_SHEET_CHARS_RE.sub("", str(name or "").strip())
    return (name or fallback)[:31]


def _sanitize_file_stem(name: str, fallback: str = "serie") -> str:
    name = _INVALID_FILE_CHARS_RE.sub("_", str(name or "").strip()).strip("_")
    return name or fallback


def _write_sheet(writer: pd.ExcelWriter, sheet_name: str, df: pd.DataFrame):
    """
    Escreve o DataFrame com cabeçalho formatado, autofiltro e ajuste de larguras.
    Colunas numéricas saem com 12 dígitos significativos.
    """
    if df is None or df.empty:
        return

    df = df.copy()
    for c in df.columns:
        if df[c].dtype == "object":
            df[c] = df[c].apply(lambda x: "" if x is None else str(x))

    df.to_excel(writer, sheet_name=sheet_name, index=False)
    wb = writer.book
    ws = writer.sheets[sheet_name]

    header_fmt = wb.add_format({"bold": True, "bg_color": "#DCE6F1", "border": 1})
    number_fmt = wb.add_format({"num_format": "0.00000000000E+00"})

    for col_num, value in enumerate(df.columns.values):
        ws.write(0, col_num, value, header_fmt)

    last_row = max(len(df), 1)
    ws.autofilter(0, 0, last_row, max(0, len(df.columns) - 1))

    for i, col in enumerate(df.columns):
        if pd.api.types.is_float_dtype(df[col]):
            ws.set_column(i, i, 20, number_fmt)
            continue
        valores = [str(x) for x in df[col].tolist()]
        maxlen = max([len(str(col))] + [len(v) for v in valores if v]) + 2
        ws.set_column(i, i, max(14, min(maxlen, 60)))


# ---------------- Conversão para JSON ----------------

def _jsonable(value: Any) -> Any:
    """numpy/pandas → tipos nativos; não finitos viram null."""
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, pd.DataFrame):
        return [_jsonable(r) for r in value.to_dict(orient="records")]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if hasattr(value, "as_dict"):
        return _jsonable(value.as_dict())
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


# ---------------- Escrita ----------------

def write_csv(df: pd.DataFrame, path: str) -> str:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_summary_json(summary: Mapping[str, Any], path: str) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(summary), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")
    return path


def to_formatted_excel_series(series: Mapping[str, pd.DataFrame]) -> io.BytesIO:
    """Uma aba por série; pasta com aba 'Vazio' se não houver dados."""
    output = io.BytesIO()
    with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
        used: List[str] = []
        for name, df in series.items():
            sheet = _sanitize_sheet_name(name)
            if sheet in used:
                sheet = _sanitize_sheet_name(f"{sheet[:27]}_{len(used)}")
            used.append(sheet)
            _write_sheet(writer, sheet, df)
        if not any(df is not None and not df.empty for df in series.values()):
            pd.DataFrame({"info": ["sem séries"]}).to_excel(writer, sheet_name="Vazio", index=False)
    output.seek(0)
    return output


def write_artifacts(
    directory: str,
    series: Mapping[str, pd.DataFrame],
    summary: Mapping[str, Any],
    formats: Sequence[str] = ("csv", "json"),
) -> List[str]:
    """Grava as séries e o resumo no diretório; devolve os caminhos escritos."""
    os.makedirs(directory, exist_ok=True)
    written: List[str] = []
    if "csv" in formats:
        for name, df in series.items():
            written.append(write_csv(df, os.path.join(directory, f"{_sanitize_file_stem(name)}.csv")))
    if "json" in formats:
        written.append(write_summary_json(summary, os.path.join(directory, "summary.json")))
    if "xlsx" in formats:
        path = os.path.join(directory, "series.xlsx")
        with open(path, "wb") as fh:
            fh.write(to_formatted_excel_series(series).getbuffer())
        written.append(path)
    logger.info("%d artefatos gravados em %s", len(written), directory)
    return written


def summary_text(summary: Dict[str, Any]) -> str:
    """Mesmo conteúdo do summary.json, para o ledger."""
    return json.dumps(_jsonable(summary), sort_keys=True, ensure_ascii=False)
