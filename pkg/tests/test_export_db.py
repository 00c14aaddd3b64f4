# -*- coding: utf-8 -*-
"""Escrita de artefatos (CSV, summary.json, xlsx) e o ledger SQLite."""

import json
import math

import numpy as np
import pandas as pd
import pytest

import db
from export import _jsonable, _sanitize_file_stem, _sanitize_sheet_name, summary_text, write_artifacts
from paths import Estimate, Measure


@pytest.fixture
def ledger(tmp_path):
    previous = db.DB_DIR
    db.set_db_dir(str(tmp_path))
    yield
    db.set_db_dir(previous)


SERIES = {
    "bundle": pd.DataFrame({"t": [0.0, 0.5, 1.0], "z_mean": [1.0, 1.0 / 3.0, np.nan]}),
    "tower/z": pd.DataFrame({"t": [0.0], "z": [0.25]}),
}


class TestJsonable:
    def test_numpy_and_pandas(self):
        value = {
            "a": np.float64(1.5),
            "b": np.int32(3),
            "c": np.array([1.0, np.inf]),
            "d": pd.DataFrame({"x": [1, 2]}),
            "e": np.bool_(True),
            1: (np.nan, "s"),
        }
        assert _jsonable(value) == {
            "a": 1.5, "b": 3, "c": [1.0, None], "d": [{"x": 1}, {"x": 2}], "e": True, "1": [None, "s"],
        }

    def test_domain_objects(self):
        assert _jsonable(Estimate(1.0, 0.1, 10)) == {"value": 1.0, "stderr": 0.1, "n_samples": 10}
        assert _jsonable(Measure.Q) == "Q-tilde"

    def test_summary_text_is_sorted(self):
        assert summary_text({"b": 1, "a": math.nan}) == '{"a": null, "b": 1}'


class TestSanitize:
    def test_sheet_name(self):
        assert _sanitize_sheet_name("tower/z") == "towerz"
        assert _sanitize_sheet_name("[]") == "Serie"
        assert len(_sanitize_sheet_name("x" * 40)) == 31

    def test_file_stem(self):
        assert _sanitize_file_stem("tower/z") == "tower_z"
        assert _sanitize_file_stem("///") == "serie"


class TestWriteArtifacts:
    def test_csv_and_json(self, tmp_path):
        written = write_artifacts(str(tmp_path), SERIES, {"x": 1.0, "k": np.int64(2)})
        names = sorted(p.split("/")[-1] for p in written)
        assert names == ["bundle.csv", "summary.json", "tower_z.csv"]
        lines = (tmp_path / "bundle.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,z_mean"
        assert lines[2] == "0.5,0.333333333333"
        assert json.loads((tmp_path / "summary.json").read_text(encoding="utf-8")) == {"k": 2, "x": 1.0}

    def test_rewrite_is_byte_identical(self, tmp_path):
        write_artifacts(str(tmp_path), SERIES, {"x": 1.0})
        first = (tmp_path / "bundle.csv").read_bytes(), (tmp_path / "summary.json").read_bytes()
        write_artifacts(str(tmp_path), SERIES, {"x": 1.0})
        assert first == ((tmp_path / "bundle.csv").read_bytes(), (tmp_path / "summary.json").read_bytes())

    def test_xlsx(self, tmp_path):
        written = write_artifacts(str(tmp_path), SERIES, {}, formats=("xlsx",))
        assert [p.split("/")[-1] for p in written] == ["series.xlsx"]
        assert (tmp_path / "series.xlsx").read_bytes()[:2] == b"PK"

    def test_empty_series_still_writes_workbook(self, tmp_path):
        write_artifacts(str(tmp_path), {"vazia": pd.DataFrame()}, {}, formats=("xlsx",))
        assert (tmp_path / "series.xlsx").stat().st_size > 0


class TestLedger:
    def test_record_and_list(self, ledger):
        first = db.record_run("decompose", "abc", 2**63 + 5, 100, 16, 0, '{"x": 1}')
        second = db.record_run("verify", "abc", 7, 100, 16, 1)
        assert second > first
        runs = db.list_runs()
        assert list(runs["command"]) == ["verify", "decompose"]
        assert runs["master_seed"].iloc[1] == str(2**63 + 5)
        assert list(db.list_runs(command="verify")["exit_status"]) == [1]
        assert db.count_runs() == 2

    def test_delete_all(self, ledger):
        db.record_run("simulate", "h", 1, 10, 4, 0)
        assert db.delete_all_runs() == 1
        assert db.count_runs() == 0

    def test_missing_counts_are_null(self, ledger):
        db.record_run("simulate", "h", 1, "abc", "16.0", 0)
        runs = db.list_runs()
        assert pd.isna(runs["n_paths"].iloc[0])
        assert runs["n_steps"].iloc[0] == 16

    def test_ledger_file_lives_in_configured_dir(self, ledger, tmp_path):
        assert db.db_path() == str(tmp_path / "runs.db")
        db.count_runs()
        assert (tmp_path / "runs.db").exists()
