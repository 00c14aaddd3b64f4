# -*- coding: utf-8 -*-
"""Parsing INI, validação com caminho do campo e construtores de domínio."""

import glob
import os

import numpy as np
import pytest

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
    parse_config,
)
from errors import EXIT_CONFIG_ERROR, ConfigError
from market import OUMPR
from paths import Measure
from utility import ExponentialUtility, LogUtility, PowerUtility

from conftest import CONFIG_DIR

REFERENCE_CONFIGS = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.ini")))


@pytest.mark.parametrize("path", REFERENCE_CONFIGS, ids=os.path.basename)
def test_reference_configs_load(path):
    cfg = load_config(path)
    model = build_model(cfg)
    assert model.n == 1
    assert build_grid(cfg).horizon == 1.0
    assert cfg.outputs.directory.startswith("out/")


def test_reference_config_contents(config_dir):
    cfg = load_config(os.path.join(config_dir, "crra_ou.ini"))
    assert isinstance(build_model(cfg).mpr, OUMPR)
    assert build_utility(cfg) == PowerUtility(0.5)
    assert cfg.hedging.anchor_stride == 2
    assert build_truncation(cfg) == "auto"
    assert cfg.verify.hitting_level == 0.35
    assert cfg.verify.truncation_ladder == (4.0, 8.0, 16.0)
    assert isinstance(build_utility(load_config(os.path.join(config_dir, "exponential_ou.ini"))), ExponentialUtility)


@pytest.mark.parametrize("name", ["crra_constant.ini", "crra_ou.ini"])
def test_crra_configs_use_acceptance_resolution(name, config_dir):
    cfg = load_config(os.path.join(config_dir, name))
    assert build_grid(cfg).dt == 2.0**-9
    assert cfg.mc.n_paths == 50000
    assert cfg.hedging.degree == 3


class TestParsing:
    def test_empty_text_gives_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert isinstance(build_utility(cfg), LogUtility)
        assert build_measure(cfg) == Measure.Q

    def test_vectors_and_matrices(self):
        cfg = parse_config(
            "[model]\n"
            "theta = 0.1, 0.2\n"
            "sigma = 0.2, 0.0; 0.05, 0.3\n"
            "s0 = 1.0, 2.0\n"
        )
        assert cfg.model.sigma == ((0.2, 0.0), (0.05, 0.3))
        model = build_model(cfg)
        assert model.n == 2
        np.testing.assert_array_equal(model.s0, [1.0, 2.0])

    def test_inline_comments_and_case(self):
        cfg = parse_config("[GRID]\nN_STEPS = 32   ; comentário\n[mc]\nmeasure = P  # sob P\n")
        assert cfg.grid.n_steps == 32
        assert build_measure(cfg) == Measure.P

    def test_unknown_key_names_field_and_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[model]\nmpr = constant\ncolour = red\n")
        assert info.value.field == "model.colour"
        assert info.value.line == 3
        assert "model.colour @ linha 3" in str(info.value)

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[grid]\nn_steps = 4\n\n[plots]\nkind = line\n")
        assert info.value.line == 4

    def test_duplicate_key(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[grid]\nn_steps = 4\nn_steps = 8\n")
        assert info.value.line == 3
        assert "duplicada" in str(info.value)

    def test_duplicate_section(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[grid]\nn_steps = 4\n[grid]\nhorizon = 2\n")
        assert info.value.line == 3

    def test_malformed_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[grid]\nn_steps = 4\nisto não é chave\n")
        assert info.value.line == 3

    def test_missing_section_header(self):
        with pytest.raises(ConfigError) as info:
            parse_config("n_steps = 4\n[grid]\n")
        assert info.value.line == 1

    @pytest.mark.parametrize("text, field", [
        ("[grid]\nn_steps = 3.5\n", "grid.n_steps"),
        ("[outputs]\nledger = talvez\n", "outputs.ledger"),
        ("[model]\nsigma = 0.2, 0.0; 0.3\n", "model.sigma"),
        ("[hedging]\ntruncation = sempre\n", "hedging.truncation"),
    ])
    def test_invalid_values(self, text, field):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.field == field
        assert info.value.exit_code == EXIT_CONFIG_ERROR

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="não encontrado"):
            load_config(str(tmp_path / "nada.ini"))


class TestValidation:
    @pytest.mark.parametrize("text, message", [
        ("[utility]\nname = power\np = 1\n", "utility.p: p deve satisfazer p<1, p≠0"),
        ("[utility]\nname = power\n", "utility.p: utilidade power exige p"),
        ("[utility]\nname = exponential\na = -1\n", "utility.a"),
        ("[model]\nmpr = ou\nbeta = 0\n", "model.beta"),
        ("[model]\ntheta = 0.1, 0.2\n", "model.sigma"),
        ("[model]\nsigma = 1, 2; 2, 4\ntheta = 0.1, 0.2\ns0 = 1, 1\n", "sigma deve ser não singular"),
        ("[mc]\nmeasure = r\n", "mc.measure"),
        ("[mc]\nn_paths = 1\n", "mc.n_paths"),
        ("[outputs]\nformats = csv, pdf\n", "outputs.formats"),
        ("[verify]\neu1_finest_steps = 100\neu1_levels = 4\n", "verify.eu1_finest_steps"),
        ("[verify]\ntruncation_ladder = 8\n", "verify.truncation_ladder"),
        ("[hedging]\ntruncation = -2\n", "hedging.truncation"),
    ])
    def test_messages_name_the_field(self, text, message):
        with pytest.raises(ConfigError, match=message):
            parse_config(text)


class TestRunConfig:
    def test_overrides(self):
        cfg = RunConfig().with_overrides(seed=7, steps=32, paths=100, out="x/y")
        assert cfg.mc.master_seed == 7
        assert cfg.grid.n_steps == 32
        assert cfg.mc.n_paths == 100
        assert cfg.outputs.directory == "x/y"
        assert build_seeds(cfg).master_seed == 7

    def test_invalid_override(self):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(paths=1)

    def test_echo_is_json_ready(self):
        echo = RunConfig().echo()
        assert set(echo) == {"model", "utility", "grid", "mc", "hedging", "outputs", "verify"}
        assert echo["model"]["sigma"] == [[0.2]]
        assert echo["outputs"]["formats"] == ["csv", "json"]

    def test_hash_tracks_content(self):
        base = RunConfig()
        assert base.config_hash() == RunConfig().config_hash()
        assert len(base.config_hash()) == 16
        assert base.config_hash() != base.with_overrides(seed=1).config_hash()

    def test_builders(self):
        cfg = parse_config("[hedging]\ndegree = 2\nridge = 0.1\ntruncation = 8\n")
        spec = build_regression_spec(cfg)
        assert (spec.degree, spec.ridge) == (2, 0.1)
        assert build_regression_spec(cfg, degree=0).degree == 0
        assert build_truncation(cfg) == 8.0
