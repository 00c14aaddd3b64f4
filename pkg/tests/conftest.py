# -*- coding: utf-8 -*-
"""Fixtures compartilhadas: modelos de referência e bundles pequenos (escopo de sessão)."""

import os

import numpy as np
import pytest

from market import ConstantMPR, MarketModel, OUMPR, simulate_bundle_under_P, simulate_bundle_under_Q
from paths import SeedSpec, TimeGrid
from utility import ExponentialUtility, LogUtility, PowerUtility

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")

SEED = 20240601


@pytest.fixture(scope="session")
def constant_model():
    return MarketModel(np.array([[0.2]]), np.array([1.0]), ConstantMPR((0.4,)))


@pytest.fixture(scope="session")
def ou_model():
    return MarketModel(np.array([[0.2]]), np.array([1.0]), OUMPR(0.5, 1.0, 0.3, 0.2))


@pytest.fixture(scope="session")
def grid_64():
    return TimeGrid(1.0, 64)


@pytest.fixture(scope="session")
def grid_128():
    return TimeGrid(1.0, 128)


@pytest.fixture(scope="session")
def seeds():
    return SeedSpec(SEED)


@pytest.fixture(scope="session")
def log_utility():
    return LogUtility()


@pytest.fixture(scope="session")
def crra():
    return PowerUtility(0.5)


@pytest.fixture(scope="session")
def cara():
    return ExponentialUtility(1.0)


@pytest.fixture(scope="session")
def constant_q_bundle(constant_model, grid_128, seeds):
    return simulate_bundle_under_Q(constant_model, grid_128, 4000, seeds)


@pytest.fixture(scope="session")
def ou_q_bundle(ou_model, grid_64, seeds):
    return simulate_bundle_under_Q(ou_model, grid_64, 2000, seeds)


@pytest.fixture(scope="session")
def constant_p_bundle(constant_model, grid_64, seeds):
    return simulate_bundle_under_P(constant_model, grid_64, 20000, seeds)


@pytest.fixture(scope="session")
def ou_p_bundle(ou_model, grid_64, seeds):
    return simulate_bundle_under_P(ou_model, grid_64, 20000, seeds)


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR
