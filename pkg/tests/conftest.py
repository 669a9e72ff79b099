"""Shared fixtures: the SIR configuration (a) pipeline and the acceptance summary."""

from __future__ import annotations

import time

import numpy as np
import pytest

from smmc.bnn import BnnConfig, train_bnn
from smmc.dataset import generate_dataset, sample_parameters
from smmc.gp import GpConfig, train_gp
from smmc.pctmc import bundled_model, make_rng
from smmc.stl import parse_stl

SIR_A_SPACE = [[0.005, 0.3], [0.05, 0.05]]
SIR_FORMULA = "(I > 0) U[100,120] (I == 0)"
SIR_HORIZON = 120.0

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction test")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


class SirPipeline:
    """Datasets and trained posteriors for SIR configuration (a)."""

    def __init__(self, seed: int = 0):
        started = time.perf_counter()
        self.model = bundled_model("sir").with_param_space(SIR_A_SPACE)
        self.phi = parse_stl(SIR_FORMULA)
        self.seed = seed
        grid = sample_parameters(self.model.param_space, 500, "uniform-grid")
        self.train = generate_dataset(self.model, self.phi, grid, 50, SIR_HORIZON, "train", seed)
        test_thetas = sample_parameters(self.model.param_space, 1000, "uniform-random", make_rng(seed, 99))
        self.test = generate_dataset(self.model, self.phi, test_thetas, 1000, SIR_HORIZON, "test", seed)
        self.generate_seconds = time.perf_counter() - started
        self.gp = train_gp(self.train, GpConfig(seed=seed))
        self.bnn = train_bnn(self.train, BnnConfig(seed=seed))
        self.total_seconds = time.perf_counter() - started

    def exchangeable_sets(self, seed: int, n_cal: int = 200, n_test: int = 1000):
        """Fresh calibration and test sets with the training trial count."""
        rng = make_rng(seed, 77)
        cal = sample_parameters(self.model.param_space, n_cal, "uniform-random", rng)
        test = sample_parameters(self.model.param_space, n_test, "uniform-random", rng)
        return (
            generate_dataset(self.model, self.phi, cal, 50, SIR_HORIZON, "calibration", 1000 + seed),
            generate_dataset(self.model, self.phi, test, 50, SIR_HORIZON, "test", 1000 + seed),
        )


@pytest.fixture(scope="session")
def sir_pipeline() -> SirPipeline:
    return SirPipeline(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
