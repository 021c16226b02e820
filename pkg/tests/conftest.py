from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from v2xguard import pipeline  # noqa: E402
from v2xguard.config import load_config  # noqa: E402


SMALL = {"scenario": {"n_frames": 600, "dwell_frames": [80, 160]}}


@pytest.fixture(scope="session")
def small_cfg():
    return load_config(overrides=SMALL)


@pytest.fixture(scope="session")
def small_run(small_cfg):
    """A short training scenario, its clean graphs, and the trained model."""
    scenario, streams, _ = pipeline.simulate(small_cfg, seed=100)
    bundle = pipeline.train(scenario, streams.clean, small_cfg)
    return scenario, streams, bundle


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
