# tests/conftest.py

import os

os.environ.setdefault("SEER_LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from seer.models import RequestMatrix, RevenueCurveParams, RevenueMatrix, ServerFleet
from seer.schema import SimulationConfig
from seer.services.simulation import build_context


@pytest.fixture
def curve():
    """The default thresholds: α=0.05, β=0.8, γ=0.2."""
    return RevenueCurveParams()


@pytest.fixture
def tiny_fleet():
    """Three servers of bandwidth 10 on a two-location line: server 1 at m=1, servers 2-3 at m=2."""
    return ServerFleet.from_arrays([10.0, 10.0, 10.0], [1, 2, 2], locations=2)


@pytest.fixture
def unit_revenue():
    """A = 1 everywhere for the tiny fleet, two categories."""
    return RevenueMatrix(np.ones((3, 2, 2)))


@pytest.fixture
def demand():
    """Factory for integral request matrices."""

    def make(counts, cycle=0):
        return RequestMatrix(np.asarray(counts, dtype=np.int64), cycle)

    return make


def tiny_config_dict(**overrides) -> dict:
    """A run small enough for unit tests: 2 locations, 4 servers, 40 training cycles."""
    config = {
        "seed": 3,
        "clusters": 3,
        "training_cycles": 40,
        "horizon": 12,
        "beta_update_interval": 6,
        "overlap": False,
        "fleet": {"servers": 4, "bandwidths": [60.0, 60.0, 60.0, 60.0], "locations": [1, 1, 2, 2]},
        "workload": {
            "locations": 2,
            "horizon": 80,
            "base_rates": 30.0,
            "period": 20,
            "peak_windows": [{"center": 10, "half_width": 3}],
            "peak_multiplier": 2.0,
            "bitrate_levels": 2,
        },
        "revenue_model": {"rounds": 5, "max_depth": 2, "samples": 400},
        "predictor": {"kind": "seasonal", "period": 20, "latent": 4, "window": 3, "epochs": 1},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key] = {**config[key], **value}
        else:
            config[key] = value
    return config


@pytest.fixture
def tiny_config():
    return SimulationConfig.model_validate(tiny_config_dict())


@pytest.fixture(scope="session")
def tiny_context():
    """Trained once per session; runs derived from ``tiny_config`` may share it."""
    return build_context(SimulationConfig.model_validate(tiny_config_dict()))


@pytest.fixture
def make_config():
    """Factory for tiny configs with nested overrides merged one level deep."""

    def make(**overrides):
        return SimulationConfig.model_validate(tiny_config_dict(**overrides))

    return make
