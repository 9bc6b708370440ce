import numpy as np
import pytest

from coinfer.config import default_dict, scenario_from_dict


def make_scenario(device_counts=(1, 1), episodes=5, slots=20, **overrides):
    """Small scenario for unit tests: defaults with shrunk device groups."""
    d = default_dict()
    d["services"] = d["services"][: len(device_counts)]
    for entry, count in zip(d["services"], device_counts):
        entry["device_count"] = count
    d["agent"]["episodes"] = episodes
    d["agent"]["slots_per_episode"] = slots
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if field:
            d[section][field] = value
        else:
            d[key] = value
    return scenario_from_dict(d)


@pytest.fixture
def scenario():
    return make_scenario()


@pytest.fixture
def default_scenario_full():
    return scenario_from_dict(default_dict())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
