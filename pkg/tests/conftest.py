"""Shared scenario factories and a session-scoped run cache.

Scenario runs are expensive, and several tests (plus the acceptance suite)
score the same runs from different angles; the cache keys runs by name so
each unique configuration executes once per session.
"""

import numpy as np
import pytest

from shmsim.scenario import run_scenario

SEEDS_20 = list(range(1, 21))


def standard_config(seed, mode="dependshm"):
    """Mixed fault + damage scenario on the 10-story chain.

    A stuck sensor next to the damaged story plus a debonded sensor farther
    away; damage starts three rounds after the faults.
    """
    return {
        "seed": seed,
        "mode": mode,
        "monitoring": {"training_rounds": 12, "rounds": 8, "n_averages": 15, "segment_length": 256},
        "faults": [
            {"kind": "stuck_constant", "sensor_id": 5, "onset_round": 12},
            {"kind": "debonding_gain", "sensor_id": 8, "onset_round": 12},
        ],
        "damage": {"location": 4, "severity": 0.2, "onset_round": 15},
    }


def null_config(seed, mode="dependshm"):
    """Fault-free, damage-free 10-story scenario."""
    return {
        "seed": seed,
        "mode": mode,
        "monitoring": {"training_rounds": 12, "rounds": 4, "n_averages": 15, "segment_length": 256},
        "faults": [],
        "damage": None,
    }


def fault_only_config(seed, mode="dependshm"):
    """Sensor faults but no structural damage."""
    return {
        "seed": seed,
        "mode": mode,
        "monitoring": {"training_rounds": 12, "rounds": 5, "n_averages": 15, "segment_length": 256},
        "faults": [
            {"kind": "stuck_constant", "sensor_id": 5, "onset_round": 12},
            {"kind": "debonding_gain", "sensor_id": 8, "onset_round": 12},
        ],
        "damage": None,
    }


def missing_node_config(seed, node=5):
    """One sensor stops delivering windows entirely."""
    return {
        "seed": seed,
        "mode": "dependshm",
        "monitoring": {"training_rounds": 12, "rounds": 3, "n_averages": 15, "segment_length": 256},
        "faults": [{"kind": "missing", "sensor_id": node, "onset_round": 12}],
        "damage": None,
    }


def localization_config(seed):
    """Damage plus one sensor fault elsewhere (reconstruction on)."""
    return {
        "seed": seed,
        "mode": "dependshm",
        "monitoring": {"training_rounds": 12, "rounds": 6, "n_averages": 15, "segment_length": 256},
        "faults": [{"kind": "debonding_gain", "sensor_id": 8, "onset_round": 12}],
        "damage": {"location": 4, "severity": 0.2, "onset_round": 14},
    }


def field_config(seed, fault_rate, mode="dependshm"):
    """100-sensor line over the 450 x 50 field with mixed fault kinds."""
    rng = np.random.default_rng(10_000 + seed)
    n_fault = int(round(fault_rate * 100))
    nodes = sorted(int(c) for c in rng.choice(100, size=n_fault, replace=False))
    kinds = ["offset_bias", "debonding_gain", "stuck_constant"]
    return {
        "seed": seed,
        "mode": mode,
        "structure": {"n_dof": 100, "mass": 1000.0, "stiffness": 1.769e6, "dt": 0.02},
        "monitoring": {"training_rounds": 6, "rounds": 4, "n_averages": 10, "segment_length": 100},
        "detection": {"R": 5},
        "reconstruction": {"model_scope": "neighborhood"},
        "faults": [
            {"kind": kinds[i % 3], "sensor_id": ch, "onset_round": 7}
            for i, ch in enumerate(nodes)
        ],
        "damage": None,
    }


@pytest.fixture(scope="session")
def run_cached(tmp_path_factory):
    """run_cached(name, config) -> output directory, executed once per name."""
    base = tmp_path_factory.mktemp("scenario-runs")
    cache = {}

    def run(name, config):
        if name not in cache:
            out = base / name
            run_scenario(config, str(out))
            cache[name] = out
        return cache[name]

    return run


def read_rows(path):
    import csv

    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_summary(run_dir):
    import json

    with open(run_dir / "summary.json") as fh:
        return json.load(fh)
