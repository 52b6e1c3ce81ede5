"""
Shared fixtures: a six-client cell small enough for exhaustive checks
"""

import numpy as np
import pytest

from app.core.config import ExperimentConfig, parse_experiment_config
from app.models.partition import PartitionSpec
from app.models.scenario import ChannelState, Scenario
from app.services.scenario_service import build_scenario
from app.services.wireless_cost import path_loss
from app.tasks.experiment_tasks import run_experiment

SMALL_DOCUMENT = {
    "system": {
        "num_clients": 6,
        "data_budget": 300.0,
        "kl_threshold": float("inf"),
        "local_epochs": 2,
        "batch_size": 16,
    },
    "fl": {
        "train_samples": 1200,
        "test_samples": 300,
        "feature_dim": 8,
        "rounds": 3,
        "iid_fraction": 0.5,
    },
    "baselines": {"ga_population": 16, "ga_generations": 30},
}


@pytest.fixture
def small_document():
    return {section: dict(values) for section, values in SMALL_DOCUMENT.items()}


@pytest.fixture
def small_config(small_document) -> ExperimentConfig:
    return parse_experiment_config(small_document)


@pytest.fixture
def small_scenario(small_config) -> Scenario:
    return build_scenario(small_config, rounds=3)


def make_scenario(sizes, label_counts=None, config=None, fading=1.0, distance=220.0, power_w=0.5, fmax=3e6, cycles=5.0):
    """Hand-built cell with identical physical clients unless arrays are given"""
    config = config or ExperimentConfig()
    sizes = np.asarray(sizes, dtype=int)
    K = sizes.size
    system = config.system.model_copy(update={"num_clients": K})
    if label_counts is None:
        label_counts = np.zeros((K, 2), dtype=int)
        label_counts[:, 0] = sizes // 2
        label_counts[:, 1] = sizes - sizes // 2
    label_counts = np.asarray(label_counts, dtype=int)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    partition = PartitionSpec(
        label_counts=label_counts,
        assignments=tuple(np.arange(offsets[k], offsets[k + 1]) for k in range(K)),
        categories=np.arange(label_counts.shape[1]),
        iid_fraction=1.0,
        dirichlet_alpha=1.0,
    )
    dist = np.broadcast_to(np.asarray(distance, dtype=float), (K,))
    channel = ChannelState(
        path_loss=np.asarray(path_loss(dist, system.carrier_freq_hz, system.path_loss_exp)),
        unit_fading=np.broadcast_to(np.asarray(fading, dtype=float), (2, K)),
        seed=0,
    )
    return Scenario(
        system=system,
        seed=0,
        dataset_sizes=sizes,
        cycles_per_bit=np.broadcast_to(np.asarray(cycles, dtype=float), (K,)),
        transmit_power_w=np.broadcast_to(np.asarray(power_w, dtype=float), (K,)),
        max_frequency_hz=np.broadcast_to(np.asarray(fmax, dtype=float), (K,)),
        model_size_bits=np.full(K, config.fl.resolved_model_size_bits),
        distance_m=dist,
        channel=channel,
        partition=partition,
    )


@pytest.fixture
def scenario_factory():
    return make_scenario


@pytest.fixture(scope="session")
def small_experiment():
    """Three rounds of every method on the six-client cell, run once per session"""
    config = parse_experiment_config({section: dict(values) for section, values in SMALL_DOCUMENT.items()})
    return config, run_experiment(config, workers=1)
