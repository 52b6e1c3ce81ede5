"""
Sampling of the simulated wireless cell
"""

import logging
from typing import Optional

import numpy as np

from app.core.config import ClientRanges, ExperimentConfig, FLParams, SystemConfig, dbm_to_watts
from app.core.exceptions import ConfigurationError
from app.models.partition import PartitionSpec
from app.models.scenario import ChannelState, Scenario, Stream, stream_rng, unit_fading
from app.services.heterogeneity import balanced_label_pool, partition_hybrid
from app.services.wireless_cost import path_loss

logger = logging.getLogger(__name__)

# field name -> must the interval lie in (0, inf)
_RANGE_FIELDS = {
    "distance_m": True,
    "transmit_power_dbm": False,
    "max_frequency_hz": True,
    "cycles_per_bit": True,
}


def _check_interval(name: str, interval, positive: bool):
    low, high = (float(x) for x in interval)
    if not (np.isfinite(low) and np.isfinite(high)):
        raise ConfigurationError(f"client_ranges.{name}: bounds must be finite", [f"client_ranges.{name}"])
    if high < low:
        raise ConfigurationError(f"client_ranges.{name}: inverted interval [{low}, {high}]", [f"client_ranges.{name}"])
    if positive and low <= 0:
        raise ConfigurationError(f"client_ranges.{name}: interval must lie in (0, inf)", [f"client_ranges.{name}"])
    return low, high


def _uniform(rng: np.random.Generator, low: float, high: float) -> float:
    return low + (high - low) * rng.random()


def training_label_pool(fl: FLParams) -> np.ndarray:
    return balanced_label_pool(fl.train_samples, fl.num_categories)


def build_partition(K: int, fl: FLParams, seed: int) -> PartitionSpec:
    """Hybrid IID/Dirichlet split of the training pool"""
    return partition_hybrid(
        training_label_pool(fl),
        K,
        fl.iid_fraction,
        fl.dirichlet_alpha,
        stream_rng(seed, Stream.PARTITION),
        min_samples=fl.min_client_samples,
    )


def sample_scenario(
    system: SystemConfig,
    ranges: ClientRanges,
    seed: Optional[int] = None,
    fl: Optional[FLParams] = None,
    rounds: Optional[int] = None,
    partition: Optional[PartitionSpec] = None,
) -> Scenario:
    """
    Draw client profiles and per-round fading for a cell

    Args:
        system: Cell-wide constants
        ranges: Closed per-field sampling intervals
        seed: Master seed (defaults to ``system.rng_seed``)
        fl: Learning task; fixes the label pool, the split and the model size
        rounds: Number of rounds of fading to pre-sample
        partition: Explicit label partition overriding the sampled split

    Returns:
        Immutable Scenario
    """
    seed = system.rng_seed if seed is None else int(seed)
    fl = fl or FLParams()
    rounds = fl.rounds if rounds is None else rounds
    K = system.num_clients

    bounds = {name: _check_interval(name, getattr(ranges, name), positive) for name, positive in _RANGE_FIELDS.items()}

    distance = np.empty(K)
    power_dbm = np.empty(K)
    fmax = np.empty(K)
    cycles = np.empty(K)
    for k in range(K):
        rng = stream_rng(seed, Stream.PROFILE, k)
        distance[k] = _uniform(rng, *bounds["distance_m"])
        power_dbm[k] = _uniform(rng, *bounds["transmit_power_dbm"])
        fmax[k] = _uniform(rng, *bounds["max_frequency_hz"])
        cycles[k] = _uniform(rng, *bounds["cycles_per_bit"])

    if partition is None:
        partition = build_partition(K, fl, seed)
    elif partition.num_clients != K:
        raise ConfigurationError(f"partition has {partition.num_clients} clients, system has {K}")

    warnings = []
    sizes = partition.dataset_sizes
    if np.any(sizes == 0):
        warnings.append(f"clients {np.flatnonzero(sizes == 0).tolist()} hold no samples")
        logger.warning(warnings[-1])

    fading = np.array(
        [[unit_fading(seed, k, t) for k in range(K)] for t in range(max(rounds, 0))],
        dtype=float,
    ).reshape(max(rounds, 0), K)
    channel = ChannelState(
        path_loss=path_loss(distance, system.carrier_freq_hz, system.path_loss_exp) * np.ones(K),
        unit_fading=fading,
        seed=seed,
        average_gain=system.average_channel_gain,
    )

    logger.debug(f"sampled scenario with {K} clients, seed {seed}, {rounds} rounds of fading")
    return Scenario(
        system=system,
        seed=seed,
        dataset_sizes=sizes,
        cycles_per_bit=cycles,
        transmit_power_w=np.array([dbm_to_watts(p) for p in power_dbm]),
        max_frequency_hz=fmax,
        model_size_bits=np.full(K, fl.resolved_model_size_bits),
        distance_m=distance,
        channel=channel,
        partition=partition,
        warnings=tuple(warnings),
    )


def build_scenario(config: ExperimentConfig, seed: Optional[int] = None, rounds: Optional[int] = None) -> Scenario:
    """Scenario for a full experiment document"""
    return sample_scenario(config.system, config.client_ranges, seed, config.fl, rounds)
