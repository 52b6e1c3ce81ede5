"""
Wireless cell data models
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Tuple

import numpy as np

from app.core.config import SystemConfig
from app.core.exceptions import DomainError
from app.models.partition import PartitionSpec


class Stream(IntEnum):
    """Tags mixed into RNG seed keys so that consumers never share a stream"""

    PROFILE = 1
    FADING = 2
    PARTITION = 3
    DATA = 4
    LOCAL = 5
    BASELINE = 6
    GENETIC = 7


def stream_rng(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, stream, keys...)"""
    return np.random.default_rng([int(seed), int(stream), *(int(k) for k in keys)])


def unit_fading(seed: int, client: int, round_index: int) -> float:
    """Unit-mean exponential fading power for one client and one round"""
    return float(stream_rng(seed, Stream.FADING, client, round_index).exponential(1.0))


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ClientProfile:
    """Static physical and data parameters of one client"""

    index: int
    dataset_size: int
    cycles_per_bit: float
    transmit_power_w: float
    max_frequency_hz: float
    model_size_bits: float
    distance_m: float
    label_counts: np.ndarray

    def __post_init__(self):
        counts = _frozen(self.label_counts, dtype=np.int64)
        object.__setattr__(self, "label_counts", counts)
        if self.dataset_size < 0 or np.any(counts < 0):
            raise DomainError(f"client {self.index}: counts must be nonnegative")
        if int(counts.sum()) != int(self.dataset_size):
            raise DomainError(f"client {self.index}: label counts do not sum to dataset size")
        for name in ("cycles_per_bit", "transmit_power_w", "max_frequency_hz", "model_size_bits", "distance_m"):
            if not getattr(self, name) > 0:
                raise DomainError(f"client {self.index}: {name} must be positive")


@dataclass(frozen=True)
class ChannelState:
    """Path loss per client plus unit fading draws per (round, client)"""

    path_loss: np.ndarray
    unit_fading: np.ndarray
    seed: int
    average_gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "path_loss", _frozen(self.path_loss))
        object.__setattr__(self, "unit_fading", _frozen(self.unit_fading))
        if np.any(self.path_loss <= 0):
            raise DomainError("path loss gains must be positive")

    @property
    def horizon(self) -> int:
        return int(self.unit_fading.shape[0])

    def fading_power(self, round_index: int) -> np.ndarray:
        """|h_{k,t}|^2 for every client; rounds past the horizon are drawn from the same streams"""
        if round_index < 0:
            raise DomainError("round index must be nonnegative")
        if round_index < self.horizon:
            row = self.unit_fading[round_index]
        else:
            row = np.array([unit_fading(self.seed, k, round_index) for k in range(self.path_loss.size)])
        return self.average_gain * row


@dataclass(frozen=True)
class Scenario:
    """Immutable sampled cell: client profiles, channel draws and data partition"""

    system: SystemConfig
    seed: int
    dataset_sizes: np.ndarray
    cycles_per_bit: np.ndarray
    transmit_power_w: np.ndarray
    max_frequency_hz: np.ndarray
    model_size_bits: np.ndarray
    distance_m: np.ndarray
    channel: ChannelState
    partition: PartitionSpec
    warnings: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("cycles_per_bit", "transmit_power_w", "max_frequency_hz", "model_size_bits", "distance_m"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "dataset_sizes", _frozen(self.dataset_sizes, dtype=np.int64))

    @property
    def num_clients(self) -> int:
        return int(self.dataset_sizes.size)

    @property
    def label_counts(self) -> np.ndarray:
        return self.partition.label_counts

    @property
    def path_loss(self) -> np.ndarray:
        return self.channel.path_loss

    def fading_power(self, round_index: int) -> np.ndarray:
        return self.channel.fading_power(round_index)

    def profile(self, k: int) -> ClientProfile:
        return ClientProfile(
            index=k,
            dataset_size=int(self.dataset_sizes[k]),
            cycles_per_bit=float(self.cycles_per_bit[k]),
            transmit_power_w=float(self.transmit_power_w[k]),
            max_frequency_hz=float(self.max_frequency_hz[k]),
            model_size_bits=float(self.model_size_bits[k]),
            distance_m=float(self.distance_m[k]),
            label_counts=self.label_counts[k],
        )

    @property
    def profiles(self) -> Tuple[ClientProfile, ...]:
        return tuple(self.profile(k) for k in range(self.num_clients))

    def with_system(self, **overrides) -> "Scenario":
        """Copy with system constants replaced; every sampled draw is kept"""
        forbidden = {"num_clients", "rng_seed", "path_loss_exp", "carrier_freq_hz"} & overrides.keys()
        if forbidden:
            raise DomainError(f"cannot override sampled quantities: {sorted(forbidden)}")
        system = self.system.model_copy(update=overrides)
        system = SystemConfig.model_validate(system.model_dump())
        channel = replace(self.channel, average_gain=system.average_channel_gain)
        return replace(self, system=system, channel=channel)
