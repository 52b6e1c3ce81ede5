"""
Label-distribution data models
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from app.core.exceptions import DomainError

SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LabelDistribution:
    """Normalized category proportions of one client or of the whole population"""

    proportions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.proportions, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise DomainError("a label distribution needs at least one category")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("label proportions must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOLERANCE * max(1, p.size):
            raise DomainError(f"label proportions sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "proportions", p)

    @classmethod
    def from_counts(cls, counts) -> "LabelDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise DomainError("cannot normalize an empty count vector")
        return cls(counts / total)

    @property
    def num_categories(self) -> int:
        return int(self.proportions.size)

    def __len__(self) -> int:
        return self.num_categories


@dataclass(frozen=True)
class PartitionSpec:
    """
    Assignment of a labelled sample pool to clients

    ``label_counts[k, z]`` is the number of samples of category ``z`` held by
    client ``k``; ``assignments[k]`` lists the pool indices of those samples.
    """

    label_counts: np.ndarray
    assignments: Tuple[np.ndarray, ...]
    categories: np.ndarray
    iid_fraction: float
    dirichlet_alpha: float
    num_iid_clients: int = 0
    moved_samples: int = field(default=0)

    def __post_init__(self):
        counts = np.asarray(self.label_counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "label_counts", counts)

    @property
    def num_clients(self) -> int:
        return int(self.label_counts.shape[0])

    @property
    def num_categories(self) -> int:
        return int(self.label_counts.shape[1])

    @property
    def dataset_sizes(self) -> np.ndarray:
        return self.label_counts.sum(axis=1)

    @property
    def global_counts(self) -> np.ndarray:
        return self.label_counts.sum(axis=0)


@dataclass(frozen=True)
class DistributionEstimate:
    """Per-client and global proportions; excluded clients hold NaN rows"""

    local: np.ndarray
    global_distribution: LabelDistribution
    excluded: Tuple[int, ...] = ()
    warnings: Tuple[str, ...] = ()

    def client(self, k: int) -> LabelDistribution:
        if k in self.excluded:
            raise DomainError(f"client {k} holds no samples")
        return LabelDistribution(self.local[k])
