"""
Generalization bound data models
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple


@dataclass(frozen=True)
class BoundParams:
    """Every symbol the bound needs, for a global model after ``round_index`` rounds"""

    round_index: int
    learning_rates: Tuple[float, ...]
    smoothness: float
    lipschitz: float
    grad_variance: float
    epochs: int
    optimality_gaps: Tuple[float, ...]
    loss_bound: float
    confidence: float
    stability: float
    client_sizes: Tuple[float, ...]
    kl_terms: Tuple[float, ...]

    def __post_init__(self):
        for name in ("learning_rates", "optimality_gaps", "client_sizes", "kl_terms"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(float(x) for x in value))


@dataclass(frozen=True)
class BoundBreakdown:
    """Per-term decomposition; ``total`` is the sum of the five terms"""

    drift_term: float
    sample_term: float
    kl_term: float
    size_term: float
    stability_term: float
    sigma_d2: float

    @property
    def total(self) -> float:
        return self.drift_term + self.sample_term + self.kl_term + self.size_term + self.stability_term

    def as_row(self) -> Dict[str, float]:
        return {
            "drift_term": self.drift_term,
            "sample_term": self.sample_term,
            "kl_term": self.kl_term,
            "size_term": self.size_term,
            "stability_term": self.stability_term,
            "sigma_d2": self.sigma_d2,
            "total": self.total,
        }


BOUND_COLUMNS: Sequence[str] = (
    "drift_term",
    "sample_term",
    "kl_term",
    "size_term",
    "stability_term",
    "sigma_d2",
    "total",
)
