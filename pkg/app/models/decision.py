"""
Round decision, cost and solver-state data models
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import ShapeError

FEASIBILITY_TOLERANCE = 1e-9


def _vector(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RoundDecision:
    """Selection a, bandwidth fractions b and CPU frequencies f for one round"""

    selection: np.ndarray
    bandwidth: np.ndarray
    frequency: np.ndarray
    upsilon: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("selection", "bandwidth", "frequency"):
            object.__setattr__(self, name, _vector(getattr(self, name)))
        if not (self.selection.shape == self.bandwidth.shape == self.frequency.shape):
            raise ShapeError("selection, bandwidth and frequency must have equal length")

    @classmethod
    def empty(cls, num_clients: int, **metadata) -> "RoundDecision":
        zeros = np.zeros(num_clients)
        return cls(zeros, zeros, zeros, 0.0, dict(metadata))

    @property
    def num_clients(self) -> int:
        return int(self.selection.size)

    @property
    def selected(self) -> np.ndarray:
        return self.selection > 0.5

    @property
    def selected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)

    @property
    def num_selected(self) -> int:
        return int(self.selected.sum())

    def evolve(self, **changes) -> "RoundDecision":
        meta = dict(self.metadata)
        meta.update(changes.pop("metadata", {}))
        return replace(self, metadata=meta, **changes)


@dataclass(frozen=True)
class ClientCost:
    """Latency and energy of one client in one round"""

    comp_latency: float
    comp_energy: float
    upload_latency: float
    upload_energy: float

    @property
    def latency(self) -> float:
        return self.comp_latency + self.upload_latency

    @property
    def energy(self) -> float:
        return self.comp_energy + self.upload_energy


@dataclass(frozen=True)
class CostReport:
    """Per-client components and round aggregates T_t, E_t, Y_t"""

    comp_latency: np.ndarray
    comp_energy: np.ndarray
    upload_latency: np.ndarray
    upload_energy: np.ndarray
    selected: np.ndarray
    alpha1: float
    alpha2: float

    def __post_init__(self):
        for name in ("comp_latency", "comp_energy", "upload_latency", "upload_energy"):
            object.__setattr__(self, name, _vector(getattr(self, name)))
        sel = np.array(self.selected, dtype=bool)
        sel.setflags(write=False)
        object.__setattr__(self, "selected", sel)

    @property
    def client_latency(self) -> np.ndarray:
        return self.comp_latency + self.upload_latency

    @property
    def client_energy(self) -> np.ndarray:
        return self.comp_energy + self.upload_energy

    @property
    def round_latency(self) -> float:
        if not self.selected.any():
            return 0.0
        return float(np.max(self.client_latency[self.selected]))

    @property
    def round_energy(self) -> float:
        return float(np.sum(self.client_energy[self.selected]))

    @property
    def utility(self) -> float:
        return self.alpha1 * self.round_latency + self.alpha2 * self.round_energy


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    slack: float
    passed: bool


@dataclass(frozen=True)
class FeasibilityReport:
    """Pass/fail per constraint with numeric slacks"""

    checks: Tuple[ConstraintCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

    def slack(self, name: str) -> float:
        for check in self.checks:
            if check.name == name:
                return check.slack
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(c.name, c.slack, c.passed) for c in self.checks],
            columns=["constraint", "slack", "passed"],
        )


@dataclass(frozen=True)
class DcState:
    """
    Relaxed point returned by the penalty DC iteration

    Arrays are indexed over the eligible clients ``clients``. Objective values
    are in the normalized units of the subproblem (the initial feasible point
    has unpenalized objective 1).
    """

    clients: np.ndarray
    a: np.ndarray
    z: np.ndarray
    u: np.ndarray
    upsilon: float
    rho: float
    iterations: int
    objective_trace: Tuple[float, ...]
    reference_trace: Tuple[float, ...]
    rho_trace: Tuple[float, ...]
    integrality_trace: Tuple[float, ...]
    scale: float
    converged: bool = False
    rejected_steps: int = 0

    @property
    def integrality_residual(self) -> float:
        return float(np.sum(self.a - self.a ** 2))

    def is_monotone(self, tolerance: float = FEASIBILITY_TOLERANCE) -> bool:
        """Each iterate is no worse than its predecessor under the same penalty weight"""
        return all(
            new <= ref + tolerance * max(1.0, abs(ref))
            for new, ref in zip(self.objective_trace, self.reference_trace)
        )


@dataclass(frozen=True)
class DualState:
    """Multipliers and step sizes of the frequency dual loop"""

    gamma: np.ndarray
    beta: np.ndarray
    step_gamma: np.ndarray
    step_beta: np.ndarray
    iteration: int


@dataclass(frozen=True)
class FrequencyAllocation:
    """Result of a frequency allocation over the selected clients"""

    frequency: np.ndarray
    dual: Optional[DualState]
    upsilon: float
    converged: bool
    max_residual: float
    complementary_slackness: float
    iterations: int
    metadata: Dict[str, Any] = field(default_factory=dict)
