"""
Training-run trace models
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from app.models.bound import BoundBreakdown
from app.models.decision import CostReport, FeasibilityReport, RoundDecision


@dataclass(frozen=True)
class RoundTrace:
    """Everything recorded about one executed round of one method"""

    round_index: int
    method: str
    decision: RoundDecision
    cost: CostReport
    train_loss: float
    test_accuracy: float
    test_loss: float
    cumulative_latency: float
    cumulative_energy: float
    cumulative_utility: float
    feasibility: Optional[FeasibilityReport] = None
    bound: Optional[BoundBreakdown] = None

    @property
    def selection(self) -> np.ndarray:
        return self.decision.selected

    @property
    def bound_total(self) -> float:
        return float("nan") if self.bound is None else self.bound.total


@dataclass(frozen=True)
class MethodSummary:
    method: str
    rounds: int
    initial_accuracy: float
    final_accuracy: float
    cumulative_latency: float
    cumulative_energy: float
    cumulative_utility: float
    error: str = ""


@dataclass
class MethodRun:
    """Trace collection of one method inside an experiment"""

    method: str
    traces: List[RoundTrace] = field(default_factory=list)
    initial_accuracy: float = float("nan")
    initial_loss: float = float("nan")
    error: Optional[str] = None

    def summary(self) -> MethodSummary:
        last = self.traces[-1] if self.traces else None
        return MethodSummary(
            method=self.method,
            rounds=len(self.traces),
            initial_accuracy=self.initial_accuracy,
            final_accuracy=last.test_accuracy if last else self.initial_accuracy,
            cumulative_latency=last.cumulative_latency if last else 0.0,
            cumulative_energy=last.cumulative_energy if last else 0.0,
            cumulative_utility=last.cumulative_utility if last else 0.0,
            error=self.error or "",
        )


@dataclass
class ExperimentResult:
    runs: Dict[str, MethodRun]
    seed: int

    def summaries(self) -> List[MethodSummary]:
        return [run.summary() for run in self.runs.values()]


class RunManifest(BaseModel):
    """Written next to every output set of the command-line runner"""

    config_hash: str
    seed: int
    subcommand: str
    outputs: List[str]
    tool_version: str
    duration_seconds: float
