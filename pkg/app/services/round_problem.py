"""
Per-round optimization data shared by the DC optimizer, the oracles and the baselines
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import DomainError
from app.models.scenario import Scenario
from app.services.wireless_cost import spectral_rates


@dataclass(frozen=True)
class RoundProblem:
    """
    Arrays over the candidate clients ``clients`` of a K-client cell

    ``full_rate`` is each client's rate over the whole band, so a client with
    bandwidth fraction b uploads at b * full_rate. ``frequency`` is the CPU
    frequency the bandwidth stage assumes.
    """

    clients: np.ndarray
    num_clients: int
    dataset_sizes: np.ndarray
    cycles_per_bit: np.ndarray
    transmit_power: np.ndarray
    model_size_bits: np.ndarray
    max_frequency: np.ndarray
    full_rate: np.ndarray
    frequency: np.ndarray
    epochs: int
    capacitance: float
    alpha1: float
    alpha2: float
    data_budget: float
    b_min: float

    @property
    def size(self) -> int:
        return int(self.clients.size)

    @property
    def latency_coef(self) -> np.ndarray:
        """alpha1 * C / R: weighted upload latency at b = 1"""
        return self.alpha1 * self.model_size_bits / self.full_rate

    @property
    def energy_coef(self) -> np.ndarray:
        """alpha2 * P * C / R: weighted upload energy at b = 1"""
        return self.alpha2 * self.transmit_power * self.model_size_bits / self.full_rate

    def compute_latency(self, f: Optional[np.ndarray] = None) -> np.ndarray:
        """alpha1 * E * s * d / f"""
        f = self.frequency if f is None else f
        with np.errstate(divide="ignore"):
            return self.alpha1 * self.epochs * self.cycles_per_bit * self.dataset_sizes / f

    def compute_energy(self, f: Optional[np.ndarray] = None) -> np.ndarray:
        """alpha2 * d * eps * s * f^2 * E"""
        f = self.frequency if f is None else f
        return self.alpha2 * self.dataset_sizes * self.capacitance * self.cycles_per_bit * f ** 2 * self.epochs

    def subset(self, positions: Sequence[int]) -> "RoundProblem":
        """Restrict to candidate positions (not client ids)"""
        pos = np.asarray(positions, dtype=int)
        arrays = {
            name: getattr(self, name)[pos]
            for name in (
                "clients",
                "dataset_sizes",
                "cycles_per_bit",
                "transmit_power",
                "model_size_bits",
                "max_frequency",
                "full_rate",
                "frequency",
            )
        }
        return replace(self, **arrays)

    def with_frequency(self, f: np.ndarray) -> "RoundProblem":
        return replace(self, frequency=np.asarray(f, dtype=float))

    def with_weights(self, alpha1: float, alpha2: float) -> "RoundProblem":
        return replace(self, alpha1=alpha1, alpha2=alpha2)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Scatter candidate-indexed values into a length-K vector"""
        out = np.zeros(self.num_clients)
        out[self.clients] = values
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.clients]


def build_round_problem(
    scenario: Scenario,
    round_index: int,
    clients: Optional[Sequence[int]] = None,
    b_min: float = 1e-4,
    frequency: Optional[np.ndarray] = None,
) -> RoundProblem:
    """
    Collect the arrays of one round for the given candidate clients

    Args:
        scenario: Sampled cell
        round_index: Round whose fading draw is used
        clients: Candidate client ids (default: all)
        b_min: Lower bandwidth bound of the relaxation
        frequency: Fixed frequencies over candidates (default: f_max)
    """
    system = scenario.system
    idx = np.arange(scenario.num_clients) if clients is None else np.asarray(clients, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= scenario.num_clients):
        raise DomainError("candidate client index out of range")
    fmax = scenario.max_frequency_hz[idx]
    f = fmax.copy() if frequency is None else np.asarray(frequency, dtype=float)
    if f.shape != fmax.shape:
        raise DomainError("frequency vector must match the candidate set")
    return RoundProblem(
        clients=idx,
        num_clients=scenario.num_clients,
        dataset_sizes=scenario.dataset_sizes[idx].astype(float),
        cycles_per_bit=scenario.cycles_per_bit[idx],
        transmit_power=scenario.transmit_power_w[idx],
        model_size_bits=scenario.model_size_bits[idx],
        max_frequency=fmax,
        full_rate=spectral_rates(scenario, round_index)[idx],
        frequency=f,
        epochs=system.local_epochs,
        capacitance=system.capacitance,
        alpha1=system.alpha1,
        alpha2=system.alpha2,
        data_budget=system.data_budget,
        b_min=b_min,
    )


def p2_objective(problem: RoundProblem, selected: np.ndarray, bandwidth: np.ndarray, frequency: Optional[np.ndarray] = None) -> float:
    """
    Epigraph objective: max weighted latency plus weighted energy, over candidates

    ``selected``, ``bandwidth`` and ``frequency`` are candidate-indexed. An
    infeasible allocation (selected client without bandwidth) scores +inf.
    """
    sel = np.asarray(selected, dtype=bool)
    if not sel.any():
        return 0.0
    b = np.asarray(bandwidth, dtype=float)[sel]
    f = (problem.frequency if frequency is None else np.asarray(frequency, dtype=float))[sel]
    if np.any(b <= 0) or np.any(f <= 0):
        return float("inf")
    sub = problem.subset(np.flatnonzero(sel))
    latency = sub.latency_coef / b + sub.compute_latency(f)
    energy = sub.energy_coef / b + sub.compute_energy(f)
    return float(np.max(latency) + np.sum(energy))
