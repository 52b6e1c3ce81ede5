"""
Exhaustive selection oracle for small cells
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.core.config import ExperimentConfig, SolverParams
from app.core.exceptions import DomainError, InfeasibleError
from app.models.decision import RoundDecision
from app.models.scenario import Scenario
from app.services.bandwidth import allocate_bandwidth
from app.services.freq_alloc import projected_frequency_solve
from app.services.heterogeneity import client_divergences, kl_filter
from app.services.round_problem import build_round_problem
from app.services.wireless_cost import round_cost

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleResult:
    decision: RoundDecision
    utility: float
    evaluated: int
    method: str


def oracle_gap(utility: float, optimum: float) -> float:
    """Relative excess of ``utility`` over the oracle optimum"""
    if optimum == 0:
        return 0.0 if utility == 0 else float("inf")
    return (utility - optimum) / abs(optimum)


def brute_force_oracle(
    scenario: Scenario,
    round_index: int,
    config: Optional[ExperimentConfig] = None,
    eligible: Optional[Sequence[int]] = None,
    method: Optional[str] = None,
) -> OracleResult:
    """
    Minimum-utility decision over every selection of the eligible clients

    Each subset meeting the data budget gets the optimal bandwidth split at
    f_max, then the smallest frequencies that keep its latency bound. Ties
    keep the subset enumerated first (fewest clients, lowest indices).

    Args:
        scenario: Sampled cell
        round_index: Round to solve
        config: Source of solver settings (default: defaults)
        eligible: Candidate clients (default: the KL-filtered set)
        method: Bandwidth search, "dual" or "grid" (default: optimizer setting)

    Returns:
        OracleResult with the best decision and its utility Y_t
    """
    params = config.optimizer if config is not None else SolverParams()
    method = method or params.bandwidth_method
    system = scenario.system
    if eligible is None:
        eligible = kl_filter(client_divergences(scenario, params.kl_smoothing), system.kl_threshold)
    eligible = np.asarray(eligible, dtype=int)
    if eligible.size > params.brute_force_max_clients:
        raise DomainError(
            f"brute force refuses {eligible.size} eligible clients (limit {params.brute_force_max_clients})"
        )

    problem = build_round_problem(scenario, round_index, eligible, params.b_min)
    best: Optional[RoundDecision] = None
    best_utility = float("inf")
    evaluated = 0

    for size in range(0, eligible.size + 1):
        for positions in itertools.combinations(range(eligible.size), size):
            positions = list(positions)
            if problem.dataset_sizes[positions].sum() < system.data_budget:
                continue
            evaluated += 1
            if not positions:
                decision = RoundDecision.empty(scenario.num_clients)
                utility = 0.0
            else:
                sub = problem.subset(positions)
                allocation = allocate_bandwidth(sub, method=method, resolution=params.grid_resolution)
                f = projected_frequency_solve(sub, allocation.bandwidth, allocation.upsilon)
                latency = sub.latency_coef / allocation.bandwidth + sub.compute_latency(f)
                K = scenario.num_clients
                selection = np.zeros(K)
                bandwidth = np.zeros(K)
                frequency = np.zeros(K)
                selection[sub.clients] = 1.0
                bandwidth[sub.clients] = allocation.bandwidth
                frequency[sub.clients] = f
                decision = RoundDecision(selection, bandwidth, frequency, float(np.max(latency)), {"oracle": method})
                utility = round_cost(decision, scenario, round_index).utility
            if utility < best_utility:
                best, best_utility = decision, utility

    if best is None:
        raise InfeasibleError("no selection of the eligible clients meets the data budget", "data_budget")
    logger.debug(f"brute force over {eligible.size} clients evaluated {evaluated} selections, Y={best_utility:.6g}")
    return OracleResult(best, best_utility, evaluated, method)
