"""
Comparison methods: GA selection, greedy and random allocation, Pow and random selection
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from app.core.config import BaselineParams
from app.core.exceptions import DomainError, InfeasibleError
from app.models.decision import RoundDecision
from app.models.scenario import Scenario
from app.services.heterogeneity import client_divergences
from app.services.round_problem import build_round_problem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaResult:
    selection: np.ndarray
    best_fitness: float
    history: Tuple[float, ...]


def ga_fitness(
    population: np.ndarray,
    divergences: np.ndarray,
    dataset_sizes: np.ndarray,
    kl_threshold: float,
    data_budget: float,
    penalty_m: float,
    literal: bool = False,
) -> np.ndarray:
    """
    Penalty fitness M(c1^2 + c2^2) of one chromosome or a population

    c1 = max(0, sum a*D - e1); c2 = max(0, e2 - sum a*d) penalizes a data
    deficit, or the literal form max(0, sum a*d - 1/e2) when ``literal``.
    """
    pop = np.atleast_2d(np.asarray(population, dtype=float))
    div = np.where(np.isnan(divergences), np.inf, divergences)
    with np.errstate(invalid="ignore"):
        spent = np.where(pop > 0.5, div, 0.0).sum(axis=1)
    c1 = np.zeros(pop.shape[0]) if np.isposinf(kl_threshold) else np.maximum(0.0, spent - kl_threshold)
    held = pop @ np.asarray(dataset_sizes, dtype=float)
    if literal:
        c2 = np.maximum(0.0, held - (1.0 / data_budget if data_budget > 0 else np.inf))
    else:
        c2 = np.maximum(0.0, data_budget - held)
    fitness = penalty_m * (c1 ** 2 + c2 ** 2)
    return fitness if np.ndim(population) > 1 else float(fitness[0])


def ga_select(
    scenario: Scenario,
    params: BaselineParams,
    rng: np.random.Generator,
    divergences: Optional[np.ndarray] = None,
) -> GaResult:
    """
    Genetic-algorithm client selection minimizing the penalty fitness

    Tournament selection, uniform crossover, bit-flip mutation and elitist
    carry-over; the best chromosome ever seen is returned.

    Args:
        scenario: Cell supplying sizes, divergences and thresholds
        params: Population, generations, mutation and penalty settings
        rng: Generator for every random choice of the run
        divergences: Precomputed D(p_g || p_k) (default: from the scenario)

    Returns:
        GaResult with the best selection and the per-generation best fitness
    """
    system = scenario.system
    K = scenario.num_clients
    div = client_divergences(scenario) if divergences is None else np.asarray(divergences, dtype=float)

    def evaluate(pop):
        return ga_fitness(
            pop,
            div,
            scenario.dataset_sizes,
            system.kl_threshold,
            system.data_budget,
            params.penalty_m,
            params.literal_fitness,
        )

    size = params.ga_population
    population = rng.integers(0, 2, size=(size, K)).astype(np.int8)
    fitness = evaluate(population)
    best_idx = int(np.argmin(fitness))
    best = population[best_idx].copy()
    best_fitness = float(fitness[best_idx])
    history = []

    def tournament():
        contenders = rng.choice(size, size=min(params.ga_tournament_size, size), replace=False)
        return population[contenders[int(np.argmin(fitness[contenders]))]]

    for generation in range(params.ga_generations):
        order = np.argsort(fitness, kind="stable")
        children = [population[i].copy() for i in order[: params.ga_elitism]]
        while len(children) < size:
            mother, father = tournament(), tournament()
            mask = rng.random(K) < 0.5
            child = np.where(mask, mother, father)
            flips = rng.random(K) < params.ga_mutation_rate
            children.append(np.where(flips, 1 - child, child).astype(np.int8))
        population = np.array(children, dtype=np.int8)
        fitness = evaluate(population)
        gen_best = int(np.argmin(fitness))
        if fitness[gen_best] < best_fitness:
            best, best_fitness = population[gen_best].copy(), float(fitness[gen_best])
        history.append(best_fitness)
        if best_fitness == 0.0 and params.ga_elitism > 0:
            # a zero-penalty chromosome survives every later generation
            history.extend([0.0] * (params.ga_generations - generation - 1))
            break

    logger.debug(f"GA finished with fitness {best_fitness:.6g} and {int(best.sum())} clients")
    return GaResult(best.astype(float), best_fitness, tuple(history))


def _selected_indices(selection) -> np.ndarray:
    idx = np.flatnonzero(np.asarray(selection, dtype=float) > 0.5)
    if idx.size == 0:
        raise DomainError("allocation needs at least one selected client")
    return idx


def greedy_allocate(
    selection,
    scenario: Scenario,
    round_index: int,
    quantum: float,
    alpha1: Optional[float] = None,
    alpha2: Optional[float] = None,
    orientation: str = "largest_decrease",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Hand out bandwidth quanta by marginal gain, then set frequencies in closed form

    Every selected client starts with one quantum. Each remaining quantum goes
    to the client whose gain -(a1*C + a2*P*C)/(b^2 R) is most negative
    (``largest_decrease``) or largest (``literal``), ties to the lowest index.

    Returns:
        (bandwidth, frequency), both of length K
    """
    system = scenario.system
    alpha1 = system.alpha1 if alpha1 is None else alpha1
    alpha2 = system.alpha2 if alpha2 is None else alpha2
    if not 0 < quantum <= 1:
        raise DomainError("bandwidth quantum must lie in (0, 1]")
    if orientation not in ("largest_decrease", "literal"):
        raise DomainError(f"unknown gain orientation: {orientation}")
    idx = _selected_indices(selection)
    total = int(math.floor(1.0 / quantum + 1e-9))
    if total < idx.size:
        raise InfeasibleError(f"{total} quanta cannot cover {idx.size} selected clients", "bandwidth_budget")

    problem = build_round_problem(scenario, round_index, idx).with_weights(alpha1, alpha2)
    numerator = problem.latency_coef + problem.energy_coef
    counts = np.ones(idx.size)
    for _ in range(total - idx.size):
        gain = -numerator / (counts * quantum) ** 2
        winner = int(np.argmin(gain)) if orientation == "largest_decrease" else int(np.argmax(gain))
        counts[winner] += 1

    K = scenario.num_clients
    bandwidth = np.zeros(K)
    bandwidth[idx] = counts * quantum
    frequency = np.zeros(K)
    fmax = problem.max_frequency
    if alpha2 == 0:
        f = fmax.copy()
    else:
        denom = 2.0 * alpha2 * problem.dataset_sizes * problem.capacitance * problem.cycles_per_bit * problem.epochs
        f = np.clip(np.cbrt(alpha1 / denom), 0.0, fmax)
    frequency[idx] = np.maximum(f, 1e-9 * fmax)
    return bandwidth, frequency


def random_allocate(selection, scenario: Scenario, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Bandwidth uniform on the simplex over selected clients, f uniform on (0, f_max]"""
    idx = _selected_indices(selection)
    K = scenario.num_clients
    bandwidth = np.zeros(K)
    frequency = np.zeros(K)
    bandwidth[idx] = rng.dirichlet(np.ones(idx.size)) if idx.size > 1 else 1.0
    frequency[idx] = scenario.max_frequency_hz[idx] * (1.0 - rng.random(idx.size))
    return bandwidth, frequency


def equal_allocate(selection, scenario: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    """Equal bandwidth split at full CPU speed"""
    idx = _selected_indices(selection)
    K = scenario.num_clients
    bandwidth = np.zeros(K)
    frequency = np.zeros(K)
    bandwidth[idx] = 1.0 / idx.size
    frequency[idx] = scenario.max_frequency_hz[idx]
    return bandwidth, frequency


def pow_select(local_losses: Sequence[float], m: int) -> np.ndarray:
    """Indicator of the m largest local losses, ties to the lowest index"""
    losses = np.asarray(local_losses, dtype=float)
    K = losses.size
    if m > K:
        raise DomainError(f"cannot select {m} of {K} clients")
    if m < 0:
        raise DomainError("selection count must be nonnegative")
    order = np.lexsort((np.arange(K), -losses))
    selection = np.zeros(K)
    selection[order[:m]] = 1.0
    return selection


def random_select(K: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform m-subset of K clients"""
    if m > K:
        raise DomainError(f"cannot select {m} of {K} clients")
    if m < 0:
        raise DomainError("selection count must be nonnegative")
    selection = np.zeros(K)
    selection[rng.choice(K, size=m, replace=False)] = 1.0
    return selection


def build_decision(selection, bandwidth, frequency, scenario: Scenario, round_index: int, **metadata) -> RoundDecision:
    """Wrap an allocation into a decision whose epigraph value is its weighted latency"""
    selection = np.asarray(selection, dtype=float)
    idx = np.flatnonzero(selection > 0.5)
    if idx.size == 0:
        return RoundDecision.empty(scenario.num_clients, **metadata)
    problem = build_round_problem(scenario, round_index, idx)
    b = np.asarray(bandwidth, dtype=float)[idx]
    f = np.asarray(frequency, dtype=float)[idx]
    upsilon = float(np.max(problem.latency_coef / b + problem.compute_latency(f)))
    return RoundDecision(selection, bandwidth, frequency, upsilon, dict(metadata))
