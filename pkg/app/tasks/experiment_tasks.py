"""
Round execution, multi-method experiments and parameter sweeps
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import ExperimentConfig, override_config, settings
from app.core.exceptions import RECOVERABLE_ERRORS, DomainError, InfeasibleDecisionError, RoundError
from app.models.decision import RoundDecision
from app.models.scenario import Scenario, Stream, stream_rng
from app.models.trace import ExperimentResult, MethodRun, RoundTrace
from app.services.baselines import (
    build_decision,
    equal_allocate,
    ga_select,
    greedy_allocate,
    pow_select,
    random_allocate,
    random_select,
)
from app.services.csra_optimizer import select_clients, solve_csra_round, verify_feasibility
from app.services.fl_engine import (
    LearningTask,
    aggregate,
    build_learning_task,
    evaluate,
    init_params,
    local_losses,
    local_update,
)
from app.services.genbound import bound_params_for_round, evaluate_bound
from app.services.heterogeneity import client_divergences
from app.services.scenario_service import build_scenario
from app.services.wireless_cost import round_cost

logger = logging.getLogger(__name__)

METHODS: Tuple[str, ...] = ("csra", "cs_random", "cs_greedy", "ga_random", "ga_greedy", "fedavg", "pow")
METHOD_TAGS: Dict[str, int] = {name: i for i, name in enumerate(METHODS)}

# sweeps over these fields need a freshly sampled cell
_RESAMPLED_SYSTEM_FIELDS = {"num_clients", "rng_seed", "path_loss_exp", "carrier_freq_hz"}


@dataclass(frozen=True)
class ExperimentContext:
    """Everything shared by the methods of one paired experiment"""

    config: ExperimentConfig
    scenario: Scenario
    task: LearningTask
    divergences: np.ndarray

    @classmethod
    def build(cls, config: ExperimentConfig, rounds: Optional[int] = None) -> "ExperimentContext":
        rounds = config.fl.rounds if rounds is None else rounds
        scenario = build_scenario(config, rounds=rounds)
        task = build_learning_task(config.fl, scenario.partition, scenario.seed)
        return cls(config, scenario, task, client_divergences(scenario, config.optimizer.kl_smoothing))

    def with_config(self, config: ExperimentConfig) -> "ExperimentContext":
        """Same cell and data under new system constants"""
        current = self.scenario.system.model_dump()
        changed = {k: v for k, v in config.system.model_dump().items() if current[k] != v}
        scenario = self.scenario.with_system(**changed)
        return replace(self, config=config, scenario=scenario)


@dataclass
class TrainingState:
    """Global model plus the histories the bound diagnostic needs"""

    params: np.ndarray
    round_index: int = 0
    learning_rates: List[float] = field(default_factory=list)
    train_losses: List[float] = field(default_factory=list)
    cumulative_latency: float = 0.0
    cumulative_energy: float = 0.0
    cumulative_utility: float = 0.0


def initial_state(context: ExperimentContext) -> Tuple[TrainingState, float, float]:
    """Fresh state with the initial model's train loss, test accuracy and test loss"""
    task = context.task
    params = init_params(task.feature_dim, task.num_classes)
    _, train_loss = evaluate(params, task.train.features, task.train.labels, task.num_classes)
    accuracy, test_loss = evaluate(params, task.test.features, task.test.labels, task.num_classes)
    return TrainingState(params=params, train_losses=[train_loss]), accuracy, test_loss


def _baseline_rng(context: ExperimentContext, round_index: int, method: str) -> np.random.Generator:
    return stream_rng(context.scenario.seed, Stream.BASELINE, round_index, METHOD_TAGS[method])


def decide_round(context: ExperimentContext, state: TrainingState, method: str) -> RoundDecision:
    """Selection and resource allocation of one round for one method"""
    config = context.config
    scenario = context.scenario
    t = state.round_index
    baselines = config.baselines

    if method == "csra":
        return solve_csra_round(scenario, t, config).decision

    if method in ("cs_random", "cs_greedy"):
        decision, _, _ = select_clients(scenario, t, config.optimizer)
        selection = decision.selection
    elif method in ("ga_random", "ga_greedy"):
        rng = stream_rng(scenario.seed, Stream.GENETIC, t)
        selection = ga_select(scenario, baselines, rng, context.divergences).selection
    elif method == "fedavg":
        selection = random_select(scenario.num_clients, config.selection_count, _baseline_rng(context, t, method))
    elif method == "pow":
        selection = pow_select(local_losses(state.params, context.task), config.selection_count)
    else:
        raise DomainError(f"unknown method: {method}")

    if not np.any(selection > 0.5):
        return RoundDecision.empty(scenario.num_clients, method=method)
    if method.endswith("_random"):
        b, f = random_allocate(selection, scenario, _baseline_rng(context, t, method))
    elif method.endswith("_greedy"):
        b, f = greedy_allocate(
            selection,
            scenario,
            t,
            baselines.bandwidth_quantum,
            orientation=baselines.greedy_gain_orientation,
        )
    else:
        b, f = equal_allocate(selection, scenario)
    return build_decision(selection, b, f, scenario, t, method=method)


def train_round(context: ExperimentContext, state: TrainingState, decision: RoundDecision) -> Tuple[np.ndarray, np.ndarray]:
    """Local updates on the selected non-empty clients and their aggregate"""
    config = context.config
    task = context.task
    t = state.round_index
    lr = config.system.learning_rate_at(t)
    models, sizes, participants = [], [], []
    for k in decision.selected_indices:
        X, y = task.client_data(int(k))
        if y.size == 0:
            continue
        rng = stream_rng(context.scenario.seed, Stream.LOCAL, t, int(k))
        batch = min(config.system.batch_size, int(y.size))
        models.append(local_update(state.params, X, y, lr, config.system.local_epochs, batch, rng, task.num_classes))
        sizes.append(y.size)
        participants.append(int(k))
    if not models:
        return state.params, np.zeros(0, dtype=int)
    return aggregate(models, sizes), np.array(participants, dtype=int)


def run_round(context: ExperimentContext, state: TrainingState, method: str) -> Tuple[TrainingState, RoundTrace]:
    """
    Select, allocate, train, aggregate, evaluate and account one round

    Args:
        context: Shared cell, data and config
        state: Global model entering the round
        method: One of ``METHODS``

    Returns:
        (state after the round, RoundTrace)

    Raises:
        RoundError: wrapping whatever failed, with the round index attached
    """
    t = state.round_index
    try:
        decision = decide_round(context, state, method)
        cost = round_cost(decision, context.scenario, t)
        feasibility = verify_feasibility(decision, context.scenario, t, smoothing=context.config.optimizer.kl_smoothing)
        if method == "csra" and not feasibility.passed:
            raise InfeasibleDecisionError(f"decision violates {feasibility.failed()}")

        params, participants = train_round(context, state, decision)
        task = context.task
        _, train_loss = evaluate(params, task.train.features, task.train.labels, task.num_classes)
        accuracy, test_loss = evaluate(params, task.test.features, task.test.labels, task.num_classes)

        learning_rates = state.learning_rates + [context.config.system.learning_rate_at(t)]
        bound = None
        if context.config.fl.compute_bound and participants.size:
            fl = context.config.fl
            bound = evaluate_bound(
                bound_params_for_round(
                    t + 1,
                    learning_rates,
                    state.train_losses,
                    fl.loss_floor,
                    context.config.system.local_epochs,
                    context.scenario.dataset_sizes[participants],
                    context.divergences[participants],
                    fl.bound,
                )
            )
    except RECOVERABLE_ERRORS as e:
        logger.error(f"round {t} of {method} failed: {str(e)}")
        raise RoundError(t, method, e) from e

    new_state = TrainingState(
        params=params,
        round_index=t + 1,
        learning_rates=learning_rates,
        train_losses=state.train_losses + [train_loss],
        cumulative_latency=state.cumulative_latency + cost.round_latency,
        cumulative_energy=state.cumulative_energy + cost.round_energy,
        cumulative_utility=state.cumulative_utility + cost.utility,
    )
    trace = RoundTrace(
        round_index=t,
        method=method,
        decision=decision,
        cost=cost,
        train_loss=train_loss,
        test_accuracy=accuracy,
        test_loss=test_loss,
        cumulative_latency=new_state.cumulative_latency,
        cumulative_energy=new_state.cumulative_energy,
        cumulative_utility=new_state.cumulative_utility,
        feasibility=feasibility,
        bound=bound,
    )
    logger.debug(f"{method} round {t}: {decision.num_selected} selected, Y={cost.utility:.6g}, acc={accuracy:.4f}")
    return new_state, trace


def run_method(
    context: ExperimentContext,
    method: str,
    rounds: int,
    progress: Optional[Callable[[str, int], None]] = None,
) -> MethodRun:
    """T rounds of one method; a failed round ends the run and is recorded"""
    state, accuracy, loss = initial_state(context)
    run = MethodRun(method=method, initial_accuracy=accuracy, initial_loss=loss)
    for _ in range(rounds):
        try:
            state, trace = run_round(context, state, method)
        except RoundError as e:
            run.error = str(e)
            break
        run.traces.append(trace)
        if progress is not None:
            progress(method, trace.round_index)
    if run.traces:
        logger.info(f"{method}: {len(run.traces)} rounds, final accuracy {run.traces[-1].test_accuracy:.4f}")
    return run


def run_experiment(
    config: ExperimentConfig,
    rounds: Optional[int] = None,
    methods: Optional[Sequence[str]] = None,
    context: Optional[ExperimentContext] = None,
    workers: Optional[int] = None,
) -> ExperimentResult:
    """
    Run every method on the same cell and data

    Args:
        config: Experiment document
        rounds: Number of rounds T (default: ``fl.rounds``)
        methods: Subset of ``METHODS`` (default: all)
        context: Prebuilt shared context
        workers: Parallel method runs (default: ``settings.worker_threads``)

    Returns:
        ExperimentResult keyed by method, in the requested order
    """
    rounds = config.fl.rounds if rounds is None else rounds
    methods = list(methods or METHODS)
    unknown = [m for m in methods if m not in METHOD_TAGS]
    if unknown:
        raise DomainError(f"unknown methods: {unknown}")
    context = context or ExperimentContext.build(config, rounds)
    workers = settings.worker_threads if workers is None else workers

    if workers > 1 and len(methods) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda m: run_method(context, m, rounds), methods))
    else:
        runs = [run_method(context, m, rounds) for m in methods]
    return ExperimentResult(runs={run.method: run for run in runs}, seed=context.scenario.seed)


def run_sweep(
    config: ExperimentConfig,
    parameter: str,
    values: Iterable,
    methods: Optional[Sequence[str]] = None,
    rounds: Optional[int] = None,
) -> pd.DataFrame:
    """
    Mean round latency, energy and utility per (value, method)

    System constants that do not change the sampled cell are swept on one
    shared scenario; anything else resamples it from the same seed.
    """
    rounds = config.fl.rounds if rounds is None else rounds
    section, _, name = parameter.partition(".")
    base = None
    if section == "system" and name not in _RESAMPLED_SYSTEM_FIELDS:
        base = ExperimentContext.build(config, rounds)

    rows = []
    for value in values:
        swept = override_config(config, parameter, value)
        context = base.with_config(swept) if base is not None else ExperimentContext.build(swept, rounds)
        result = run_experiment(swept, rounds, methods, context=context)
        for method, run in result.runs.items():
            n = len(run.traces)
            summary = run.summary()
            rows.append(
                {
                    "parameter": parameter,
                    "value": value,
                    "method": method,
                    "mean_latency": float(np.mean([tr.cost.round_latency for tr in run.traces])) if n else float("nan"),
                    "mean_energy": float(np.mean([tr.cost.round_energy for tr in run.traces])) if n else float("nan"),
                    "mean_utility": summary.cumulative_utility / n if n else float("nan"),
                    "final_accuracy": summary.final_accuracy,
                }
            )
        logger.info(f"sweep {parameter}={value} done")
    return pd.DataFrame(
        rows,
        columns=["parameter", "value", "method", "mean_latency", "mean_energy", "mean_utility", "final_accuracy"],
    )

