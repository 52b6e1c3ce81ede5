"""
Tabular artifacts built from decisions, bounds and experiment traces
"""

import logging
from dataclasses import asdict
from typing import Dict

import numpy as np
import pandas as pd

from app.core.config import ExperimentConfig
from app.core.exceptions import DomainError
from app.models.bound import BOUND_COLUMNS, BoundBreakdown
from app.models.decision import CostReport, RoundDecision
from app.models.trace import ExperimentResult
from app.services.brute_force import brute_force_oracle, oracle_gap
from app.services.csra_optimizer import solve_csra_round, verify_feasibility
from app.services.heterogeneity import client_divergences, kl_filter, partition_table
from app.services.scenario_service import build_partition, build_scenario
from app.services.wireless_cost import round_cost

logger = logging.getLogger(__name__)

ROUND_COLUMNS = ["round", "method", "selected_count", "T_t", "E_t", "Y_t", "train_loss", "test_accuracy", "bound_total"]
SUMMARY_COLUMNS = [
    "method",
    "rounds",
    "initial_accuracy",
    "final_accuracy",
    "cumulative_latency",
    "cumulative_energy",
    "cumulative_utility",
    "error",
]


def latency_slack(decision: RoundDecision, cost: CostReport) -> np.ndarray:
    """Epigraph slack per selected client; NaN for unselected clients"""
    slack = decision.upsilon - cost.alpha1 * cost.client_latency
    return np.where(decision.selected, slack, np.nan)


def partition_frame(config: ExperimentConfig) -> pd.DataFrame:
    spec = build_partition(config.system.num_clients, config.fl, config.system.rng_seed)
    return partition_table(spec)


def solve_frames(config: ExperimentConfig, round_index: int = 0, oracle: bool = False) -> Dict[str, pd.DataFrame]:
    """
    One CSRA round: decision, feasibility and objective tables

    With ``oracle`` the brute-force optimum is added when the eligible set is
    small enough; otherwise the oracle columns are left out with a warning.
    """
    if round_index < 0:
        raise DomainError("round index must be nonnegative")
    scenario = build_scenario(config, rounds=round_index + 1)
    result = solve_csra_round(scenario, round_index, config)
    decision = result.decision
    cost = round_cost(decision, scenario, round_index)
    feasibility = verify_feasibility(decision, scenario, round_index, smoothing=config.optimizer.kl_smoothing)

    eligible = np.zeros(scenario.num_clients, dtype=int)
    eligible[result.eligible] = 1
    decision_table = pd.DataFrame(
        {
            "round": round_index,
            "client": np.arange(scenario.num_clients),
            "a": decision.selection,
            "b": decision.bandwidth,
            "f": decision.frequency,
            "latency_slack": latency_slack(decision, cost),
            "eligible": eligible,
        }
    )
    objective = {
        "method": "csra",
        "selected_count": decision.num_selected,
        "T_t": cost.round_latency,
        "E_t": cost.round_energy,
        "Y_t": cost.utility,
        "p2_objective": decision.upsilon + cost.alpha2 * cost.round_energy,
        "repaired": bool(decision.metadata.get("repaired", False)),
    }

    if oracle:
        if result.eligible.size > config.optimizer.brute_force_max_clients:
            logger.warning(
                f"oracle skipped: {result.eligible.size} eligible clients exceed "
                f"{config.optimizer.brute_force_max_clients}"
            )
        else:
            best = brute_force_oracle(scenario, round_index, config, eligible=result.eligible)
            gap = oracle_gap(cost.utility, best.utility)
            decision_table["oracle_gap"] = gap
            objective["oracle_Y"] = best.utility
            objective["oracle_gap"] = gap

    return {
        "decision": decision_table,
        "feasibility": feasibility.to_frame(),
        "objective": pd.DataFrame([objective]),
    }


def bound_frame(breakdown: BoundBreakdown) -> pd.DataFrame:
    return pd.DataFrame([breakdown.as_row()], columns=list(BOUND_COLUMNS))


def trace_frames(result: ExperimentResult) -> Dict[str, pd.DataFrame]:
    """rounds, decisions and summary tables of an experiment"""
    rounds, decisions = [], []
    for method, run in result.runs.items():
        for trace in run.traces:
            cost = trace.cost
            rounds.append(
                {
                    "round": trace.round_index,
                    "method": method,
                    "selected_count": trace.decision.num_selected,
                    "T_t": cost.round_latency,
                    "E_t": cost.round_energy,
                    "Y_t": cost.utility,
                    "train_loss": trace.train_loss,
                    "test_accuracy": trace.test_accuracy,
                    "bound_total": trace.bound_total,
                }
            )
            d = trace.decision
            decisions.append(
                pd.DataFrame(
                    {
                        "round": trace.round_index,
                        "method": method,
                        "client": np.arange(d.num_clients),
                        "a": d.selection,
                        "b": d.bandwidth,
                        "f": d.frequency,
                        "latency_slack": latency_slack(d, cost),
                    }
                )
            )
    decision_columns = ["round", "method", "client", "a", "b", "f", "latency_slack"]
    summary = pd.DataFrame([asdict(s) for s in result.summaries()], columns=SUMMARY_COLUMNS)
    return {
        "rounds": pd.DataFrame(rounds, columns=ROUND_COLUMNS),
        "decisions": pd.concat(decisions, ignore_index=True) if decisions else pd.DataFrame(columns=decision_columns),
        "summary": summary,
    }


def scenario_bound_inputs(config: ExperimentConfig) -> dict:
    """Round-0 bound inputs for a cell: sizes and divergences of its eligible clients"""
    scenario = build_scenario(config, rounds=1)
    div = client_divergences(scenario, config.optimizer.kl_smoothing)
    idx = kl_filter(div, config.system.kl_threshold)
    return {
        "round_index": 0,
        "epochs": config.system.local_epochs,
        "client_sizes": scenario.dataset_sizes[idx].astype(float).tolist(),
        "kl_terms": div[idx].tolist(),
        "constants": config.fl.bound.model_dump(),
    }
