#!/usr/bin/env python3
"""
Example usage of FedSelectAPI
This script walks through the library: a sampled cell, one optimized round,
the brute-force check on a small cell, the bound and a short paired run.
"""

from app.core.config import ExperimentConfig, override_config
from app.services.brute_force import brute_force_oracle, oracle_gap
from app.services.csra_optimizer import solve_csra_round, verify_feasibility
from app.services.heterogeneity import client_divergences
from app.services.reports import trace_frames
from app.services.scenario_service import build_scenario
from app.services.wireless_cost import round_cost
from app.tasks.experiment_tasks import run_experiment


def scenario_example(config: ExperimentConfig):
    """Example: Sample a cell and inspect its heterogeneity"""
    print("🔹 Sampling a cell...")
    scenario = build_scenario(config, rounds=1)
    div = client_divergences(scenario)
    print(f"✅ {scenario.num_clients} clients, {int(scenario.dataset_sizes.sum())} samples")
    print(f"   Clients within the KL threshold: {int((div <= config.system.kl_threshold).sum())}")
    return scenario


def solve_example(config: ExperimentConfig, scenario):
    """Example: Optimize one round"""
    print("🔹 Solving round 0...")
    result = solve_csra_round(scenario, 0, config)
    decision = result.decision
    cost = round_cost(decision, scenario, 0)
    report = verify_feasibility(decision, scenario, 0)
    print(f"✅ Selected {decision.num_selected} clients in {result.dc_state.iterations} DC iterations")
    print(f"   T={cost.round_latency:.4f} s  E={cost.round_energy:.4f} J  Y={cost.utility:.4f}")
    print(f"   Feasible: {report.passed}")


def oracle_example():
    """Example: Compare against exhaustive enumeration on a six-client cell"""
    print("🔹 Brute-force check on a small cell...")
    small = ExperimentConfig()
    for field, value in (
        ("system.num_clients", 6),
        ("system.data_budget", 300),
        ("system.kl_threshold", float("inf")),
        ("fl.train_samples", 1200),
    ):
        small = override_config(small, field, value)
    scenario = build_scenario(small, rounds=1)
    csra = solve_csra_round(scenario, 0, small)
    y = round_cost(csra.decision, scenario, 0).utility
    best = brute_force_oracle(scenario, 0, small)
    print(f"✅ CSRA Y={y:.5f}, optimum Y={best.utility:.5f}, gap {100 * oracle_gap(y, best.utility):.2f}%")


def experiment_example(config: ExperimentConfig):
    """Example: A short paired run of three methods"""
    print("🔹 Running 5 rounds of csra, fedavg and pow...")
    result = run_experiment(config, rounds=5, methods=["csra", "fedavg", "pow"])
    summary = trace_frames(result)["summary"]
    print(summary[["method", "final_accuracy", "cumulative_latency", "cumulative_energy"]].to_string(index=False))


def main():
    """Main example function"""
    print("🚀 FedSelectAPI Example Usage")
    print("=" * 50)

    config = ExperimentConfig()
    scenario = scenario_example(config)
    print()
    solve_example(config, scenario)
    print()
    oracle_example()
    print()
    experiment_example(config)

    print("=" * 50)
    print("🎉 Example completed!")


if __name__ == "__main__":
    main()
