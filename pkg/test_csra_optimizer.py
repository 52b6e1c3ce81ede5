"""
Tests for the DC selection optimizer, rounding, feasibility checks and the oracle
"""

import itertools
from dataclasses import replace

import numpy as np
import pytest

from app.core.config import ExperimentConfig, SolverParams, override_config, parse_experiment_config
from app.core.exceptions import DomainError, InfeasibleError, SolverError
from app.models.decision import DcState, RoundDecision
from app.services.bandwidth import _waterfill, allocate_bandwidth
from app.services.brute_force import brute_force_oracle, oracle_gap
from app.services.csra_optimizer import (
    CONSTRAINT_NAMES,
    PenaltySubproblem,
    initial_point,
    round_and_repair,
    rounding_candidates,
    solve_csra_round,
    solve_dc,
    solve_subproblem,
    verify_feasibility,
)
from app.services.round_problem import build_round_problem
from app.services.scenario_service import build_scenario
from app.services.wireless_cost import round_cost


THRESHOLD_ONLY = SolverParams(rounding_search=False)


def make_state(problem, a, u, z=None):
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    return DcState(
        clients=problem.clients.copy(),
        a=a,
        z=u.copy() if z is None else np.asarray(z, dtype=float),
        u=u,
        upsilon=1.0,
        rho=0.0,
        iterations=1,
        objective_trace=(1.0,),
        reference_trace=(1.0,),
        rho_trace=(0.0,),
        integrality_trace=(float(np.sum(a - a ** 2)),),
        scale=1.0,
    )


@pytest.fixture
def pair_problem(small_scenario):
    return replace(build_round_problem(small_scenario, 0, [0, 1]), data_budget=0.0)


def test_initial_point_selects_everyone(small_scenario):
    problem = build_round_problem(small_scenario, 0)
    start = initial_point(problem)
    np.testing.assert_array_equal(start.a, np.ones(6))
    np.testing.assert_array_equal(start.z, np.full(6, 6.0))
    assert np.sum(1.0 / start.z) == pytest.approx(1.0)


def test_dc_iteration_is_monotone_and_feasible(small_scenario, small_config):
    """Test every accepted step keeps or lowers the penalized objective"""
    params = small_config.optimizer
    problem = build_round_problem(small_scenario, 0, b_min=params.b_min)
    state = solve_dc(problem, params)
    assert state.is_monotone()
    assert len(state.objective_trace) == state.iterations
    assert np.all((state.a >= 0) & (state.a <= 1))
    z_hi = 1.0 / params.b_min
    assert np.all(state.z >= 1 - 1e-9) and np.all(state.z <= z_hi + 1e-6)
    assert np.sum(1.0 / state.z) <= 1 + 1e-6
    # RLT envelopes of u = a * z
    tol = 1e-9 * z_hi
    assert np.all(state.u >= state.a - tol)
    assert np.all(state.u >= z_hi * state.a + state.z - z_hi - tol)
    assert np.all(state.u <= z_hi * state.a + tol)
    assert np.all(state.u <= state.z + state.a - 1 + tol)
    assert np.all(np.diff(state.rho_trace) >= 0)


def test_dc_refuses_empty_or_starved_problems(small_scenario):
    problem = build_round_problem(small_scenario, 0, [])
    with pytest.raises(InfeasibleError) as info:
        solve_dc(problem)
    assert info.value.constraint == "kl_threshold"
    starved = replace(build_round_problem(small_scenario, 0), data_budget=1e9)
    with pytest.raises(InfeasibleError) as info:
        solve_dc(starved)
    assert info.value.constraint == "data_budget"


def test_singleton_takes_the_whole_band(small_scenario):
    """Test one eligible client that must be selected"""
    k = int(np.argmax(small_scenario.dataset_sizes))
    problem = replace(build_round_problem(small_scenario, 0, [k]), data_budget=float(small_scenario.dataset_sizes[k]))
    state = solve_dc(problem)
    np.testing.assert_allclose(state.a, [1.0])
    decision = round_and_repair(state, problem)
    assert decision.selected_indices.tolist() == [k]
    assert decision.bandwidth[k] == pytest.approx(1.0, rel=1e-6)
    expected = problem.latency_coef[0] + problem.compute_latency()[0]
    assert decision.upsilon == pytest.approx(expected, rel=1e-6)


def test_rounding_then_repair_widens_the_band(pair_problem):
    """Test a = (0.9, 0.2) and u = 2.5 rounds to b = 0.4 and is repaired to the full band"""
    state = make_state(pair_problem, [0.9, 0.2], [2.5, 1.5])
    decision = round_and_repair(state, pair_problem, THRESHOLD_ONLY)
    assert decision.selection[:2].tolist() == [1.0, 0.0]
    assert decision.bandwidth[0] == pytest.approx(1.0)
    assert decision.bandwidth[1] == 0.0
    assert decision.metadata["repaired"] is True
    assert decision.metadata["forced_selection"] == []
    assert decision.metadata["rounding"] == "threshold"


def test_rounding_keeps_an_integral_optimum(pair_problem):
    state = make_state(pair_problem, [1.0, 0.0], [1.0, 1.0])
    for params in (THRESHOLD_ONLY, SolverParams()):
        decision = round_and_repair(state, pair_problem, params)
        assert decision.selection[:2].tolist() == [1.0, 0.0]
        assert decision.bandwidth[0] == 1.0
        assert decision.metadata["repaired"] is False


def test_rounding_ties_round_down(pair_problem):
    state = make_state(pair_problem, [0.5, 0.5], [2.0, 2.0])
    decision = round_and_repair(state, pair_problem, THRESHOLD_ONLY)
    assert decision.num_selected == 0
    assert decision.metadata["repaired"] is False


def test_rounding_is_strictly_above_one_half(pair_problem):
    state = make_state(pair_problem, [0.5, 0.5 + 1e-6], [2.0, 2.0])
    decision = round_and_repair(state, pair_problem, THRESHOLD_ONLY)
    assert decision.selected_indices.tolist() == [int(pair_problem.clients[1])]


def test_rounding_below_threshold_misses_the_budget(pair_problem):
    budgeted = replace(pair_problem, data_budget=float(pair_problem.dataset_sizes.max()))
    state = make_state(budgeted, [0.2, 0.3], [2.0, 2.0])
    with pytest.raises(InfeasibleError) as info:
        round_and_repair(state, budgeted, SolverParams(force_selection=False))
    assert info.value.constraint == "data_budget"


def test_force_selection_covers_the_budget(pair_problem):
    budgeted = replace(pair_problem, data_budget=float(pair_problem.dataset_sizes.max()))
    state = make_state(budgeted, [0.2, 0.3], [2.0, 2.0])
    decision = round_and_repair(state, budgeted, THRESHOLD_ONLY)
    largest = int(budgeted.clients[np.lexsort((np.arange(2), -budgeted.dataset_sizes))[0]])
    assert decision.metadata["forced_selection"] == [largest]
    assert decision.selected_indices.tolist() == [largest]
    assert decision.bandwidth[largest] == pytest.approx(1.0)


@pytest.fixture
def uneven_problem(scenario_factory):
    """Three identical radios; client 0 holds more data than the budget needs"""
    config = parse_experiment_config({"system": {"kl_threshold": float("inf"), "data_budget": 300.0}})
    scenario = scenario_factory([400, 300, 300], config=config)
    return scenario, build_round_problem(scenario, 0)


def test_rounding_candidates_follow_relaxed_selection(uneven_problem):
    _, problem = uneven_problem
    state = make_state(problem, [0.2, 0.3, 0.3], [3.0, 3.0, 3.0])
    candidates = [c.tolist() for c in rounding_candidates(state, problem)]
    assert candidates == [[False, True, False], [False, True, True], [True, True, True]]
    for candidate in rounding_candidates(state, problem):
        assert problem.dataset_sizes[candidate].sum() >= problem.data_budget


def test_rounding_candidates_empty_when_budget_unreachable(uneven_problem):
    _, problem = uneven_problem
    starved = replace(problem, data_budget=5000.0)
    state = make_state(starved, [0.2, 0.3, 0.3], [3.0, 3.0, 3.0])
    assert rounding_candidates(state, starved) == []


def test_search_beats_forced_largest_client(uneven_problem):
    """Test a fractional point: forcing the largest client loses to the smaller top-ranked one"""
    scenario, problem = uneven_problem
    state = make_state(problem, [0.2, 0.3, 0.3], [3.0, 3.0, 3.0])
    forced = round_and_repair(state, problem, THRESHOLD_ONLY)
    assert forced.selected_indices.tolist() == [0]
    assert forced.metadata["forced_selection"] == [0]

    searched = round_and_repair(state, problem)
    assert searched.selected_indices.tolist() == [1]
    assert searched.metadata["rounding"] == "search"
    assert searched.metadata["forced_selection"] == []
    assert searched.bandwidth[1] == pytest.approx(1.0)
    assert round_cost(searched, scenario, 0).utility < round_cost(forced, scenario, 0).utility
    report = verify_feasibility(searched, scenario, 0)
    assert report.passed, report.failed()


def test_dc_stops_only_when_integral_or_out_of_budget(small_scenario, small_config):
    params = small_config.optimizer
    problem = build_round_problem(small_scenario, 0, b_min=params.b_min)
    state = solve_dc(problem, params)
    assert state.converged or state.iterations == params.dc_max_iters or state.rho >= params.rho_max
    if state.converged:
        assert state.integrality_trace[-1] <= params.integrality_tolerance * problem.size


def test_dc_penalty_weight_is_capped(small_scenario):
    params = SolverParams(rho_max=1e-3, dc_max_iters=20)
    problem = build_round_problem(small_scenario, 0, b_min=params.b_min)
    state = solve_dc(problem, params)
    assert max(state.rho_trace) <= params.rho_max
    assert np.all(np.diff(state.rho_trace) >= 0)
    assert state.is_monotone()


def test_waterfill_at_the_unconstrained_split():
    b = _waterfill(np.array([0.1, 0.1]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(b, [0.5, 0.5])
    b = _waterfill(np.array([0.6, 0.1]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(b, [0.6, 0.4], rtol=1e-12)
    np.testing.assert_allclose(_waterfill(np.array([1e-4]), np.array([2.0])), [1.0])


@pytest.mark.parametrize("method", ["dual", "grid"])
def test_bandwidth_on_single_clients(small_scenario, method):
    for k in range(small_scenario.num_clients):
        problem = build_round_problem(small_scenario, 0, [k])
        allocation = allocate_bandwidth(problem, method=method)
        assert allocation.bandwidth.tolist() == pytest.approx([1.0])
        expected = problem.latency_coef[0] + problem.compute_latency()[0]
        assert allocation.upsilon == pytest.approx(expected, rel=1e-9)


def test_bandwidth_on_random_subsets(small_scenario):
    rng = np.random.default_rng(11)
    K = small_scenario.num_clients
    for round_index in range(3):
        for _ in range(12):
            size = int(rng.integers(1, K + 1))
            clients = np.sort(rng.choice(K, size=size, replace=False))
            problem = build_round_problem(small_scenario, round_index, clients)
            allocation = allocate_bandwidth(problem)
            assert allocation.bandwidth.sum() == pytest.approx(1.0, rel=1e-9)
            assert np.all(allocation.bandwidth >= problem.b_min * (1 - 1e-9))
            assert np.isfinite(allocation.objective)


def test_round_and_repair_checks_client_sets(pair_problem, small_scenario):
    other = build_round_problem(small_scenario, 0, [2, 3])
    with pytest.raises(SolverError):
        round_and_repair(make_state(other, [1.0, 0.0], [1.0, 1.0]), pair_problem)


def test_fixed_selection_reduces_to_bandwidth_split(small_scenario):
    """Test pinning a turns the subproblem into the convex bandwidth problem"""
    problem = build_round_problem(small_scenario, 0, [0, 2, 3, 5])
    sub = PenaltySubproblem(problem, SolverParams(), fixed_selection=np.ones(4))
    solution = sub.solve(np.ones(4), 0.0)
    reference = allocate_bandwidth(problem)
    assert solution.objective * sub.scale == pytest.approx(reference.objective, rel=1e-4)


def test_relaxation_lower_bounds_every_selection(small_scenario):
    problem = build_round_problem(small_scenario, 0)
    relaxed = PenaltySubproblem(problem, SolverParams())
    value = relaxed.solve(np.ones(problem.size), 0.0).objective * relaxed.scale
    best = np.inf
    for size in range(1, problem.size + 1):
        for positions in itertools.combinations(range(problem.size), size):
            positions = list(positions)
            if problem.dataset_sizes[positions].sum() < problem.data_budget:
                continue
            best = min(best, allocate_bandwidth(problem.subset(positions)).objective)
    # unselected clients still hold b_min each in the relaxation
    assert value <= best * (1 + 2e-3)


def test_solve_subproblem_matches_class(small_scenario):
    problem = build_round_problem(small_scenario, 0, [0, 1, 2])
    direct = solve_subproblem(problem, np.ones(3), 0.0)
    assert direct.status in ("optimal", "optimal_inaccurate")
    assert np.all((direct.a >= 0) & (direct.a <= 1))


def test_pipeline_decision_passes_every_check(small_scenario, small_config):
    """Test the full round on the six-client cell"""
    result = solve_csra_round(small_scenario, 0, small_config)
    decision = result.decision
    report = verify_feasibility(decision, small_scenario, 0)
    assert report.passed, report.failed()
    assert [c.name for c in report.checks] == list(CONSTRAINT_NAMES)
    assert decision.num_selected >= 1
    assert np.all(decision.frequency <= small_scenario.max_frequency_hz)
    assert decision.bandwidth.sum() <= 1 + 1e-9
    cost = round_cost(decision, small_scenario, 0)
    assert cost.round_latency * small_config.system.alpha1 <= decision.upsilon * (1 + 1e-6)
    assert "dual_converged" in decision.metadata


def test_pipeline_is_deterministic(small_scenario, small_config):
    a = solve_csra_round(small_scenario, 1, small_config).decision
    b = solve_csra_round(small_scenario, 1, small_config).decision
    np.testing.assert_array_equal(a.selection, b.selection)
    np.testing.assert_array_equal(a.bandwidth, b.bandwidth)
    np.testing.assert_array_equal(a.frequency, b.frequency)


def test_feasibility_report_flags_bandwidth_overrun(small_scenario):
    K = small_scenario.num_clients
    selection = np.zeros(K)
    selection[[0, 1]] = 1.0
    bandwidth = np.zeros(K)
    bandwidth[[0, 1]] = [0.5, 0.51]
    frequency = selection * small_scenario.max_frequency_hz
    decision = RoundDecision(selection, bandwidth, frequency, upsilon=1e6)
    report = verify_feasibility(decision, small_scenario, 0, data_budget=0.0)
    assert not report.passed
    assert report.failed() == ["bandwidth_budget"]
    assert report.slack("bandwidth_budget") == pytest.approx(-0.01)
    frame = report.to_frame()
    assert list(frame.columns) == ["constraint", "slack", "passed"]


def test_feasibility_report_flags_idle_violations(small_scenario):
    K = small_scenario.num_clients
    decision = RoundDecision(np.zeros(K), np.full(K, 0.1), np.zeros(K))
    report = verify_feasibility(decision, small_scenario, 0, constraints=["unselected_idle", "data_budget"])
    assert report.failed() == ["unselected_idle", "data_budget"]
    with pytest.raises(ValueError):
        verify_feasibility(decision, small_scenario, 0, constraints=["no_such_constraint"])


def test_feasibility_kl_threshold(small_scenario):
    K = small_scenario.num_clients
    selection = np.eye(K)[0]
    decision = RoundDecision(selection, selection.copy(), selection * small_scenario.max_frequency_hz, upsilon=1e6)
    report = verify_feasibility(decision, small_scenario, 0, constraints=["kl_threshold"], kl_threshold=-1.0)
    assert not report.passed
    relaxed = verify_feasibility(decision, small_scenario, 0, constraints=["kl_threshold"])
    assert relaxed.passed


def test_oracle_singleton_matches_closed_form(small_scenario):
    k = int(np.argmax(small_scenario.dataset_sizes))
    scenario = small_scenario.with_system(data_budget=float(small_scenario.dataset_sizes[k]))
    result = brute_force_oracle(scenario, 0, eligible=[k])
    problem = build_round_problem(scenario, 0, [k])
    expected_latency = (problem.latency_coef[0] + problem.compute_latency()[0]) / scenario.system.alpha1
    selection = np.eye(scenario.num_clients)[k]
    decision = RoundDecision(selection, selection.copy(), selection * scenario.max_frequency_hz)
    expected = round_cost(decision, scenario, 0)
    assert result.utility == pytest.approx(expected.utility, rel=1e-8)
    assert expected.round_latency == pytest.approx(expected_latency, rel=1e-12)
    assert result.evaluated == 1


def _twin_config():
    return parse_experiment_config({"system": {"kl_threshold": float("inf"), "data_budget": 400.0}})


def test_identical_twins_select_one(scenario_factory):
    """Test two identical clients: one is enough and both CSRA and the oracle find it"""
    config = _twin_config()
    scenario = scenario_factory([400, 400], config=config)
    oracle = brute_force_oracle(scenario, 0, config)
    assert oracle.decision.num_selected == 1
    swapped = brute_force_oracle(scenario, 0, config, eligible=[1])
    assert swapped.utility == pytest.approx(oracle.utility, rel=1e-12)

    result = solve_csra_round(scenario, 0, config)
    assert result.decision.num_selected == 1
    y = round_cost(result.decision, scenario, 0).utility
    assert y == pytest.approx(oracle.utility, rel=1e-6)


@pytest.mark.parametrize("factor", [0.5, 2.0, 8.0])
def test_selection_ignores_a_common_weight_scale(small_scenario, small_config, factor):
    """Test scaling alpha1 and alpha2 together leaves both selections unchanged"""
    system = small_scenario.system
    scaled = small_scenario.with_system(alpha1=factor * system.alpha1, alpha2=factor * system.alpha2)
    base = solve_csra_round(small_scenario, 0, small_config).decision
    other = solve_csra_round(scaled, 0, small_config).decision
    np.testing.assert_array_equal(other.selection, base.selection)

    oracle = brute_force_oracle(small_scenario, 0, small_config)
    scaled_oracle = brute_force_oracle(scaled, 0, small_config)
    np.testing.assert_array_equal(scaled_oracle.decision.selection, oracle.decision.selection)
    assert scaled_oracle.utility == pytest.approx(factor * oracle.utility, rel=1e-9)


def test_oracle_refuses_large_cells(small_scenario):
    config = override_config(ExperimentConfig(), "optimizer.brute_force_max_clients", 2)
    with pytest.raises(DomainError):
        brute_force_oracle(small_scenario, 0, config)


def test_oracle_without_feasible_selection(small_scenario):
    scenario = small_scenario.with_system(data_budget=1e9)
    with pytest.raises(InfeasibleError):
        brute_force_oracle(scenario, 0)


def test_oracle_with_no_budget_selects_nobody(small_scenario):
    scenario = small_scenario.with_system(data_budget=0.0)
    result = brute_force_oracle(scenario, 0)
    assert result.utility == 0.0
    assert result.decision.num_selected == 0


def test_oracle_gap():
    assert oracle_gap(1.02, 1.0) == pytest.approx(0.02)
    assert oracle_gap(0.0, 0.0) == 0.0
    assert oracle_gap(1.0, 0.0) == float("inf")


def test_oracle_decision_is_feasible(small_scenario, small_config):
    result = brute_force_oracle(small_scenario, 0, small_config)
    assert verify_feasibility(result.decision, small_scenario, 0).passed
    assert result.evaluated >= 1


@pytest.mark.acceptance
def test_rounded_objective_close_to_optimum(small_document):
    """Test the relaxation gap over 200 seeded cells of four, six and eight clients"""
    within = 0
    instances = [((4, 6, 8)[i % 3], i) for i in range(200)]
    for K, seed in instances:
        small_document["system"]["num_clients"] = K
        config = parse_experiment_config(small_document)
        scenario = build_scenario(config, seed=seed, rounds=1)
        result = solve_csra_round(scenario, 0, config)
        assert result.dc_state.is_monotone()
        assert verify_feasibility(result.decision, scenario, 0).passed
        y = round_cost(result.decision, scenario, 0).utility
        best = brute_force_oracle(scenario, 0, config).utility
        within += y <= 1.02 * best
    assert within >= 0.95 * len(instances)


@pytest.mark.acceptance
def test_pipeline_soak(small_config):
    for seed in range(100):
        scenario = build_scenario(small_config, seed=seed, rounds=1)
        decision = solve_csra_round(scenario, 0, small_config).decision
        assert verify_feasibility(decision, scenario, 0).passed
