"""
Joint client selection and bandwidth allocation

The round problem is rewritten in epigraph form over the eligible clients with
z = 1/b and u = a*z. The bilinear u is replaced by its four RLT envelopes on
a in [0, 1], z in [1, 1/b_min], and integrality of a is folded into the
objective as rho * sum(a - a^2). The concave part is linearized at the
previous iterate and each convex subproblem is solved by an interior-point
conic solver through cvxpy. The relaxed point is then rounded, repaired and
handed to the frequency stage.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import cvxpy as cp
import numpy as np

from app.core.config import ExperimentConfig, SolverParams
from app.core.exceptions import InfeasibleError, SolverError
from app.models.decision import (
    FEASIBILITY_TOLERANCE,
    ConstraintCheck,
    DcState,
    FeasibilityReport,
    FrequencyAllocation,
    RoundDecision,
)
from app.models.scenario import Scenario
from app.services.bandwidth import BandwidthAllocation, allocate_bandwidth
from app.services.freq_alloc import dual_subgradient_allocate, projected_frequency_solve
from app.services.heterogeneity import client_divergences, kl_filter
from app.services.round_problem import RoundProblem, build_round_problem, p2_objective
from app.services.wireless_cost import spectral_rates

logger = logging.getLogger(__name__)

INTEGRAL_SNAP = 1e-9
CONSTRAINT_NAMES = (
    "selection_binary",
    "bandwidth_budget",
    "bandwidth_nonnegative",
    "frequency_cap",
    "frequency_nonnegative",
    "kl_threshold",
    "data_budget",
    "epigraph",
    "unselected_idle",
)


@dataclass(frozen=True)
class SubproblemSolution:
    """Candidate-indexed point of the relaxation; ``upsilon`` and ``objective`` are normalized"""

    a: np.ndarray
    z: np.ndarray
    u: np.ndarray
    upsilon: float
    objective: float
    status: str = "optimal"


def _project_u(a, z, u, z_hi):
    lower = np.maximum(a, z_hi * a + z - z_hi)
    upper = np.minimum(z_hi * a, z + a - 1.0)
    return np.clip(u, lower, np.maximum(lower, upper))


def _snap(a: np.ndarray) -> np.ndarray:
    a = np.clip(a, 0.0, 1.0)
    a = np.where(a < INTEGRAL_SNAP, 0.0, a)
    return np.where(a > 1.0 - INTEGRAL_SNAP, 1.0, a)


class PenaltySubproblem:
    """
    Linearized penalty subproblem over the candidates of a round problem

    Coefficients are divided by the objective value of the uniform-bandwidth
    all-selected point, so that point scores 1. The problem is compiled once;
    successive DC iterations only update the linearization parameters.
    """

    def __init__(self, problem: RoundProblem, params: SolverParams, fixed_selection: Optional[np.ndarray] = None):
        self.problem = problem
        self.params = params
        n = problem.size
        self.z_hi = 1.0 / problem.b_min
        self.l = problem.latency_coef
        self.t = problem.compute_latency()
        self.w = problem.energy_coef
        self.e = problem.compute_energy()
        if not (np.all(np.isfinite(self.l)) and np.all(np.isfinite(self.t))):
            raise InfeasibleError("an eligible client has zero rate or zero frequency", "epigraph")

        start = initial_point(problem)
        self.scale = float(np.max(self.l * start.z + self.t) + np.sum(self.w * start.z + self.e))
        s = self.scale

        self.a = cp.Variable(n)
        self.z = cp.Variable(n)
        self.u = cp.Variable(n)
        self.upsilon = cp.Variable()
        self.lin = cp.Parameter(n)
        self.const = cp.Parameter()

        constraints = [
            cp.sum(cp.inv_pos(self.z)) <= 1,
            cp.multiply(self.l / s, self.u) + cp.multiply(self.t / s, self.a) <= self.upsilon,
            self.u >= self.a,
            self.u >= self.z_hi * self.a + self.z - self.z_hi,
            self.u <= self.z_hi * self.a,
            self.u <= self.z + self.a - 1,
            self.a >= 0,
            self.a <= 1,
            self.z >= 1,
            self.z <= self.z_hi,
        ]
        if problem.data_budget > 0:
            constraints.append((problem.dataset_sizes / problem.data_budget) @ self.a >= 1)
        if fixed_selection is not None:
            constraints.append(self.a == np.asarray(fixed_selection, dtype=float))
        objective = self.upsilon + (self.w / s) @ self.u + (self.e / s) @ self.a + self.lin @ self.a + self.const
        self.cvx = cp.Problem(cp.Minimize(objective), constraints)

        self.a.value = start.a
        self.z.value = start.z
        self.u.value = start.u
        self.upsilon.value = start.upsilon / s

    def penalized_value(self, a, z, u, rho: float) -> float:
        """Normalized penalty objective at a point (exact, not linearized)"""
        s = self.scale
        upsilon = float(np.max((self.l * u + self.t * a) / s)) if a.size else 0.0
        return upsilon + float((self.w / s) @ u + (self.e / s) @ a) + rho * float(np.sum(a - a ** 2))

    def solve(self, a_prev: np.ndarray, rho: float) -> SubproblemSolution:
        self.lin.value = rho * (1.0 - 2.0 * a_prev)
        self.const.value = rho * float(np.sum(a_prev ** 2))
        tol = self.params.solver_tolerance
        options = {}
        if self.params.inner_solver.upper() == "CLARABEL":
            options = {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol}
        try:
            self.cvx.solve(solver=self.params.inner_solver.upper(), **options)
        except cp.error.SolverError as e:
            logger.error(f"inner solver failed: {str(e)}")
            raise SolverError(f"inner solver failed: {e}", self._dump(a_prev, rho)) from e

        status = self.cvx.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleError("penalty subproblem is infeasible", "data_budget")
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or self.a.value is None:
            raise SolverError(f"inner solver returned status {status}", self._dump(a_prev, rho))
        if status == cp.OPTIMAL_INACCURATE:
            logger.warning("inner solver reported an inaccurate optimum")

        a = _snap(np.asarray(self.a.value, dtype=float))
        z = np.clip(np.asarray(self.z.value, dtype=float), 1.0, self.z_hi)
        u = _project_u(a, z, np.asarray(self.u.value, dtype=float), self.z_hi)
        upsilon = float(np.max((self.l * u + self.t * a) / self.scale))
        return SubproblemSolution(a, z, u, upsilon, self.penalized_value(a, z, u, rho), status)

    def _dump(self, a_prev, rho):
        return {
            "a_prev": np.asarray(a_prev).tolist(),
            "rho": rho,
            "a": None if self.a.value is None else np.asarray(self.a.value).tolist(),
            "z": None if self.z.value is None else np.asarray(self.z.value).tolist(),
            "status": self.cvx.status,
        }


def initial_point(problem: RoundProblem) -> SubproblemSolution:
    """All eligible clients selected with an even bandwidth split"""
    n = problem.size
    a = np.ones(n)
    z = np.full(n, float(n))
    u = z.copy()
    upsilon = float(np.max(problem.latency_coef * u + problem.compute_latency() * a)) if n else 0.0
    return SubproblemSolution(a, z, u, upsilon, float("nan"))


def solve_subproblem(
    problem: RoundProblem,
    a_prev: np.ndarray,
    rho: float,
    params: Optional[SolverParams] = None,
    fixed_selection: Optional[np.ndarray] = None,
) -> SubproblemSolution:
    """
    Solve one linearized penalty subproblem

    Args:
        problem: Round problem over the eligible clients
        a_prev: Linearization point
        rho: Penalty weight in normalized units
        params: Solver settings
        fixed_selection: Pin a to this vector (bandwidth-only problem)
    """
    return PenaltySubproblem(problem, params or SolverParams(), fixed_selection).solve(np.asarray(a_prev, dtype=float), rho)


def solve_dc(problem: RoundProblem, params: Optional[SolverParams] = None) -> DcState:
    """
    Penalty DC iteration from the all-selected start

    The penalty weight starts at ``rho_init / n`` in normalized units and grows
    by ``rho_growth`` whenever the integrality residual fails to shrink tenfold
    over ``rho_patience`` iterations or the iteration stalls at a fractional
    point, up to ``rho_max``. The loop ends at an integral stationary point,
    after ``dc_max_iters`` steps or when it stalls at ``rho_max``. An iterate
    that would increase the penalized objective under the current weight is
    rejected, so every recorded step is nonincreasing.

    Args:
        problem: Round problem over the eligible clients, frequencies fixed
        params: Solver settings

    Returns:
        DcState over the eligible clients
    """
    params = params or SolverParams()
    n = problem.size
    if n == 0:
        raise InfeasibleError("no eligible client", "kl_threshold")
    if problem.dataset_sizes.sum() < problem.data_budget:
        raise InfeasibleError(
            f"eligible clients hold {problem.dataset_sizes.sum():.0f} samples, below the budget {problem.data_budget:.0f}",
            "data_budget",
        )

    sub = PenaltySubproblem(problem, params)
    start = initial_point(problem)
    rho = min(params.rho_init / n, params.rho_max)
    current = SubproblemSolution(start.a, start.z, start.u, start.upsilon / sub.scale, sub.penalized_value(start.a, start.z, start.u, rho))

    objective_trace, reference_trace, rho_trace, integrality_trace = [], [], [], []
    rejected = 0
    converged = False
    iterations = 0

    for tau in range(1, params.dc_max_iters + 1):
        iterations = tau
        reference = sub.penalized_value(current.a, current.z, current.u, rho)
        candidate = sub.solve(current.a, rho)
        if candidate.objective > reference + FEASIBILITY_TOLERANCE * max(1.0, abs(reference)):
            rejected += 1
            logger.debug(f"DC step {tau} rejected: {candidate.objective:.12g} > {reference:.12g}")
            candidate = SubproblemSolution(current.a, current.z, current.u, current.upsilon, reference)

        residual = float(np.sum(candidate.a - candidate.a ** 2))
        objective_trace.append(candidate.objective)
        reference_trace.append(reference)
        rho_trace.append(rho)
        integrality_trace.append(residual)

        improvement = (reference - candidate.objective) / max(abs(reference), 1e-12)
        current = candidate
        logger.debug(f"DC step {tau}: objective={candidate.objective:.10g} rho={rho:.4g} integrality={residual:.3g}")

        integral = residual <= params.integrality_tolerance * n
        stalled = improvement < params.dc_tolerance
        if stalled and integral:
            converged = True
            break
        # a fractional vertex of the data-budget polytope is a fixed point for any rho
        if stalled and rho >= params.rho_max:
            break
        slow = tau > params.rho_patience and residual > integrality_trace[-1 - params.rho_patience] / 10.0
        if (stalled and not integral) or slow:
            rho = min(rho * params.rho_growth, params.rho_max)

    if not converged:
        logger.warning(
            f"DC iteration ended after {iterations} steps at rho={rho:.3g} "
            f"with integrality residual {integrality_trace[-1]:.3g}"
        )

    return DcState(
        clients=problem.clients.copy(),
        a=current.a,
        z=current.z,
        u=current.u,
        upsilon=current.upsilon * sub.scale,
        rho=rho,
        iterations=iterations,
        objective_trace=tuple(objective_trace),
        reference_trace=tuple(reference_trace),
        rho_trace=tuple(rho_trace),
        integrality_trace=tuple(integrality_trace),
        scale=sub.scale,
        converged=converged,
        rejected_steps=rejected,
    )


def _selection_utility(
    problem: RoundProblem, positions: np.ndarray, params: SolverParams
) -> Tuple[float, Optional[BandwidthAllocation]]:
    """Round utility of a selection after the bandwidth re-solve and the exact frequency solve"""
    if positions.size == 0:
        return 0.0, None
    sub = problem.subset(positions)
    allocation = allocate_bandwidth(sub, method=params.bandwidth_method, resolution=params.grid_resolution)
    f = projected_frequency_solve(sub, allocation.bandwidth, allocation.upsilon)
    return p2_objective(sub, np.ones(sub.size, dtype=bool), allocation.bandwidth, f), allocation


def rounding_candidates(state: DcState, problem: RoundProblem) -> List[np.ndarray]:
    """
    Top-k selections by relaxed a that meet the data budget

    Clients are ranked by relaxed a, then by full-band weighted cost per
    sample, then by index. k runs from the smallest prefix covering the
    budget up to the support of a.
    """
    n = problem.size
    if n == 0:
        return []
    d = problem.dataset_sizes
    cost = problem.latency_coef + problem.compute_latency() + problem.energy_coef + problem.compute_energy()
    order = np.lexsort((np.arange(n), cost / np.maximum(d, 1.0), -state.a))
    covered = np.cumsum(d[order])
    reachable = np.flatnonzero(covered >= problem.data_budget)
    if reachable.size == 0:
        return []
    k_budget = max(1, int(reachable[0]) + 1)
    support = int(np.sum(state.a > INTEGRAL_SNAP))
    candidates = []
    for k in range(k_budget, max(k_budget, support) + 1):
        selected = np.zeros(n, dtype=bool)
        selected[order[:k]] = True
        candidates.append(selected)
    return candidates


def _build_decision(problem: RoundProblem, selected: np.ndarray, b: np.ndarray, metadata: dict) -> RoundDecision:
    positions = np.flatnonzero(selected)
    sub = problem.subset(positions)
    latency = sub.latency_coef / b[positions] + sub.compute_latency()
    return RoundDecision(
        selection=problem.expand(selected.astype(float)),
        bandwidth=problem.expand(b),
        frequency=problem.expand(np.where(selected, problem.frequency, 0.0)),
        upsilon=float(np.max(latency)),
        metadata=metadata,
    )


def round_and_repair(state: DcState, problem: RoundProblem, params: Optional[SolverParams] = None) -> RoundDecision:
    """
    Round a relaxed point and repair its bandwidth

    a_k <- 1 iff relaxed a_k > ``rounding_threshold`` (ties round down) and
    b_k <- 1/u_k. A data-budget deficit is covered by force-selecting the
    largest unselected eligible clients when ``force_selection`` is set. The
    bandwidth is then re-solved with the selection fixed and kept whenever the
    rounded split is infeasible or the re-solve improves the objective.

    With ``rounding_search`` the top-k selections by relaxed a are scored as
    well, each with its re-solved bandwidth and exact frequencies, and one that
    beats the rounded selection replaces it (``metadata["rounding"]``).

    Args:
        state: Output of ``solve_dc``
        problem: The round problem ``state`` was computed on
        params: Solver settings

    Returns:
        RoundDecision over all K clients; frequencies are the problem's
    """
    params = params or SolverParams()
    if not np.array_equal(state.clients, problem.clients):
        raise SolverError("DC state and round problem cover different clients")
    selected = state.a > params.rounding_threshold
    forced = []
    budget = problem.data_budget

    if problem.dataset_sizes[selected].sum() < budget:
        if not params.force_selection:
            raise InfeasibleError("rounded selection misses the data budget", "data_budget")
        order = sorted(np.flatnonzero(~selected), key=lambda i: (-problem.dataset_sizes[i], i))
        for i in order:
            if problem.dataset_sizes[selected].sum() >= budget:
                break
            selected[i] = True
            forced.append(int(problem.clients[i]))
        if problem.dataset_sizes[selected].sum() < budget:
            raise InfeasibleError("eligible clients cannot meet the data budget", "data_budget")
        logger.warning(f"force-selected clients {forced} to meet the data budget")

    metadata = {
        "repaired": False,
        "forced_selection": forced,
        "rounding": "threshold",
        "dc_iterations": state.iterations,
        "dc_converged": state.converged,
    }

    threshold_allocation = None
    if params.rounding_search:
        best_value, threshold_allocation = _selection_utility(problem, np.flatnonzero(selected), params)
        best = None
        for candidate in rounding_candidates(state, problem):
            if np.array_equal(candidate, selected):
                continue
            value, allocation = _selection_utility(problem, np.flatnonzero(candidate), params)
            if value < best_value * (1.0 - 1e-9):
                best_value, best = value, (candidate, allocation)
        if best is not None:
            candidate, allocation = best
            b = np.zeros(problem.size)
            b[candidate] = allocation.bandwidth
            logger.info(f"top-{int(candidate.sum())} selection replaces the rounded one, utility {best_value:.6g}")
            metadata.update(repaired=True, forced_selection=[], rounding="search")
            return _build_decision(problem, candidate, b, metadata)

    if not selected.any():
        return RoundDecision.empty(problem.num_clients, **metadata)

    with np.errstate(divide="ignore"):
        b = np.where(selected, 1.0 / np.where(state.u > 0, state.u, np.nan), 0.0)
    f = np.where(selected, problem.frequency, 0.0)
    rounded_ok = bool(np.all(np.isfinite(b[selected]))) and b[selected].sum() <= 1 + FEASIBILITY_TOLERANCE and np.all(b[selected] > 0)
    rounded_value = p2_objective(problem, selected, np.nan_to_num(b, nan=0.0), f) if rounded_ok else float("inf")

    positions = np.flatnonzero(selected)
    allocation = threshold_allocation or allocate_bandwidth(
        problem.subset(positions), method=params.bandwidth_method, resolution=params.grid_resolution
    )
    if not rounded_ok or allocation.objective < rounded_value * (1.0 - params.repair_improvement):
        b = np.zeros(problem.size)
        b[positions] = allocation.bandwidth
        metadata["repaired"] = True
    return _build_decision(problem, selected, np.nan_to_num(b, nan=0.0), metadata)


def verify_feasibility(
    decision: RoundDecision,
    scenario: Scenario,
    round_index: int,
    constraints: Optional[Iterable[str]] = None,
    kl_threshold: Optional[float] = None,
    data_budget: Optional[float] = None,
    smoothing: float = 0.0,
) -> FeasibilityReport:
    """
    Recompute every round constraint with its slack; pass iff slack >= -1e-9

    Args:
        decision: Decision over all K clients
        scenario: Cell the decision was made for
        round_index: Round whose channel draw applies
        constraints: Subset of constraint names to check (default: all)
        kl_threshold, data_budget: Overrides of the scenario's thresholds

    Returns:
        FeasibilityReport
    """
    system = scenario.system
    names = CONSTRAINT_NAMES if constraints is None else tuple(constraints)
    unknown = set(names) - set(CONSTRAINT_NAMES)
    if unknown:
        raise ValueError(f"unknown constraints: {sorted(unknown)}")
    e1 = system.kl_threshold if kl_threshold is None else kl_threshold
    e2 = system.data_budget if data_budget is None else data_budget

    a, b, f = decision.selection, decision.bandwidth, decision.frequency
    sel = decision.selected
    fmax = scenario.max_frequency_hz

    def selected_latency():
        if not sel.any():
            return np.zeros(0)
        idx = np.flatnonzero(sel)
        with np.errstate(divide="ignore"):
            rate = b[idx] * spectral_rates(scenario, round_index)[idx]
            upload = np.where(rate > 0, scenario.model_size_bits[idx] / np.where(rate > 0, rate, 1.0), np.inf)
            comp = np.where(f[idx] > 0, system.local_epochs * scenario.cycles_per_bit[idx] * scenario.dataset_sizes[idx] / np.where(f[idx] > 0, f[idx], 1.0), np.inf)
        return system.alpha1 * (upload + comp)

    def slack(name: str) -> float:
        if name == "selection_binary":
            return -float(np.max(np.abs(a - np.round(a)), initial=0.0))
        if name == "bandwidth_budget":
            return 1.0 - float(np.sum(b))
        if name == "bandwidth_nonnegative":
            return float(np.min(b, initial=0.0))
        if name == "frequency_cap":
            return float(np.min(fmax - f, initial=np.inf))
        if name == "frequency_nonnegative":
            return float(np.min(f, initial=0.0))
        if name == "kl_threshold":
            if not sel.any() or np.isposinf(e1):
                return float(e1)
            div = client_divergences(scenario, smoothing)[sel]
            div = np.where(np.isnan(div), np.inf, div)
            return float(e1 - np.max(div))
        if name == "data_budget":
            return float(np.sum(a * scenario.dataset_sizes) - e2)
        if name == "epigraph":
            latency = selected_latency()
            return float(decision.upsilon - np.max(latency)) if latency.size else float(decision.upsilon)
        if name == "unselected_idle":
            idle = ~sel
            return -float(np.max(np.abs(b[idle]) + np.abs(f[idle]), initial=0.0))
        raise ValueError(name)

    checks = []
    for name in names:
        value = slack(name)
        checks.append(ConstraintCheck(name, value, bool(value >= -FEASIBILITY_TOLERANCE)))
    return FeasibilityReport(tuple(checks))


@dataclass(frozen=True)
class CsraRoundResult:
    decision: RoundDecision
    dc_state: DcState
    frequency: FrequencyAllocation
    eligible: np.ndarray


def select_clients(scenario: Scenario, round_index: int, params: SolverParams):
    """KL filter, DC iteration and rounding; frequencies stay at f_max"""
    system = scenario.system
    eligible = kl_filter(client_divergences(scenario, params.kl_smoothing), system.kl_threshold)
    problem = build_round_problem(scenario, round_index, eligible, params.b_min)
    state = solve_dc(problem, params)
    decision = round_and_repair(state, problem, params)
    return decision, state, problem


def solve_csra_round(scenario: Scenario, round_index: int, config: Optional[ExperimentConfig] = None) -> CsraRoundResult:
    """
    Full CSRA round: selection, bandwidth and frequency allocation

    Args:
        scenario: Sampled cell (its system section supplies the weights)
        round_index: Round to solve
        config: Source of solver settings (default: defaults)

    Returns:
        CsraRoundResult with the final decision
    """
    params = config.optimizer if config is not None else SolverParams()
    decision, state, problem = select_clients(scenario, round_index, params)
    if decision.num_selected == 0:
        empty = FrequencyAllocation(np.zeros(scenario.num_clients), None, 0.0, True, 0.0, 0.0, 0)
        return CsraRoundResult(decision, state, empty, problem.clients)

    allocation = dual_subgradient_allocate(decision, problem, params=params)
    final = decision.evolve(
        frequency=allocation.frequency,
        upsilon=allocation.upsilon,
        metadata={
            "dual_converged": allocation.converged,
            "dual_iterations": allocation.iterations,
            "dual_residual": allocation.max_residual,
            **allocation.metadata,
        },
    )
    return CsraRoundResult(final, state, allocation, problem.clients)
