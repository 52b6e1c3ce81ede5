"""
CPU-frequency allocation for selected clients

With selection and bandwidth fixed, each client's frequency minimizes its
computation energy subject to the frequency cap and the latency bound U'.
The Lagrangian stationary point is the positive root of

    2 a2 d eps s E f^3 + gamma f^2 - E beta a1 s d = 0,

evaluated here in closed form (Cardano / trigonometric split of the
depressed cubic) and driven by a projected dual sub-gradient loop.
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from app.core.config import SolverParams
from app.core.exceptions import DomainError
from app.models.decision import DualState, FrequencyAllocation, RoundDecision
from app.services.round_problem import RoundProblem

logger = logging.getLogger(__name__)

AGREEMENT_TOLERANCE = 1e-8
NEWTON_STEPS = 60


def numeric_cubic_root(c3: float, c2: float, c1: float, c0: float) -> float:
    """
    Positive root of c3 f^3 + c2 f^2 + c1 f + c0 by bracketing and Brent's method

    Requires c3 > 0 and c0 <= 0 with c2, c1 >= 0 so that exactly one sign change
    exists on (0, inf). Returns 0 when c0 == 0.
    """
    if c3 <= 0:
        raise DomainError("leading coefficient must be positive")
    if c0 > 0:
        raise DomainError("constant term must be nonpositive")
    if c0 == 0:
        return 0.0

    def poly(f):
        return ((c3 * f + c2) * f + c1) * f + c0

    hi = 1.0
    while poly(hi) <= 0:
        hi *= 2.0
    while hi > 1e-300 and poly(hi / 2.0) > 0:
        hi /= 2.0
    lo = hi / 2.0
    return float(brentq(poly, lo, hi, xtol=min(1e-12, 1e-15 * lo), rtol=4 * np.finfo(float).eps, maxiter=500))


def _stationary_root(p2, q0):
    """
    Positive root of f^3 + p2 f^2 - q0 = 0 (p2 >= 0, q0 > 0), vectorized

    Depressed form x^3 + P x + Q = 0 with f = x - p2/3.
    """
    p2 = np.asarray(p2, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    P = -p2 ** 2 / 3.0
    Q = 2.0 * p2 ** 3 / 27.0 - q0
    disc = (Q / 2.0) ** 2 + (P / 3.0) ** 3

    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        cardano = np.cbrt(-Q / 2.0 + sq) + np.cbrt(-Q / 2.0 - sq)
        radius = 2.0 * np.sqrt(np.maximum(-P / 3.0, 0.0))
        cos_arg = np.clip((3.0 * Q / (2.0 * P)) * np.sqrt(np.maximum(-3.0 / P, 0.0)), -1.0, 1.0)
        trig = radius * np.cos(np.arccos(cos_arg) / 3.0)
    x = np.where(disc > 0, cardano, trig)
    f = x - p2 / 3.0

    # cancellation guard: the root never exceeds either of these bounds
    upper = np.where(p2 > 0, np.minimum(np.cbrt(q0), np.sqrt(q0 / np.where(p2 > 0, p2, 1.0))), np.cbrt(q0))
    f = np.where(np.isfinite(f) & (f > 0) & (f <= upper), f, upper)

    # Newton polish; from above the iteration is monotone on this convex branch
    for _ in range(NEWTON_STEPS):
        value = (f + p2) * f * f - q0
        slope = (3.0 * f + 2.0 * p2) * f
        step = np.where(slope > 0, value / np.where(slope > 0, slope, 1.0), 0.0)
        f_next = f - step
        f_next = np.where(f_next > 0, f_next, f / 2.0)
        done = np.abs(f_next - f) <= 4 * np.finfo(float).eps * np.abs(f)
        f = f_next
        if np.all(done):
            break
    return f


def optimal_frequencies(gamma, beta, alpha1, alpha2, d, eps, s, E) -> np.ndarray:
    """
    Vectorized stationary frequency; zero where beta * alpha1 == 0
    """
    gamma, beta, alpha1, alpha2, d, eps, s, E = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (gamma, beta, alpha1, alpha2, d, eps, s, E))
    )
    lead = 2.0 * alpha2 * d * eps * s * E
    const = E * beta * alpha1 * s * d
    out = np.zeros(lead.shape)
    active = (const > 0) & (lead > 0)
    if np.any(active):
        out[active] = _stationary_root(gamma[active] / lead[active], const[active] / lead[active])
    return out


def optimal_frequency(
    gamma: float,
    beta: float,
    alpha1: float,
    alpha2: float,
    d: float,
    eps: float,
    s: float,
    E: float,
    validate: bool = True,
) -> float:
    """
    Stationary frequency f* of one client's Lagrangian

    Args:
        gamma: Frequency-cap multiplier
        beta: Latency-bound multiplier
        alpha1, alpha2: Objective weights
        d, eps, s, E: Dataset size, capacitance, cycles per bit, local epochs
        validate: Cross-check against ``numeric_cubic_root``

    Returns:
        The unique nonnegative real root in cycles/s
    """
    if min(alpha2, d, eps, s, E) <= 0:
        raise DomainError("alpha2, d, eps, s and E must be positive")
    if gamma < 0 or beta < 0:
        raise DomainError("multipliers must be nonnegative")
    if gamma == 0 and beta == 0:
        raise DomainError("degenerate stationarity: both multipliers are zero")
    lead = 2.0 * alpha2 * d * eps * s * E
    const = E * beta * alpha1 * s * d
    if const <= 0:
        return 0.0
    root = float(_stationary_root(np.array([gamma / lead]), np.array([const / lead]))[0])
    if validate:
        reference = numeric_cubic_root(lead, gamma, 0.0, -const)
        if abs(root - reference) > AGREEMENT_TOLERANCE * max(abs(reference), 1e-300):
            logger.warning(f"closed-form root {root!r} disagrees with numeric root {reference!r}; using numeric")
            return reference
    return root


def required_frequencies(problem: RoundProblem, bandwidth: np.ndarray, upsilon: float) -> np.ndarray:
    """Smallest frequency meeting alpha1*(T_up + T_com) <= U' per candidate"""
    upload = problem.latency_coef / bandwidth
    slack = upsilon - upload
    with np.errstate(divide="ignore", invalid="ignore"):
        req = problem.alpha1 * problem.epochs * problem.cycles_per_bit * problem.dataset_sizes / slack
    return np.where(slack > 0, req, np.inf)


def projected_frequency_solve(problem: RoundProblem, bandwidth: np.ndarray, upsilon: float) -> np.ndarray:
    """
    Exact per-client solution at fixed U': the required frequency capped at f_max

    Energy grows with f, so the smallest feasible frequency is optimal.
    """
    req = required_frequencies(problem, bandwidth, upsilon)
    if np.any(req > problem.max_frequency * (1 + 1e-12)):
        logger.warning("latency bound unreachable at f_max for some clients; capping")
    f = np.minimum(problem.max_frequency, req)
    if problem.alpha1 == 0:
        f = np.full_like(f, 0.0)
    return np.maximum(f, _frequency_floor(problem))


def _frequency_floor(problem: RoundProblem) -> np.ndarray:
    return 1e-9 * problem.max_frequency


def dual_subgradient_allocate(
    decision: RoundDecision,
    problem: RoundProblem,
    upsilon: Optional[float] = None,
    params: Optional[SolverParams] = None,
) -> FrequencyAllocation:
    """
    Frequencies for the selected clients by projected dual sub-gradient ascent

    Args:
        decision: Selection and bandwidth (length K); frequencies are ignored
        problem: Round problem whose candidates include every selected client
        upsilon: Latency bound U' (default: the decision's latency at f_max)
        params: Iteration limits, step scale and tolerance

    Returns:
        FrequencyAllocation with a length-K frequency vector
    """
    params = params or SolverParams()
    K = problem.num_clients
    positions = np.flatnonzero(np.isin(problem.clients, decision.selected_indices))
    if positions.size != decision.num_selected:
        raise DomainError("every selected client must be a candidate of the round problem")
    if positions.size == 0:
        return FrequencyAllocation(np.zeros(K), None, 0.0, True, 0.0, 0.0, 0)

    sub = problem.subset(positions)
    b = decision.bandwidth[sub.clients]
    fmax = sub.max_frequency
    upload = sub.latency_coef / b
    if upsilon is None:
        upsilon = float(np.max(upload + sub.compute_latency(fmax)))
    if not upsilon > 0:
        raise DomainError("latency bound must be positive")
    f_req = np.minimum(required_frequencies(sub, b, upsilon), fmax)

    if sub.alpha2 == 0 or sub.alpha1 == 0:
        # one weight vanishes: the stationarity cubic degenerates
        f = fmax.copy() if sub.alpha2 == 0 else np.maximum(f_req, _frequency_floor(sub))
        return _finish(sub, b, f, upsilon, None, True, 0.0, 0.0, 0, {"degenerate_weights": True})

    a1, a2 = sub.alpha1, sub.alpha2
    d, s, E, eps = sub.dataset_sizes, sub.cycles_per_bit, sub.epochs, sub.capacitance
    gamma_scale = 2.0 * a2 * d * eps * s * E * fmax
    beta_scale = 2.0 * a2 * eps * fmax ** 3 / a1

    gamma = np.zeros_like(fmax)
    f_fix = sub.frequency
    beta = 2.0 * a2 * eps * f_fix ** 3 / a1
    flips_gamma = np.zeros_like(fmax)
    flips_beta = np.zeros_like(fmax)
    last_sign_gamma = np.zeros_like(fmax)
    last_sign_beta = np.zeros_like(fmax)
    step_gamma = step_beta = np.zeros_like(fmax)

    best = None
    iterations = 0
    for tau in range(params.sg_max_iters + 1):
        iterations = tau
        f_star = optimal_frequencies(gamma, beta, a1, a2, d, eps, s, E)
        with np.errstate(divide="ignore"):
            comp = np.where(f_star > 0, a1 * E * s * d / np.where(f_star > 0, f_star, 1.0), np.inf)
        g_gamma = (f_star - fmax) / fmax
        g_beta = np.minimum((upload + comp - upsilon) / upsilon, 1.0)

        violation = max(float(np.max(np.maximum(g_gamma, 0.0))), float(np.max(np.maximum(g_beta, 0.0))))
        slackness = max(
            float(np.max(np.abs(gamma / gamma_scale * g_gamma))),
            float(np.max(np.abs(beta / beta_scale * np.where(np.isfinite(g_beta), g_beta, 1.0)))),
        )
        score = max(violation, slackness)
        if best is None or score < best[0]:
            best = (score, f_star.copy(), gamma.copy(), beta.copy(), tau)
        if score <= params.sg_tolerance:
            break
        if tau == params.sg_max_iters:
            break

        # halve a client's step each time its sub-gradient changes sign
        sign_gamma = np.sign(g_gamma)
        sign_beta = np.sign(g_beta)
        flips_gamma += (sign_gamma * last_sign_gamma < 0) & (gamma > 0)
        flips_beta += (sign_beta * last_sign_beta < 0) & (beta > 0)
        last_sign_gamma, last_sign_beta = sign_gamma, sign_beta

        base = params.sg_step_scale / math.sqrt(tau + 1)
        step_gamma = base * gamma_scale * 0.5 ** flips_gamma
        step_beta = base * beta_scale * 0.5 ** flips_beta
        gamma = np.maximum(gamma + step_gamma * g_gamma, 0.0)
        beta = np.maximum(beta + step_beta * g_beta, 0.0)

    score, f_star, gamma, beta, best_tau = best
    converged = score <= params.sg_tolerance
    if not converged:
        logger.info(f"dual loop stopped after {iterations} iterations with residual {score:.3g}")

    # primal recovery: stay within the cap and meet the latency bound, tight wherever beta > 0
    f = np.minimum(fmax, np.where(beta > 0, f_req, np.maximum(f_star, f_req)))
    dual = DualState(gamma=gamma, beta=beta, step_gamma=step_gamma, step_beta=step_beta, iteration=best_tau)
    return _finish(
        sub,
        b,
        f,
        upsilon,
        dual,
        converged,
        score,
        _slackness_at(f, fmax, gamma, beta, gamma_scale, beta_scale, upload, sub, upsilon),
        iterations,
        {"beta_update": "full_residual_with_upload", "best_iteration": best_tau},
    )


def _slackness_at(f, fmax, gamma, beta, gamma_scale, beta_scale, upload, sub, upsilon) -> float:
    """Largest normalized complementary-slackness product at a primal point"""
    cap = gamma / gamma_scale * (f - fmax) / fmax
    latency = beta / beta_scale * (upload + sub.compute_latency(f) - upsilon) / upsilon
    return float(max(np.max(np.abs(cap)), np.max(np.abs(latency))))


def _finish(sub, b, f, upsilon_seed, dual, converged, residual, slackness, iterations, metadata) -> FrequencyAllocation:
    latency = sub.latency_coef / b + sub.compute_latency(f)
    full = np.zeros(sub.num_clients)
    full[sub.clients] = f
    meta = {"upsilon_seed": float(upsilon_seed)}
    meta.update(metadata)
    return FrequencyAllocation(
        frequency=full,
        dual=dual,
        upsilon=float(np.max(latency)),
        converged=converged,
        max_residual=float(residual),
        complementary_slackness=float(slackness),
        iterations=iterations,
        metadata=meta,
    )
