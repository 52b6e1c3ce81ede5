"""
Bandwidth allocation for a fixed selection and fixed CPU frequencies

For selected clients with latency coefficient l, compute latency t and
energy coefficient w the problem is

    min  U + sum w / b   s.t.  l / b + t <= U,  sum b <= 1,  b >= b_min.

For a fixed U the latency constraints become lower bounds b >= l / (U - t)
and the energy term is water-filled: b = max(lower, sqrt(w / mu)) with mu set
so that the budget is spent. The outer problem is one-dimensional and convex
in U.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from app.core.exceptions import DomainError, InfeasibleError
from app.services.round_problem import RoundProblem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BandwidthAllocation:
    bandwidth: np.ndarray
    upsilon: float
    objective: float
    method: str


def _lower_bounds(l, t, upsilon, b_min):
    with np.errstate(divide="ignore"):
        return np.maximum(l / (upsilon - t), b_min)


def _waterfill(lower: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Minimize sum w/b over b >= lower, sum b = 1"""
    total = lower.sum()
    if total >= 1.0 or not np.any(w > 0):
        return lower / total
    root_w = np.sqrt(w)

    def excess(nu):
        return np.maximum(lower, nu * root_w).sum() - 1.0

    # the unconstrained split nu * root_w already spends the budget at nu_hi
    nu_hi = 1.0 / root_w.sum()
    if excess(nu_hi) <= 0:
        nu = nu_hi
    else:
        nu = brentq(excess, 0.0, nu_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    b = np.maximum(lower, nu * root_w)
    return b / b.sum()


class _Allocator:
    def __init__(self, problem: RoundProblem, frequency: np.ndarray):
        self.l = problem.latency_coef
        self.t = problem.compute_latency(frequency)
        self.w = problem.energy_coef
        self.e = problem.compute_energy(frequency)
        self.b_min = problem.b_min
        n = self.l.size
        if n * self.b_min > 1:
            raise InfeasibleError("too many clients for the minimum bandwidth share", "bandwidth_budget")
        if not np.all(np.isfinite(self.l)) or not np.all(np.isfinite(self.t)):
            raise InfeasibleError("a selected client has zero rate or zero frequency", "epigraph")

    def min_latency(self) -> float:
        """Smallest U for which the latency lower bounds fit in the budget"""
        l, t = self.l, self.t
        n = l.size
        lo = float(np.max(t + l))
        hi = float(np.max(t + n * l))
        if hi <= lo:
            return lo

        def excess(upsilon):
            return _lower_bounds(l, t, upsilon, self.b_min).sum() - 1.0

        if excess(lo) <= 0:
            return lo
        if excess(hi) >= 0:
            return hi
        return brentq(excess, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)

    def allocation(self, upsilon: float) -> np.ndarray:
        lower = _lower_bounds(self.l, self.t, upsilon, self.b_min)
        if self.w.sum() <= 0:
            return lower / lower.sum()
        return _waterfill(lower, self.w)

    def value(self, upsilon: float) -> float:
        b = self.allocation(upsilon)
        latency = float(np.max(self.l / b + self.t))
        return max(latency, upsilon) + float(np.sum(self.w / b)) + float(np.sum(self.e))

    def energy_optimal_latency(self) -> float:
        b = _waterfill(np.full(self.l.size, self.b_min), self.w) if self.w.sum() > 0 else None
        if b is None:
            return self.min_latency()
        return float(np.max(self.l / b + self.t))


def allocate_bandwidth(
    problem: RoundProblem,
    frequency: Optional[np.ndarray] = None,
    method: str = "dual",
    resolution: float = 1e-4,
) -> BandwidthAllocation:
    """
    Optimal bandwidth split over every candidate of ``problem``

    Args:
        problem: Round problem restricted to the selected clients
        frequency: CPU frequencies (default: ``problem.frequency``)
        method: "dual" for a bounded scalar search on U, "grid" for a uniform U grid
        resolution: Grid spacing as a fraction of the search interval

    Returns:
        BandwidthAllocation over the candidates of ``problem``
    """
    if problem.size == 0:
        return BandwidthAllocation(np.zeros(0), 0.0, 0.0, method)
    f = problem.frequency if frequency is None else np.asarray(frequency, dtype=float)
    alloc = _Allocator(problem, f)
    lo = alloc.min_latency()
    if alloc.w.sum() <= 0:
        best = lo
    else:
        hi = max(alloc.energy_optimal_latency(), lo)
        if hi - lo <= 1e-15 * max(1.0, hi):
            best = lo
        elif method == "dual":
            result = minimize_scalar(
                alloc.value,
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-13 * hi, "maxiter": 500},
            )
            best = float(result.x)
            # the bounded search never evaluates the end points
            for edge in (lo, hi):
                if alloc.value(edge) < alloc.value(best):
                    best = edge
        elif method == "grid":
            grid = np.linspace(lo, hi, int(round(1.0 / resolution)) + 1)
            values = np.array([alloc.value(u) for u in grid])
            best = float(grid[int(np.argmin(values))])
        else:
            raise DomainError(f"unknown bandwidth method: {method}")

    b = alloc.allocation(best)
    upsilon = float(np.max(alloc.l / b + alloc.t))
    objective = upsilon + float(np.sum(alloc.w / b)) + float(np.sum(alloc.e))
    logger.debug(f"bandwidth ({method}) for {problem.size} clients: U={upsilon:.6g}, objective={objective:.6g}")
    return BandwidthAllocation(b, upsilon, objective, method)
