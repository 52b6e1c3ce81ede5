"""
Generalization-error bound calculator and the Donsker-Varadhan gap check
"""

import logging
import math
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from app.core.config import BoundConstants
from app.core.exceptions import DomainError, ShapeError
from app.models.bound import BoundBreakdown, BoundParams
from app.services.heterogeneity import DistributionLike, as_proportions, kl_divergence

logger = logging.getLogger(__name__)


def _validate(params: BoundParams):
    if not 0 < params.confidence < 1:
        raise DomainError(f"confidence must lie in (0, 1), got {params.confidence}")
    t = params.round_index
    if t < 0:
        raise DomainError("round index must be nonnegative")
    if len(params.learning_rates) != t or len(params.optimality_gaps) != t:
        raise ShapeError(
            f"expected {t} learning rates and optimality gaps, got "
            f"{len(params.learning_rates)} and {len(params.optimality_gaps)}"
        )
    if len(params.client_sizes) != len(params.kl_terms):
        raise ShapeError("client_sizes and kl_terms must have equal length")
    scalars = (params.smoothness, params.lipschitz, params.grad_variance, params.loss_bound, params.stability)
    if any(x < 0 for x in scalars) or params.epochs < 1:
        raise DomainError("bound constants must be nonnegative and epochs at least 1")
    for name in ("learning_rates", "optimality_gaps", "client_sizes", "kl_terms"):
        if any(not x >= 0 for x in getattr(params, name)):
            raise DomainError(f"{name} must be nonnegative")
    if sum(params.client_sizes) <= 0:
        raise DomainError("total data size must be positive")


def sigma_d2(client_sizes: Sequence[float]) -> float:
    """sum_k sqrt(d_k) / d"""
    sizes = np.asarray(client_sizes, dtype=float)
    return float(np.sum(np.sqrt(sizes)) / sizes.sum())


def evaluate_bound(params: BoundParams) -> BoundBreakdown:
    """
    Evaluate the bound term by term

    Args:
        params: All bound symbols; schedules must have length ``round_index``

    Returns:
        BoundBreakdown whose ``total`` is the sum of its five terms
    """
    _validate(params)
    E = params.epochs
    eta = np.asarray(params.learning_rates, dtype=float)
    gaps = np.asarray(params.optimality_gaps, dtype=float)
    lam, L, var = params.smoothness, params.lipschitz, params.grad_variance
    drift = float(np.sum(4.0 * (E - 1) * (2.0 * eta ** 2 * lam * L / E * gaps + eta ** 2 * var * L / E ** 2)))

    c = params.loss_bound
    delta = params.confidence
    d = float(sum(params.client_sizes))
    sd2 = sigma_d2(params.client_sizes)
    sample = math.sqrt(c ** 2 * math.log(4.0 / delta) / 2.0) * sd2
    kl = float(sum(params.kl_terms))
    size = c ** 2 / (8.0 * d)
    stability = (2.0 * params.stability + c / d) * math.sqrt(d * math.log(2.0 / delta))

    return BoundBreakdown(
        drift_term=drift,
        sample_term=sample,
        kl_term=kl,
        size_term=size,
        stability_term=stability,
        sigma_d2=sd2,
    )


def dv_gap(p_g: DistributionLike, p_k: DistributionLike, q) -> float:
    """
    D(p_g || p_k) - (E_{p_g}[q] - ln E_{p_k}[exp q]); nonnegative up to rounding
    """
    p = as_proportions(p_g)
    r = as_proportions(p_k)
    q = np.asarray(q, dtype=float)
    if q.shape != p.shape:
        raise ShapeError("test function must have one value per category")
    if not np.all(np.isfinite(q)):
        raise DomainError("test function must be bounded")
    kl = kl_divergence(p, r)
    return kl - (float(p @ q) - float(logsumexp(q, b=r)))


def bound_params_for_round(
    round_index: int,
    learning_rates: Sequence[float],
    train_losses: Sequence[float],
    loss_floor: float,
    epochs: int,
    client_sizes: Sequence[float],
    kl_terms: Sequence[float],
    constants: BoundConstants,
) -> BoundParams:
    """
    Assemble BoundParams for the global model after ``round_index`` rounds

    The gap of round i is the training loss of the global model entering that
    round minus ``loss_floor``, clipped at zero.
    """
    if len(learning_rates) < round_index or len(train_losses) < round_index:
        raise ShapeError("history shorter than the requested round index")
    gaps = tuple(max(0.0, float(x) - loss_floor) for x in train_losses[:round_index])
    return BoundParams(
        round_index=round_index,
        learning_rates=tuple(float(x) for x in learning_rates[:round_index]),
        smoothness=constants.smoothness,
        lipschitz=constants.lipschitz,
        grad_variance=constants.grad_variance,
        epochs=epochs,
        optimality_gaps=gaps,
        loss_bound=constants.loss_bound,
        confidence=constants.confidence,
        stability=constants.stability,
        client_sizes=tuple(float(x) for x in client_sizes),
        kl_terms=tuple(float(x) for x in kl_terms),
    )
