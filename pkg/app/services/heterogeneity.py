"""
Data partitioning, label-distribution estimation and the KL eligibility filter
"""

import logging
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import rel_entr

from app.core.exceptions import (
    DivergenceUndefinedError,
    DomainError,
    NoEligibleClientsError,
    ShapeError,
)
from app.models.partition import DistributionEstimate, LabelDistribution, PartitionSpec

logger = logging.getLogger(__name__)

DistributionLike = Union[LabelDistribution, Sequence[float], np.ndarray]


def as_proportions(value: DistributionLike) -> np.ndarray:
    if isinstance(value, LabelDistribution):
        return value.proportions
    return np.asarray(value, dtype=float)


def balanced_label_pool(num_samples: int, num_categories: int) -> np.ndarray:
    """Category tags 0..Z-1 repeated cyclically"""
    return np.arange(num_samples) % num_categories


def partition_hybrid(
    global_labels,
    K: int,
    iid_fraction: float,
    dirichlet_alpha: float,
    rng: np.random.Generator,
    min_samples: int = 0,
) -> PartitionSpec:
    """
    Split a labelled pool into K clients: an IID block plus a Dirichlet block

    The first floor(iid_fraction * K) clients take floor(n_z / K) samples of
    every category z. What remains of each category is cut among the other
    clients at cumulative Dirichlet(alpha) proportions, so every sample goes to
    exactly one client. With no Dirichlet clients the remainder is handed out
    one sample at a time.

    Args:
        global_labels: Category tag of every pool sample
        K: Number of clients
        iid_fraction: Share of clients receiving balanced data
        dirichlet_alpha: Concentration of the skewed split
        rng: Generator driving the shuffles and Dirichlet draws
        min_samples: Clients below this size take samples from the largest client

    Returns:
        PartitionSpec with counts and sample indices per client
    """
    labels = np.asarray(global_labels)
    if dirichlet_alpha <= 0:
        raise DomainError("dirichlet_alpha must be positive")
    if K < 1:
        raise DomainError("at least one client is required")
    if labels.size == 0:
        raise DomainError("the label pool is empty")
    if not 0 <= iid_fraction <= 1:
        raise DomainError("iid_fraction must lie in [0, 1]")

    categories, encoded = np.unique(labels, return_inverse=True)
    num_iid = int(np.floor(iid_fraction * K + 1e-9))
    num_skewed = K - num_iid
    buckets = [[] for _ in range(K)]

    for z in range(categories.size):
        pool = rng.permutation(np.flatnonzero(encoded == z))
        n_z = pool.size
        per_client = n_z // K
        cursor = 0
        for k in range(num_iid):
            buckets[k].append(pool[cursor:cursor + per_client])
            cursor += per_client
        rest = pool[cursor:]
        if num_skewed > 0:
            weights = rng.dirichlet(np.full(num_skewed, dirichlet_alpha))
            cuts = np.floor(rest.size * np.cumsum(weights)).astype(int)
            cuts[-1] = rest.size
            start = 0
            for j, stop in enumerate(cuts):
                stop = max(stop, start)
                buckets[num_iid + j].append(rest[start:stop])
                start = stop
        else:
            for j, index in enumerate(rest):
                buckets[(z + j) % K].append(np.array([index]))

    assignments = [np.concatenate(parts) if parts else np.empty(0, dtype=int) for parts in buckets]
    moved = 0
    if min_samples > 0:
        moved = _top_up_small_clients(assignments, encoded, min_samples)

    counts = np.zeros((K, categories.size), dtype=np.int64)
    for k, idx in enumerate(assignments):
        if idx.size:
            counts[k] = np.bincount(encoded[idx], minlength=categories.size)

    return PartitionSpec(
        label_counts=counts,
        assignments=tuple(np.sort(idx).astype(np.int64) for idx in assignments),
        categories=categories,
        iid_fraction=float(iid_fraction),
        dirichlet_alpha=float(dirichlet_alpha),
        num_iid_clients=num_iid,
        moved_samples=moved,
    )


def _top_up_small_clients(assignments, encoded, min_samples: int) -> int:
    moved = 0
    total = sum(idx.size for idx in assignments)
    if total < min_samples * len(assignments):
        logger.warning("pool too small to give every client the minimum sample count")
        return 0
    for k in range(len(assignments)):
        while assignments[k].size < min_samples:
            donor = int(np.argmax([idx.size for idx in assignments]))
            donor_idx = assignments[donor]
            # take from the donor's most represented category
            tags = encoded[donor_idx]
            take = int(np.flatnonzero(tags == np.bincount(tags).argmax())[-1])
            assignments[k] = np.append(assignments[k], donor_idx[take])
            assignments[donor] = np.delete(donor_idx, take)
            moved += 1
    if moved:
        logger.info(f"moved {moved} samples to clients below {min_samples} samples")
    return moved


def estimate_distributions(spec_or_counts, smoothing: float = 0.0) -> DistributionEstimate:
    """
    Per-client proportions d_zk / d_k and the size-weighted global proportions

    Clients with no samples are excluded and reported in ``warnings``.
    """
    counts = spec_or_counts.label_counts if isinstance(spec_or_counts, PartitionSpec) else spec_or_counts
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2 or counts.shape[1] < 1:
        raise ShapeError("label counts must be a (clients x categories) table")
    if smoothing < 0:
        raise DomainError("smoothing must be nonnegative")

    sizes = counts.sum(axis=1)
    excluded = tuple(int(k) for k in np.flatnonzero(sizes <= 0))
    warnings = tuple(f"client {k} holds no samples and is excluded" for k in excluded)
    for message in warnings:
        logger.warning(message)
    kept = sizes > 0
    if not kept.any():
        raise DomainError("no client holds any sample")

    Z = counts.shape[1]
    local = np.full(counts.shape, np.nan)
    local[kept] = (counts[kept] + smoothing) / (sizes[kept, None] + smoothing * Z)
    weights = sizes[kept] / sizes[kept].sum()
    global_p = weights @ local[kept]
    global_p = global_p / global_p.sum()
    return DistributionEstimate(
        local=local,
        global_distribution=LabelDistribution(global_p),
        excluded=excluded,
        warnings=warnings,
    )


def kl_divergence(p: DistributionLike, q: DistributionLike) -> float:
    """D(p || q) in nats; raises when q lacks support where p has mass"""
    p = as_proportions(p)
    q = as_proportions(q)
    if p.shape != q.shape:
        raise ShapeError(f"distributions have lengths {p.size} and {q.size}")
    if np.any((q <= 0) & (p > 0)):
        raise DivergenceUndefinedError("p is not absolutely continuous with respect to q")
    return max(float(np.sum(rel_entr(p, q))), 0.0)


def client_divergences(estimate_or_scenario, smoothing: float = 0.0) -> np.ndarray:
    """
    D(p_g || p_k) for every client

    Undefined divergences are +inf; excluded (empty) clients are NaN so they
    never pass a threshold.
    """
    estimate = estimate_or_scenario
    if not isinstance(estimate, DistributionEstimate):
        estimate = estimate_distributions(estimate_or_scenario.label_counts, smoothing)
    p_g = estimate.global_distribution.proportions
    out = np.full(estimate.local.shape[0], np.nan)
    for k, p_k in enumerate(estimate.local):
        if k in estimate.excluded:
            continue
        try:
            out[k] = kl_divergence(p_g, p_k)
        except DivergenceUndefinedError:
            out[k] = np.inf
    return out


def kl_filter(divergences: Iterable[float], e1_max: float) -> np.ndarray:
    """
    Indices of clients with D(p_g || p_k) <= e1_max

    Args:
        divergences: Per-client divergences (see ``client_divergences``)
        e1_max: Threshold in nats; +inf admits every non-empty client

    Returns:
        Sorted array of eligible client indices
    """
    div = np.asarray(list(divergences), dtype=float)
    with np.errstate(invalid="ignore"):
        eligible = np.flatnonzero(div <= e1_max)
    if eligible.size == 0:
        raise NoEligibleClientsError(f"no client has divergence at most {e1_max}")
    return eligible


def partition_table(spec: PartitionSpec) -> pd.DataFrame:
    """(client_id, category, count) rows for every client and category"""
    K, Z = spec.label_counts.shape
    return pd.DataFrame(
        {
            "client_id": np.repeat(np.arange(K), Z),
            "category": np.tile(spec.categories, K),
            "count": spec.label_counts.reshape(-1),
        }
    )
