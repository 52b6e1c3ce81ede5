"""
Tests for partitioning, distribution estimates and the KL filter
"""

import math

import numpy as np
import pytest

from app.core.exceptions import (
    DivergenceUndefinedError,
    DomainError,
    NoEligibleClientsError,
    ShapeError,
)
from app.models.partition import LabelDistribution
from app.services.heterogeneity import (
    balanced_label_pool,
    client_divergences,
    estimate_distributions,
    kl_divergence,
    kl_filter,
    partition_hybrid,
    partition_table,
)


@pytest.fixture
def pool():
    return balanced_label_pool(8000, 10)


def test_iid_and_skewed_client_counts(pool):
    """Test a tenth of 80 clients receive balanced data"""
    spec = partition_hybrid(pool, 80, 0.1, 0.5, np.random.default_rng(0))
    assert spec.num_iid_clients == 8
    assert spec.num_clients == 80
    balanced = spec.label_counts[:8]
    assert np.all(balanced == balanced[0, 0])
    assert balanced[0, 0] == 800 // 80


def test_every_sample_assigned_once(pool):
    spec = partition_hybrid(pool, 25, 0.2, 0.3, np.random.default_rng(1))
    merged = np.concatenate(spec.assignments)
    assert merged.size == pool.size
    assert np.unique(merged).size == pool.size
    np.testing.assert_array_equal(spec.global_counts, np.bincount(pool))
    for k, idx in enumerate(spec.assignments):
        np.testing.assert_array_equal(np.bincount(pool[idx], minlength=10), spec.label_counts[k])


def test_fully_iid_matches_global_proportions(pool):
    spec = partition_hybrid(pool, 20, 1.0, 0.5, np.random.default_rng(2))
    estimate = estimate_distributions(spec)
    for k in range(20):
        np.testing.assert_allclose(estimate.local[k], estimate.global_distribution.proportions, atol=1.0 / 40)


def test_no_iid_clients(pool):
    spec = partition_hybrid(pool, 10, 0.0, 0.5, np.random.default_rng(3))
    assert spec.num_iid_clients == 0
    assert int(spec.dataset_sizes.sum()) == pool.size


def test_partition_is_seed_deterministic(pool):
    a = partition_hybrid(pool, 30, 0.1, 0.5, np.random.default_rng(9))
    b = partition_hybrid(pool, 30, 0.1, 0.5, np.random.default_rng(9))
    np.testing.assert_array_equal(a.label_counts, b.label_counts)


def test_minimum_sample_top_up(pool):
    spec = partition_hybrid(pool, 80, 0.0, 0.05, np.random.default_rng(4), min_samples=5)
    assert spec.dataset_sizes.min() >= 5
    assert int(spec.dataset_sizes.sum()) == pool.size


def test_partition_rejects_bad_parameters(pool):
    with pytest.raises(DomainError):
        partition_hybrid(pool, 10, 0.1, 0.0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        partition_hybrid(pool, 0, 0.1, 0.5, np.random.default_rng(0))
    with pytest.raises(DomainError):
        partition_hybrid(pool, 10, 1.5, 0.5, np.random.default_rng(0))


def test_partition_table_layout(pool):
    spec = partition_hybrid(pool, 4, 0.5, 0.5, np.random.default_rng(0))
    table = partition_table(spec)
    assert list(table.columns) == ["client_id", "category", "count"]
    assert len(table) == 4 * 10
    assert table["count"].sum() == pool.size


def test_proportions_from_counts():
    estimate = estimate_distributions(np.array([[30, 70]]))
    np.testing.assert_allclose(estimate.local[0], [0.3, 0.7])


def test_global_proportions_are_size_weighted():
    """Test sizes 100 and 300 with disjoint labels"""
    estimate = estimate_distributions(np.array([[100, 0], [0, 300]]))
    np.testing.assert_allclose(estimate.global_distribution.proportions, [0.25, 0.75])


def test_identical_clients_share_the_global_vector():
    estimate = estimate_distributions(np.array([[10, 30], [20, 60], [5, 15]]))
    np.testing.assert_allclose(estimate.global_distribution.proportions, [0.25, 0.75])


def test_empty_client_is_excluded():
    estimate = estimate_distributions(np.array([[5, 5], [0, 0]]))
    assert estimate.excluded == (1,)
    assert len(estimate.warnings) == 1
    assert np.all(np.isnan(estimate.local[1]))
    with pytest.raises(DomainError):
        estimate.client(1)


def test_estimate_rejects_bad_tables():
    with pytest.raises(ShapeError):
        estimate_distributions(np.array([1, 2, 3]))
    with pytest.raises(DomainError):
        estimate_distributions(np.zeros((2, 3)))


def test_smoothing_gives_full_support():
    estimate = estimate_distributions(np.array([[10, 0], [0, 10]]), smoothing=1.0)
    assert np.all(estimate.local > 0)
    np.testing.assert_allclose(estimate.local[0], [11 / 12, 1 / 12])


def test_label_distribution_validation():
    with pytest.raises(DomainError):
        LabelDistribution(np.array([0.5, 0.6]))
    with pytest.raises(DomainError):
        LabelDistribution(np.array([-0.1, 1.1]))
    assert LabelDistribution.from_counts([1, 3]).num_categories == 2


def test_kl_of_identical_distributions():
    assert kl_divergence([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0


def test_kl_reference_value():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-14)


def test_kl_support_violation():
    with pytest.raises(DivergenceUndefinedError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ShapeError):
        kl_divergence([0.5, 0.5], [1.0])


def test_client_divergences_mark_undefined_and_excluded():
    div = client_divergences(estimate_distributions(np.array([[5, 5], [10, 0], [0, 0]])))
    assert div[0] >= 0
    assert math.isinf(div[1])
    assert math.isnan(div[2])


def test_filter_with_infinite_threshold_keeps_every_nonempty_client():
    np.testing.assert_array_equal(kl_filter([0.0, 3.0, 100.0], float("inf")), [0, 1, 2])
    np.testing.assert_array_equal(kl_filter([0.0, float("nan"), 1.0], float("inf")), [0, 2])


def test_filter_threshold():
    np.testing.assert_array_equal(kl_filter([0.05, 0.19, 0.4], 0.2), [0, 1])


def test_zero_threshold_keeps_exact_matches():
    np.testing.assert_array_equal(kl_filter([0.0, 1e-9, float("inf")], 0.0), [0])


def test_filter_with_no_survivor():
    with pytest.raises(NoEligibleClientsError):
        kl_filter([0.5, float("inf")], 0.2)


def test_filter_is_monotone_in_threshold():
    rng = np.random.default_rng(5)
    div = np.concatenate([rng.exponential(0.3, 40), [np.inf, np.nan]])
    previous = set()
    for e1_max in np.linspace(div[:40].min(), 2.0, 25):
        eligible = set(kl_filter(div, e1_max).tolist())
        assert previous <= eligible
        previous = eligible
    assert previous == set(np.flatnonzero(div[:40] <= 2.0).tolist())


def _mean_skewed_divergence(alpha, seeds):
    pool = balanced_label_pool(2000, 10)
    means = []
    for seed in seeds:
        spec = partition_hybrid(pool, 20, 0.0, alpha, np.random.default_rng(seed))
        div = client_divergences(estimate_distributions(spec, smoothing=0.5))
        means.append(np.nanmean(div))
    return float(np.mean(means))


@pytest.mark.acceptance
def test_divergence_falls_as_concentration_grows():
    """Test heterogeneity shrinks over alpha 0.1, 1, 10"""
    seeds = range(20)
    values = [_mean_skewed_divergence(alpha, seeds) for alpha in (0.1, 1.0, 10.0)]
    assert values[0] > values[1] > values[2]
