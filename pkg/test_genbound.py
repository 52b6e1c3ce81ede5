"""
Tests for the generalization bound and the variational gap check
"""

import itertools
import math

import numpy as np
import pytest

from app.core.config import BoundConstants
from app.core.exceptions import DivergenceUndefinedError, DomainError, ShapeError
from app.models.bound import BoundParams
from app.models.schemas import BoundParamsDocument
from app.services.genbound import bound_params_for_round, dv_gap, evaluate_bound, sigma_d2
from app.services.heterogeneity import kl_divergence


def make_params(**changes) -> BoundParams:
    values = dict(
        round_index=1,
        learning_rates=(0.1,),
        smoothness=1.0,
        lipschitz=1.0,
        grad_variance=1.0,
        epochs=2,
        optimality_gaps=(0.5,),
        loss_bound=1.0,
        confidence=0.1,
        stability=0.01,
        client_sizes=(100.0, 400.0),
        kl_terms=(0.0, 0.0),
    )
    values.update(changes)
    return BoundParams(**values)


def test_reference_breakdown():
    """Test every term of a two-client instance against hand arithmetic"""
    breakdown = evaluate_bound(make_params(kl_terms=(0.02, 0.05)))
    E, eta, gap = 2, 0.1, 0.5
    drift = 4 * (E - 1) * (2 * eta ** 2 * 1 * 1 / E * gap + eta ** 2 * 1 * 1 / E ** 2)
    sd2 = (10.0 + 20.0) / 500.0
    sample = math.sqrt(math.log(4 / 0.1) / 2) * sd2
    size = 1 / (8 * 500)
    stability = (2 * 0.01 + 1 / 500) * math.sqrt(500 * math.log(2 / 0.1))

    assert breakdown.drift_term == pytest.approx(drift, rel=1e-12)
    assert breakdown.sigma_d2 == pytest.approx(sd2, rel=1e-12)
    assert breakdown.sample_term == pytest.approx(sample, rel=1e-12)
    assert breakdown.kl_term == pytest.approx(0.07, rel=1e-12)
    assert breakdown.size_term == pytest.approx(size, rel=1e-12)
    assert breakdown.stability_term == pytest.approx(stability, rel=1e-12)
    assert breakdown.total == pytest.approx(drift + sample + 0.07 + size + stability, rel=1e-12)


def test_no_rounds_means_no_drift():
    breakdown = evaluate_bound(make_params(round_index=0, learning_rates=(), optimality_gaps=()))
    assert breakdown.drift_term == 0.0


def test_single_epoch_means_no_drift():
    breakdown = evaluate_bound(make_params(epochs=1, learning_rates=(0.9,), optimality_gaps=(3.0,)))
    assert breakdown.drift_term == 0.0


def test_homogeneous_clients_have_no_kl_term():
    assert evaluate_bound(make_params()).kl_term == 0.0


def test_row_holds_every_column():
    row = evaluate_bound(make_params()).as_row()
    assert list(row) == ["drift_term", "sample_term", "kl_term", "size_term", "stability_term", "sigma_d2", "total"]
    assert row["total"] == pytest.approx(sum(v for k, v in row.items() if k not in ("sigma_d2", "total")))


def test_more_data_tightens_the_size_terms():
    small = evaluate_bound(make_params(client_sizes=(100.0, 100.0)))
    large = evaluate_bound(make_params(client_sizes=(10000.0, 10000.0)))
    assert large.sigma_d2 < small.sigma_d2
    assert large.size_term < small.size_term


def test_sigma_d2():
    assert sigma_d2([4.0, 16.0]) == pytest.approx(6.0 / 20.0)


def _compositions(total, parts):
    """Every way to write ``total`` as an ordered sum of ``parts`` positive integers"""
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield [bounds[i + 1] - bounds[i] for i in range(parts)]


def test_sigma_d2_over_every_composition():
    """Test the weighted root sum on every split of 12 samples into three clients"""
    total, parts = 12, 3
    values = []
    for sizes in _compositions(total, parts):
        expected = math.fsum(math.sqrt(d) for d in sizes) / total
        value = sigma_d2(sizes)
        assert value == pytest.approx(expected, rel=1e-14)
        assert 1.0 / math.sqrt(total) - 1e-15 <= value <= math.sqrt(parts / total) + 1e-15
        values.append(value)
    assert len(values) == math.comb(total - 1, parts - 1)
    assert max(values) == pytest.approx(sigma_d2([4, 4, 4]), rel=1e-14)


@pytest.mark.parametrize(
    "field, values",
    [
        ("kl_terms", [(0.0, 0.0), (0.01, 0.02), (0.1, 0.2), (1.0, 2.0)]),
        ("stability", [0.0, 0.01, 0.1, 1.0]),
        ("loss_bound", [0.5, 1.0, 2.0, 4.0]),
        ("optimality_gaps", [(0.0,), (0.5,), (1.0,), (5.0,)]),
    ],
)
def test_bound_grows_with_each_input(field, values):
    totals = [evaluate_bound(make_params(**{field: value})).total for value in values]
    assert all(a < b for a, b in zip(totals, totals[1:]))


def test_bound_loosens_as_confidence_parameter_shrinks():
    totals = [evaluate_bound(make_params(confidence=delta)).total for delta in (0.5, 0.1, 0.01, 0.001)]
    assert all(a < b for a, b in zip(totals, totals[1:]))


@pytest.mark.parametrize("confidence", [0.0, 1.0, -0.5])
def test_confidence_outside_unit_interval(confidence):
    with pytest.raises(DomainError):
        evaluate_bound(make_params(confidence=confidence))


def test_schedule_length_mismatch():
    with pytest.raises(ShapeError):
        evaluate_bound(make_params(round_index=2))
    with pytest.raises(ShapeError):
        evaluate_bound(make_params(kl_terms=(0.0,)))


def test_negative_inputs():
    with pytest.raises(DomainError):
        evaluate_bound(make_params(kl_terms=(-0.1, 0.0)))
    with pytest.raises(DomainError):
        evaluate_bound(make_params(client_sizes=(0.0, 0.0)))


def test_params_for_round_clip_gaps():
    params = bound_params_for_round(
        2,
        learning_rates=[0.1, 0.05, 0.01],
        train_losses=[2.3, 0.4, 0.1],
        loss_floor=0.5,
        epochs=3,
        client_sizes=[10, 20],
        kl_terms=[0.1, 0.2],
        constants=BoundConstants(),
    )
    assert params.round_index == 2
    assert params.learning_rates == (0.1, 0.05)
    assert params.optimality_gaps == pytest.approx((1.8, 0.0))
    assert params.client_sizes == (10.0, 20.0)
    with pytest.raises(ShapeError):
        bound_params_for_round(4, [0.1], [1.0], 0.0, 1, [1], [0], BoundConstants())


def test_document_converts_to_params():
    document = BoundParamsDocument(client_sizes=[100, 400], kl_terms=[0, 0])
    params = document.to_params()
    assert params.round_index == 0
    assert params.confidence == BoundConstants().confidence
    assert evaluate_bound(params).drift_term == 0.0


def test_gap_with_constant_test_function():
    """Test a constant q cancels to the divergence itself"""
    p = np.array([0.2, 0.3, 0.5])
    r = np.array([0.4, 0.4, 0.2])
    assert dv_gap(p, r, np.full(3, 0.7)) == pytest.approx(kl_divergence(p, r), abs=1e-14)


def test_gap_with_identical_distributions_is_jensen():
    p = np.array([0.1, 0.6, 0.3])
    q = np.array([-1.0, 0.5, 0.2])
    expected = math.log(float(p @ np.exp(q))) - float(p @ q)
    assert dv_gap(p, p, q) == pytest.approx(expected, rel=1e-12)
    assert dv_gap(p, p, q) >= 0


def test_gap_errors():
    with pytest.raises(DivergenceUndefinedError):
        dv_gap([0.5, 0.5], [1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ShapeError):
        dv_gap([0.5, 0.5], [0.5, 0.5], [0.0])
    with pytest.raises(DomainError):
        dv_gap([0.5, 0.5], [0.5, 0.5], [0.0, np.inf])


def test_gap_is_nonnegative_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        p = rng.dirichlet(np.ones(10))
        r = rng.dirichlet(np.ones(10))
        q = rng.uniform(-1, 1, 10)
        assert dv_gap(p, r, q) >= -1e-10


@pytest.mark.acceptance
def test_gap_is_nonnegative_on_many_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(10000):
        p = rng.dirichlet(np.full(10, 0.3))
        r = rng.dirichlet(np.ones(10))
        q = rng.uniform(-1, 1, 10)
        assert dv_gap(p, r, q) >= -1e-10
