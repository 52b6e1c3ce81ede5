"""
Tests for cell sampling and its determinism
"""

import numpy as np
import pytest

from app.core.config import ExperimentConfig, dbm_to_watts, override_config
from app.core.exceptions import ConfigurationError, DomainError
from app.models.scenario import Stream, stream_rng, unit_fading
from app.services.scenario_service import build_scenario
from app.services.wireless_cost import path_loss


def test_default_cell_fields_in_range():
    """Test every sampled field of the default 80-client cell lies in its interval"""
    config = ExperimentConfig()
    scenario = build_scenario(config, rounds=2)
    assert scenario.num_clients == 80
    assert np.all((scenario.distance_m >= 200) & (scenario.distance_m <= 250))
    assert np.all(scenario.transmit_power_w >= dbm_to_watts(20) * (1 - 1e-12))
    assert np.all(scenario.transmit_power_w <= dbm_to_watts(33) * (1 + 1e-12))
    assert np.all((scenario.max_frequency_hz >= 2e6) & (scenario.max_frequency_hz <= 5e6))
    assert np.all((scenario.cycles_per_bit >= 1) & (scenario.cycles_per_bit <= 10))
    assert int(scenario.dataset_sizes.sum()) == config.fl.train_samples
    assert np.all(scenario.model_size_bits == config.fl.resolved_model_size_bits)


def test_zero_width_interval(small_config):
    config = override_config(small_config, "client_ranges.distance_m", [200.0, 200.0])
    scenario = build_scenario(config, rounds=1)
    assert np.all(scenario.distance_m == 200.0)


def test_inverted_interval_is_a_configuration_error(small_config):
    config = override_config(small_config, "client_ranges.distance_m", [250.0, 200.0])
    with pytest.raises(ConfigurationError):
        build_scenario(config, rounds=1)


def test_nonpositive_frequency_interval_is_rejected(small_config):
    config = override_config(small_config, "client_ranges.max_frequency_hz", [0.0, 1e6])
    with pytest.raises(ConfigurationError):
        build_scenario(config, rounds=1)


def test_same_seed_same_scenario(small_config):
    """Test two builds from one seed agree exactly"""
    a = build_scenario(small_config, rounds=3)
    b = build_scenario(small_config, rounds=3)
    for name in ("dataset_sizes", "cycles_per_bit", "transmit_power_w", "max_frequency_hz", "distance_m", "path_loss"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(a.channel.unit_fading, b.channel.unit_fading)
    np.testing.assert_array_equal(a.label_counts, b.label_counts)


def test_different_seed_different_fading(small_config):
    a = build_scenario(small_config, rounds=3)
    b = build_scenario(small_config, seed=small_config.system.rng_seed + 1, rounds=3)
    assert not np.array_equal(a.channel.unit_fading, b.channel.unit_fading)


def test_fading_past_horizon_matches_presampled(small_config):
    short = build_scenario(small_config, rounds=1)
    long = build_scenario(small_config, rounds=4)
    np.testing.assert_array_equal(short.fading_power(3), long.fading_power(3))
    with pytest.raises(DomainError):
        short.fading_power(-1)


def test_fading_draws_have_unit_mean():
    draws = np.array([unit_fading(11, k, t) for k in range(40) for t in range(100)])
    assert draws.min() > 0
    assert abs(draws.mean() - 1.0) < 0.1


def test_average_gain_scales_fading(small_scenario):
    doubled = small_scenario.with_system(average_channel_gain=2.0)
    np.testing.assert_allclose(doubled.fading_power(1), 2.0 * small_scenario.fading_power(1))
    np.testing.assert_array_equal(doubled.distance_m, small_scenario.distance_m)


def test_with_system_refuses_sampled_quantities(small_scenario):
    with pytest.raises(DomainError):
        small_scenario.with_system(num_clients=3)
    with pytest.raises(DomainError):
        small_scenario.with_system(path_loss_exp=3.0)


def test_path_loss_matches_distance(small_scenario):
    system = small_scenario.system
    expected = path_loss(small_scenario.distance_m, system.carrier_freq_hz, system.path_loss_exp)
    np.testing.assert_allclose(small_scenario.path_loss, expected, rtol=1e-14)


def test_profiles_are_consistent(small_scenario):
    profiles = small_scenario.profiles
    assert len(profiles) == small_scenario.num_clients
    for profile in profiles:
        assert int(profile.label_counts.sum()) == profile.dataset_size
        assert profile.max_frequency_hz == small_scenario.max_frequency_hz[profile.index]


def test_streams_are_independent():
    a = stream_rng(5, Stream.PROFILE, 0).random(4)
    b = stream_rng(5, Stream.FADING, 0).random(4)
    c = stream_rng(5, Stream.PROFILE, 0).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, c)
