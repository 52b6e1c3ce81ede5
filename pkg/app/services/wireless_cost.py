"""
Channel rate model and latency/energy cost formulas
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy.constants import speed_of_light

from app.core.config import dbm_to_watts
from app.core.exceptions import DomainError, InfeasibleDecisionError
from app.models.decision import ClientCost, CostReport, RoundDecision
from app.models.scenario import ClientProfile, Scenario

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


def _out(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def dbm_per_hz_to_watts_per_hz(value: float) -> float:
    """dBm/Hz to W/Hz"""
    return dbm_to_watts(value)


def path_loss(dist, fc: float, gamma: float):
    """
    Large-scale power gain (c0 / (4 pi fc))^2 * dist^-gamma

    Args:
        dist: Distance(s) in metres
        fc: Carrier frequency in Hz
        gamma: Path-loss exponent

    Returns:
        Gain as a float or array matching ``dist``
    """
    dist = np.asarray(dist, dtype=float)
    if fc <= 0 or np.any(dist <= 0):
        raise DomainError("path loss needs positive distance and carrier frequency")
    if gamma < 0:
        raise DomainError("path-loss exponent must be nonnegative")
    return _out((speed_of_light / (4.0 * math.pi * fc)) ** 2 * dist ** (-gamma))


def uplink_rate(b, B: float, theta, h2, P, N0: float):
    """Shannon rate b*B*log2(1 + theta*h2*P/(B*N0)) in bit/s"""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0) or np.any(b > 1 + 1e-9):
        raise DomainError("bandwidth fraction must lie in (0, 1]")
    if B <= 0 or N0 <= 0:
        raise DomainError("bandwidth and noise density must be positive")
    snr = np.asarray(theta, dtype=float) * np.asarray(h2, dtype=float) * np.asarray(P, dtype=float) / (B * N0)
    return _out(b * B * np.log1p(snr) / LN2)


def spectral_rates(scenario: Scenario, round_index: int) -> np.ndarray:
    """Rate of every client if it held the whole band in round ``round_index``"""
    system = scenario.system
    return np.asarray(
        uplink_rate(
            np.ones(scenario.num_clients),
            system.total_bandwidth_hz,
            scenario.path_loss,
            scenario.fading_power(round_index),
            scenario.transmit_power_w,
            system.noise_density_w_per_hz,
        ),
        dtype=float,
    )


def client_round_cost(profile: ClientProfile, f: float, rate: float, epochs: int, capacitance: float) -> ClientCost:
    """Computation and upload latency/energy of one selected client"""
    if not f > 0:
        raise InfeasibleDecisionError(f"client {profile.index} selected with frequency {f}")
    if not rate > 0:
        raise InfeasibleDecisionError(f"client {profile.index} selected with rate {rate}")
    d = profile.dataset_size
    s = profile.cycles_per_bit
    comp_latency = epochs * s * d / f
    comp_energy = d * capacitance * s * f ** 2 * epochs
    upload_latency = profile.model_size_bits / rate
    return ClientCost(
        comp_latency=comp_latency,
        comp_energy=comp_energy,
        upload_latency=upload_latency,
        upload_energy=profile.transmit_power_w * upload_latency,
    )


def round_cost(
    decision: RoundDecision,
    scenario: Scenario,
    round_index: int,
    alpha1: Optional[float] = None,
    alpha2: Optional[float] = None,
) -> CostReport:
    """
    Aggregate latency T_t, energy E_t and utility Y_t of a round

    Unselected clients contribute zero. Weights default to the scenario's.
    """
    system = scenario.system
    alpha1 = system.alpha1 if alpha1 is None else alpha1
    alpha2 = system.alpha2 if alpha2 is None else alpha2
    K = scenario.num_clients
    selected = decision.selected
    comp_latency = np.zeros(K)
    comp_energy = np.zeros(K)
    upload_latency = np.zeros(K)
    upload_energy = np.zeros(K)

    if selected.any():
        idx = np.flatnonzero(selected)
        b = decision.bandwidth[idx]
        if np.any(b <= 0):
            raise InfeasibleDecisionError(f"clients {idx[b <= 0].tolist()} selected without bandwidth")
        rate = np.asarray(
            uplink_rate(
                b,
                system.total_bandwidth_hz,
                scenario.path_loss[idx],
                scenario.fading_power(round_index)[idx],
                scenario.transmit_power_w[idx],
                system.noise_density_w_per_hz,
            ),
            dtype=float,
        )
        for k, r in zip(idx, rate):
            cost = client_round_cost(scenario.profile(int(k)), float(decision.frequency[k]), float(r), system.local_epochs, system.capacitance)
            comp_latency[k] = cost.comp_latency
            comp_energy[k] = cost.comp_energy
            upload_latency[k] = cost.upload_latency
            upload_energy[k] = cost.upload_energy

    return CostReport(
        comp_latency=comp_latency,
        comp_energy=comp_energy,
        upload_latency=upload_latency,
        upload_energy=upload_energy,
        selected=selected,
        alpha1=alpha1,
        alpha2=alpha2,
    )
