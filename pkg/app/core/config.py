"""
Configuration settings for FedSelectAPI

Two layers live here: process-wide ``Settings`` read from the environment
(and ``.env``), and the ``ExperimentConfig`` document that describes one
simulated wireless cell, its optimizer, the learning task and the baselines.
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from app.core.exceptions import ConfigurationError

Interval = Tuple[float, float]


class Settings(BaseSettings):
    """Application settings"""

    # Application
    project_name: str = "FedSelectAPI"
    version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # Files
    results_directory: str = "./results"

    # HTTP surface
    api_host: str = "0.0.0.0"
    api_port: int = 8000

    # Parallel method runs inside bench/sweep (1 = sequential)
    worker_threads: int = 1

    class Config:
        env_file = ".env"
        case_sensitive = False


settings = Settings()


def dbm_to_watts(value_dbm: float) -> float:
    """Convert a power level in dBm to watts"""
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemConfig(_Section):
    """Cell-wide physical and learning constants"""

    num_clients: int = Field(80, ge=1)
    total_bandwidth_hz: float = Field(2e6, gt=0)
    noise_density_dbm_hz: float = -174.0
    carrier_freq_hz: float = Field(2.4e9, gt=0)
    path_loss_exp: float = Field(2.7, gt=0)
    capacitance: float = Field(1e-27, gt=0)
    alpha1: float = Field(1.0, ge=0)
    alpha2: float = Field(1.0, ge=0)
    kl_threshold: float = Field(0.2, ge=0)
    data_budget: float = Field(2000.0, ge=0)
    local_epochs: int = Field(10, ge=1)
    learning_rate: float = Field(0.1, gt=0)
    learning_rate_decay: float = Field(1.0, gt=0, le=1)
    learning_rate_schedule: Optional[List[float]] = None
    batch_size: int = Field(32, ge=1)
    rng_seed: int = Field(2024, ge=0, lt=2**64)
    average_channel_gain: float = Field(1.0, gt=0)
    # Accepted for completeness; no cost or constraint reads them.
    max_energy_j: Interval = (2.0, 9.0)
    system_mu: float = 1.7e-6

    @model_validator(mode="after")
    def _check_weights(self) -> "SystemConfig":
        if self.alpha1 + self.alpha2 <= 0:
            raise ValueError("alpha1 + alpha2 must be positive")
        if self.learning_rate_schedule is not None:
            if not self.learning_rate_schedule or any(x <= 0 for x in self.learning_rate_schedule):
                raise ValueError("learning_rate_schedule entries must be positive")
        return self

    @property
    def noise_density_w_per_hz(self) -> float:
        return dbm_to_watts(self.noise_density_dbm_hz)

    def learning_rate_at(self, round_index: int) -> float:
        """Rate for a given round; an explicit schedule holds its last value"""
        if self.learning_rate_schedule:
            idx = min(round_index, len(self.learning_rate_schedule) - 1)
            return float(self.learning_rate_schedule[idx])
        return float(self.learning_rate * self.learning_rate_decay ** round_index)


class ClientRanges(_Section):
    """Closed sampling intervals for per-client parameters"""

    distance_m: Interval = (200.0, 250.0)
    transmit_power_dbm: Interval = (20.0, 33.0)
    max_frequency_hz: Interval = (2e6, 5e6)
    cycles_per_bit: Interval = (1.0, 10.0)

    @property
    def transmit_power_w_range(self) -> Interval:
        low, high = self.transmit_power_dbm
        return dbm_to_watts(low), dbm_to_watts(high)


class SolverParams(_Section):
    """DC penalty iteration, rounding and dual sub-gradient knobs"""

    rho_init: float = Field(0.05, gt=0)
    rho_growth: float = Field(2.0, gt=1)
    rho_patience: int = Field(5, ge=1)
    rho_max: float = Field(1e6, gt=0)
    b_min: float = Field(1e-4, gt=0, lt=1)
    dc_max_iters: int = Field(50, ge=1)
    dc_tolerance: float = Field(1e-6, gt=0)
    integrality_tolerance: float = Field(1e-6, gt=0)
    solver_tolerance: float = Field(1e-8, gt=0)
    inner_solver: str = "CLARABEL"
    rounding_threshold: float = Field(0.5, ge=0, le=1)
    force_selection: bool = True
    rounding_search: bool = True
    repair_improvement: float = Field(1e-7, ge=0)
    bandwidth_method: Literal["dual", "grid"] = "dual"
    grid_resolution: float = Field(1e-4, gt=0, lt=1)
    sg_max_iters: int = Field(500, ge=1)
    sg_step_scale: float = Field(1.0, gt=0)
    sg_tolerance: float = Field(1e-7, gt=0)
    brute_force_max_clients: int = Field(8, ge=1)
    kl_smoothing: float = Field(0.0, ge=0)


class BoundConstants(_Section):
    """Constants of the generalization bound that the engine cannot measure"""

    smoothness: float = Field(1.0, ge=0)
    lipschitz: float = Field(1.0, ge=0)
    grad_variance: float = Field(1.0, ge=0)
    loss_bound: float = Field(1.0, ge=0)
    confidence: float = Field(0.05, gt=0, lt=1)
    stability: float = Field(0.01, ge=0)


class FLParams(_Section):
    """Desk-scale learning task"""

    num_categories: int = Field(10, ge=1)
    feature_dim: int = Field(32, ge=1)
    train_samples: int = Field(20000, ge=1)
    test_samples: int = Field(2000, ge=1)
    class_separation: float = Field(1.5, gt=0)
    iid_fraction: float = Field(0.1, ge=0, le=1)
    dirichlet_alpha: float = Field(0.5, gt=0)
    min_client_samples: int = Field(1, ge=0)
    rounds: int = Field(100, ge=0)
    selection_fraction: float = Field(0.25, gt=0, le=1)
    bits_per_parameter: int = Field(32, ge=1)
    model_size_bits: Optional[float] = Field(None, gt=0)
    loss_floor: float = 0.0
    compute_bound: bool = True
    bound: BoundConstants = BoundConstants()

    @property
    def num_parameters(self) -> int:
        return self.feature_dim * self.num_categories + self.num_categories

    @property
    def resolved_model_size_bits(self) -> float:
        if self.model_size_bits is not None:
            return float(self.model_size_bits)
        return float(self.num_parameters * self.bits_per_parameter)


class BaselineParams(_Section):
    """GA, greedy and selection-count settings for comparison methods"""

    ga_population: int = Field(50, ge=2)
    ga_generations: int = Field(200, ge=1)
    ga_mutation_rate: float = Field(0.02, ge=0, le=1)
    ga_tournament_size: int = Field(3, ge=1)
    ga_elitism: int = Field(1, ge=0)
    penalty_m: float = Field(1e6, gt=0)
    literal_fitness: bool = False
    bandwidth_quantum: float = Field(0.01, gt=0, le=1)
    greedy_gain_orientation: Literal["largest_decrease", "literal"] = "largest_decrease"
    selection_count: Optional[int] = Field(None, ge=1)


class ExperimentConfig(_Section):
    """Complete experiment document"""

    system: SystemConfig = SystemConfig()
    client_ranges: ClientRanges = ClientRanges()
    optimizer: SolverParams = SolverParams()
    fl: FLParams = FLParams()
    baselines: BaselineParams = BaselineParams()

    @model_validator(mode="after")
    def _check_cross_section(self) -> "ExperimentConfig":
        if self.optimizer.b_min * self.system.num_clients >= 1:
            raise ValueError("optimizer.b_min must be below 1/num_clients")
        count = self.baselines.selection_count
        if count is not None and count > self.system.num_clients:
            raise ValueError("baselines.selection_count exceeds num_clients")
        return self

    @property
    def selection_count(self) -> int:
        """Per-round selection target m for count-based baselines"""
        if self.baselines.selection_count is not None:
            return self.baselines.selection_count
        return max(1, int(round(self.fl.selection_fraction * self.system.num_clients)))

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return override_config(self, "system.rng_seed", seed)


def _format_validation_error(error: ValidationError) -> Tuple[str, list]:
    locations = []
    parts = []
    for item in error.errors():
        loc = ".".join(str(x) for x in item.get("loc", ()))
        locations.append(loc)
        parts.append(f"{loc or '<root>'}: {item.get('msg')}")
    return "; ".join(parts), locations


def parse_experiment_config(document: Dict[str, Any]) -> ExperimentConfig:
    """Validate a decoded config document"""
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        message, locations = _format_validation_error(e)
        raise ConfigurationError(f"invalid config: {message}", locations) from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load and validate a JSON experiment document

    Args:
        path: Location of the document

    Returns:
        Validated ExperimentConfig
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ConfigurationError(f"config file {path} must hold an object at the top level")
    return parse_experiment_config(document)


def override_config(config: ExperimentConfig, dotted: str, value: Any) -> ExperimentConfig:
    """Return a copy with one nested field replaced, e.g. ``system.alpha1``"""
    document = config.model_dump()
    keys = dotted.split(".")
    node = document
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigurationError(f"unknown config field: {dotted}", [dotted])
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigurationError(f"unknown config field: {dotted}", [dotted])
    node[keys[-1]] = value
    return parse_experiment_config(document)


def _canonical(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the canonical JSON form of a config model"""
    payload = json.dumps(
        _canonical(config.model_dump(mode="python")),
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
