"""
Request documents shared by the HTTP API and the command-line runner
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.core.config import BoundConstants
from app.models.bound import BoundParams


class BoundParamsDocument(BaseModel):
    """Explicit bound inputs; schedules must have ``round_index`` entries"""

    model_config = ConfigDict(extra="forbid")

    round_index: int = Field(0, ge=0)
    learning_rates: List[float] = []
    optimality_gaps: List[float] = []
    epochs: int = Field(10, ge=1)
    client_sizes: List[float]
    kl_terms: List[float]
    constants: BoundConstants = BoundConstants()

    def to_params(self) -> BoundParams:
        c = self.constants
        return BoundParams(
            round_index=self.round_index,
            learning_rates=tuple(self.learning_rates),
            smoothness=c.smoothness,
            lipschitz=c.lipschitz,
            grad_variance=c.grad_variance,
            epochs=self.epochs,
            optimality_gaps=tuple(self.optimality_gaps),
            loss_bound=c.loss_bound,
            confidence=c.confidence,
            stability=c.stability,
            client_sizes=tuple(self.client_sizes),
            kl_terms=tuple(self.kl_terms),
        )


class PartitionRequest(BaseModel):
    config: Optional[Dict[str, Any]] = None
    seed: Optional[int] = Field(None, ge=0)


class SolveRequest(BaseModel):
    config: Optional[Dict[str, Any]] = None
    seed: Optional[int] = Field(None, ge=0)
    round_index: int = Field(0, ge=0)
    oracle: bool = False
