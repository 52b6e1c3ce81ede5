"""
Single-round optimization endpoint
"""

import logging

import numpy as np
from fastapi import APIRouter, HTTPException

from app.core.config import ExperimentConfig, parse_experiment_config
from app.core.exceptions import FedSelectError
from app.models.schemas import SolveRequest
from app.services.reports import solve_frames

logger = logging.getLogger(__name__)

router = APIRouter()


def _records(frame):
    # JSON has no NaN or infinity
    frame = frame.replace([np.inf, -np.inf], np.nan)
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="records")


@router.post("/", response_model=dict)
async def solve_round(request: SolveRequest):
    """Run selection, bandwidth and frequency allocation for one round"""
    try:
        config = parse_experiment_config(request.config) if request.config else ExperimentConfig()
        config = config.with_seed(request.seed)
        frames = solve_frames(config, request.round_index, request.oracle)
        objective = _records(frames["objective"])[0]
        feasibility = frames["feasibility"]
        return {
            "round_index": request.round_index,
            "objective": objective,
            "feasible": bool(np.all(feasibility["passed"])),
            "feasibility": _records(feasibility),
            "decision": _records(frames["decision"]),
        }
    except FedSelectError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error solving round: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
