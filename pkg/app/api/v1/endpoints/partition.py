"""
Label partition endpoint
"""

import logging

from fastapi import APIRouter, HTTPException

from app.core.config import ExperimentConfig, parse_experiment_config
from app.core.exceptions import FedSelectError
from app.models.schemas import PartitionRequest
from app.services.reports import partition_frame

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/", response_model=dict)
async def create_partition(request: PartitionRequest):
    """Hybrid IID/Dirichlet label counts per client"""
    try:
        config = parse_experiment_config(request.config) if request.config else ExperimentConfig()
        config = config.with_seed(request.seed)
        table = partition_frame(config)
        return {
            "seed": config.system.rng_seed,
            "num_clients": config.system.num_clients,
            "rows": table.to_dict(orient="records"),
        }
    except FedSelectError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error building partition: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
