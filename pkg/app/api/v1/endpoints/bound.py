"""
Generalization bound endpoint
"""

import logging

from fastapi import APIRouter, HTTPException

from app.core.exceptions import FedSelectError
from app.models.schemas import BoundParamsDocument
from app.services.genbound import evaluate_bound

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/", response_model=dict)
async def compute_bound(document: BoundParamsDocument):
    """Term-by-term bound for explicit inputs"""
    try:
        breakdown = evaluate_bound(document.to_params())
        return {"round_index": document.round_index, "terms": breakdown.as_row()}
    except FedSelectError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Error evaluating bound: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
