"""
Main API router for v1
"""

from fastapi import APIRouter
from app.api.v1.endpoints import bound, partition, solve

api_router = APIRouter()

api_router.include_router(partition.router, prefix="/partition", tags=["partition"])
api_router.include_router(solve.router, prefix="/solve", tags=["solve"])
api_router.include_router(bound.router, prefix="/bound", tags=["bound"])
