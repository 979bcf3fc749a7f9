from fastapi import APIRouter

from app.api.v1.endpoints import codec, profiles

api_router = APIRouter()
api_router.include_router(profiles.router, tags=["profiles"])
api_router.include_router(codec.router, tags=["codec"])
