from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.api.v1.api import api_router
from app.core.config import get_settings
from app.core.errors import CodecError
from app.core.logging import configure_logging

settings = get_settings()
app = FastAPI(title=settings.project_name)


@app.on_event("startup")
def startup() -> None:
    configure_logging(get_settings().log_level)


@app.exception_handler(CodecError)
async def codec_error_handler(request: Request, exc: CodecError) -> JSONResponse:
    return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})


app.include_router(api_router, prefix=settings.api_prefix)
