"""Status FastAPI application."""

import logging
import time
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import HTTPException
from fastapi.responses import JSONResponse

from .routes import session as session_routes
from .services.session_manager import HeartbeatSession, session_manager
from .utils.errors import create_error_response

logger = logging.getLogger(__name__)

SessionProvider = Callable[[], Optional[HeartbeatSession]]


def _global_session() -> Optional[HeartbeatSession]:
    return session_manager.session


def create_app(session_provider: Optional[SessionProvider] = None) -> FastAPI:
    """Create the status app over whatever session ``session_provider`` returns."""

    app = FastAPI(
        title="HBTM Status API",
        description="Live view of heartbeat monitoring",
        version="1.0.0",
        docs_url="/docs",
        redoc_url="/redoc",
    )
    app.state.session_provider = session_provider or _global_session

    @app.middleware("http")
    async def add_process_time_header(request: Request, call_next):
        """Middleware to add process time header."""

        start_time = time.time()
        response = await call_next(request)
        response.headers["X-Process-Time"] = str(time.time() - start_time)
        return response

    @app.exception_handler(HTTPException)
    async def http_exception_handler(request, exc):
        # raise_http_error already built the envelope
        if isinstance(exc.detail, dict) and "error" in exc.detail:
            content = exc.detail
        else:
            content = create_error_response(exc.status_code, str(exc.detail))
        return JSONResponse(status_code=exc.status_code, content=content)

    @app.exception_handler(Exception)
    async def global_exception_handler(request, exc):
        """Global exception handler for consistent error responses."""
        logger.exception("Unhandled status API error", extra={"event": "status.error"})
        return JSONResponse(status_code=500, content=create_error_response(500, "Internal server error"))

    @app.get("/health")
    async def health_check():
        """Health check endpoint."""
        session = app.state.session_provider()
        return {
            "status": "healthy",
            "session": session.status.value if session is not None else None,
        }

    app.include_router(session_routes.router)
    return app
