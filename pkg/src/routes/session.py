"""Read-only session status routes."""

import logging
from collections import Counter

from fastapi import APIRouter, Depends, Query, Request

from ..models.session import EventsResponse, QueriesResponse, SessionStatusResponse
from ..services.session_manager import HeartbeatSession
from ..utils.errors import ErrorResponse, raise_http_error

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api",
    tags=["Session Status"],
    responses={503: {"model": ErrorResponse, "description": "No heartbeat session is active"}},
)


def get_current_session(request: Request) -> HeartbeatSession:
    """Resolve the session the app was created for; 503 while none is running."""
    session = request.app.state.session_provider()
    if session is None:
        logger.debug("Status requested with no session", extra={"event": "status.no_session"})
        raise_http_error(503, "No heartbeat session is active")
    return session


@router.get("/threads", response_model=SessionStatusResponse)
async def list_threads(session: HeartbeatSession = Depends(get_current_session)):
    """
    Latest classification of every registered worker.

    States are whatever the monitors decided most recently; a worker no
    monitor has queried yet reports ``state: null``.
    """
    return SessionStatusResponse(
        mode=session.mode.name.lower(),
        status=session.status.value,
        detection_period_ms=session.config.detection_period_ms,
        threads=session.thread_statuses(),
    )


@router.get("/events", response_model=EventsResponse)
async def recent_events(
    limit: int = Query(default=100, ge=1, le=10_000),
    session: HeartbeatSession = Depends(get_current_session),
):
    """Most recent detection events, oldest first."""
    return EventsResponse(events=session.sink.recent(limit), total=len(session.sink))


@router.get("/queries", response_model=QueriesResponse)
async def query_counts(session: HeartbeatSession = Depends(get_current_session)):
    """Sequence queries per detector so far."""
    counts: Counter = session.sink.query_counts()
    return QueriesResponse(
        per_detector=dict(counts),
        total=sum(counts.values()),
        max=max(counts.values(), default=0),
    )
