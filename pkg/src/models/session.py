"""Session status Pydantic models served by the status API."""

from typing import Dict, List, Optional

from pydantic import BaseModel

from .monitor import BehaviorState, DetectionEvent


class ThreadStatus(BaseModel):
    """Latest verdict and beat bookkeeping for one worker."""
    thread_id: int
    state: Optional[BehaviorState] = None
    observed_rate: Optional[float] = None
    last_seq_no: int = 0
    last_beat_ns: Optional[int] = None
    iterations_per_beat: int = 1
    exited: bool = False


class SessionStatusResponse(BaseModel):
    """Response for the thread listing."""
    mode: str
    status: str
    detection_period_ms: float
    threads: List[ThreadStatus]


class EventsResponse(BaseModel):
    """Most recent detection events, oldest first."""
    events: List[DetectionEvent]
    total: int


class QueriesResponse(BaseModel):
    """Sequence queries performed so far, keyed by detector (-1 is the central monitor)."""
    per_detector: Dict[int, int]
    total: int
    max: int
