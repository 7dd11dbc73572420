"""Heart-rate adjustment record."""

from typing import Optional

from pydantic import BaseModel, Field


class RateAdjustment(BaseModel):
    """Outcome of one adjustment round.

    ``iteration`` is the multiplicative correction applied to the workload's
    iterations-between-beats; it is 1.0 and ``changed`` is False when the
    average already sits inside the tolerance band.
    """

    average_heartrate: float = Field(ge=0)
    expected_heartrate: float = Field(gt=0)
    threshold: float = Field(ge=0)
    window_iteration: int = Field(ge=1)
    time_s: Optional[float] = None
    amount: Optional[float] = None
    iteration: float = 1.0
    changed: bool = False
