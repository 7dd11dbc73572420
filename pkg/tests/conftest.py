"""Pytest configuration and fixtures."""

import pytest
import pytest_asyncio
from fastapi.testclient import TestClient
from httpx import ASGITransport, AsyncClient

from src.main import create_app
from src.models.monitor import MonitorConfig
from src.services.session_manager import HeartbeatSession, SessionManager

from .helpers import ScriptedClock, ScriptedLiveness


@pytest.fixture
def clock():
    """Virtual clock starting at t = 1 s."""
    return ScriptedClock()


@pytest.fixture
def liveness():
    return ScriptedLiveness()


@pytest.fixture
def monitor_config(tmp_path):
    """1 ms periods, 20 ms rate window, 3-period stall, log under tmp_path."""
    return MonitorConfig(
        detection_period_ms=1.0,
        rate_window_ms=20.0,
        stall_periods=3,
        window_capacity=256,
        log_path=str(tmp_path / "hbtm.log"),
    )


@pytest.fixture
def session_manager():
    """Fresh session manager for each test."""
    manager = SessionManager()
    yield manager
    manager.reset()


@pytest.fixture
def status_session(monitor_config, clock, liveness):
    """Running centralized session on the virtual clock with two workers."""
    session = HeartbeatSession(monitor_config, clock=clock, liveness=liveness)
    session.register_worker(0)
    session.register_worker(1)
    session.start(spawn_monitor=False)
    yield session
    session.abort()


@pytest.fixture
def client(status_session):
    """Synchronous test client for the status app."""
    return TestClient(create_app(lambda: status_session))


@pytest_asyncio.fixture
async def async_client(status_session):
    """Asynchronous test client for the status app."""
    transport = ASGITransport(app=create_app(lambda: status_session))
    async with AsyncClient(transport=transport, base_url="http://test") as ac:
        yield ac
