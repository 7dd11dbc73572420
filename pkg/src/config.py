# config.py
from dotenv import load_dotenv
import os

load_dotenv()  # Load variables from .env into os.environ


def _float_env(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value and value.strip() else default


def _int_env(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value and value.strip() else default


# Monitor defaults
DETECTION_PERIOD_MS = _float_env("HBTM_DETECTION_PERIOD_MS", 1.0)
WINDOW_CAPACITY = _int_env("HBTM_WINDOW_CAPACITY", 1024)
RATE_WINDOW_MS = _float_env("HBTM_RATE_WINDOW_MS", 20.0)
BUSYWAIT_RATIO = _float_env("HBTM_BUSYWAIT_RATIO", 0.5)
BUSYWAIT_CV_MAX = _float_env("HBTM_BUSYWAIT_CV_MAX", 0.25)
STALL_PERIODS = _int_env("HBTM_STALL_PERIODS", 3)

# Rate controller
WINDOW_ITERATION = _int_env("HBTM_WINDOW_ITERATION", 100)
THRESHOLD_FRACTION = _float_env("HBTM_THRESHOLD_FRACTION", 0.05)

# Persistence
LOG_PATH = os.getenv("HBTM_LOG_PATH", "hbtm.log")
PERSIST_ATTEMPTS = _int_env("HBTM_PERSIST_ATTEMPTS", 2)

# Runtime
LOG_LEVEL = os.getenv("HBTM_LOG_LEVEL", "INFO").upper()
SWITCH_INTERVAL_US = _int_env("HBTM_SWITCH_INTERVAL_US", 500)

# Status server
STATUS_HOST = os.getenv("HBTM_STATUS_HOST", "127.0.0.1")
STATUS_PORT = _int_env("HBTM_STATUS_PORT", 8000)
