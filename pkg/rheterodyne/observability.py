"""Observability: structured logging and run counters."""
import datetime
import logging
import uuid
from typing import Any, Dict

TRACE_ID = str(uuid.uuid4())
METRICS: Dict[str, int] = {
    "spectra_solves": 0,
    "realizations": 0,
    "estimator_calls": 0,
    "files_written": 0,
    "warnings": 0,
    "errors": 0,
}

logger = logging.getLogger("rheterodyne")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = "INFO") -> None:
    """Install the console handler used by the CLI."""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


def now_iso() -> str:
    """Get current time in ISO format."""
    return datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0, tzinfo=None).isoformat() + "Z"


def log_event(event: str, level: int = logging.INFO, **fields: Any) -> Dict[str, Any]:
    """Log a structured event."""
    payload = {"ts": now_iso(), "trace_id": TRACE_ID, "event": event, **fields}
    logger.log(level, "%s", payload)
    return payload


def log_warning(event: str, **fields: Any) -> Dict[str, Any]:
    METRICS["warnings"] += 1
    return log_event(event, level=logging.WARNING, **fields)
