import json
import logging
import sys
import time
from typing import Any

from tripletswap.domain.errors import TripletSwapError

from .config import config


def _jsonable(v: Any) -> Any:
    # tensors and numpy scalars both expose .tolist(); 0-d ones collapse to a number
    if hasattr(v, "tolist"):
        return v.tolist()
    return str(v)


class JsonLogFormatter(logging.Formatter):
    """One JSON object per line; `extra={"context": {...}}` is merged in flat."""

    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "ts": round(time.time(), 3),
            "env": config.ENV,
            "level": record.levelname,
            "logger": record.name,
            "event": record.getMessage(),
        }
        ctx = getattr(record, "context", None)
        if isinstance(ctx, dict):
            payload.update(ctx)
        if record.exc_info and record.exc_info[1] is not None:
            exc = record.exc_info[1]
            if isinstance(exc, TripletSwapError):
                payload["error"] = exc.to_record()
            else:
                payload["error"] = {"error": type(exc).__name__, "message": str(exc)}
        return json.dumps(payload, default=_jsonable)


def get_logger(name: str) -> logging.Logger:
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(JsonLogFormatter())
        logger.addHandler(handler)
        logger.setLevel(config.LOG_LEVEL)
        logger.propagate = False
    return logger
