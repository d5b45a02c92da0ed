import json
import logging

import numpy as np
import torch

from tripletswap.adapters.logging_utils import JsonLogFormatter
from tripletswap.domain.errors import CheckpointError


def _record(msg: str, context: dict, exc: BaseException | None = None) -> logging.LogRecord:
    exc_info = (type(exc), exc, None) if exc is not None else None
    record = logging.LogRecord("tripletswap.test", logging.INFO, __file__, 1, msg, None, exc_info)
    record.context = context
    return record


def test_context_is_flattened_and_tensors_serialise():
    line = JsonLogFormatter().format(_record("train_step", {"step": 3, "loss": torch.tensor(0.5), "n": np.int64(7)}))
    payload = json.loads(line)
    assert payload["event"] == "train_step"
    assert payload["step"] == 3
    assert payload["loss"] == 0.5
    assert payload["n"] == 7


def test_domain_errors_carry_their_code():
    exc = CheckpointError("oracle hash mismatch", path="m.safetensors")
    payload = json.loads(JsonLogFormatter().format(_record("load_failed", {}, exc)))
    assert payload["error"]["error"] == "checkpoint_invalid"
    assert payload["error"]["context"] == {"path": "m.safetensors"}
