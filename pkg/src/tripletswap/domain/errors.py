# src/tripletswap/domain/errors.py
from __future__ import annotations

from typing import Any


class TripletSwapError(Exception):
    """
    Base error. `code` is a stable machine-readable identifier and `context`
    carries the raw values the CLI serialises into its error record.
    """

    code = "tripletswap_error"

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.context: dict[str, Any] = context

    def to_record(self) -> dict[str, Any]:
        return {"error": self.code, "message": str(self), "context": self.context}


class FactorValidationError(TripletSwapError, ValueError):
    code = "factor_out_of_range"


class ConfigValidationError(TripletSwapError, ValueError):
    code = "invalid_config"


class NumericError(TripletSwapError, ArithmeticError):
    code = "numeric_error"


class OracleTrainingError(TripletSwapError, RuntimeError):
    code = "oracle_training_failed"


class TrainingAbortedError(TripletSwapError, RuntimeError):
    code = "training_aborted"


class RecordRejectedError(TripletSwapError, ValueError):
    code = "record_rejected"


class CheckpointError(TripletSwapError, RuntimeError):
    code = "checkpoint_invalid"


class ArtifactIOError(TripletSwapError, OSError):
    code = "artifact_io"


class ProxyFailureError(TripletSwapError, RuntimeError):
    code = "proxy_failed"
