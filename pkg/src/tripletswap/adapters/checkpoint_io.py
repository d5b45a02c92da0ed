# src/tripletswap/adapters/checkpoint_io.py
"""
Single-file checkpoint container on top of safetensors.

Tensors are stored under prefixed names (`model/...`, `optim/...`,
`schedule/...`, `identity/...`). The string metadata header carries

    format, version, config (JSON), oracle_hash, step, checksum

where checksum is SHA-256 over (name, dtype, shape, raw bytes) of every
tensor in name order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file

from tripletswap.adapters.logging_utils import get_logger
from tripletswap.domain.errors import ArtifactIOError, CheckpointError

logger = get_logger(__name__)

FORMAT = "tripletswap-ckpt"
VERSION = "1"


def _resolve(path: str | Path | None) -> Path:
    if path is None:
        raise ValueError("Checkpoint path is required.")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Checkpoint not found: {p}")
    return p


def tensor_digest(tensors: Mapping[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.reshape(-1).view(torch.uint8).numpy().tobytes())
    return h.hexdigest()


def module_hash(module: torch.nn.Module) -> str:
    return tensor_digest(module.state_dict())


def prefixed(prefix: str, tensors: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {f"{prefix}/{k}": v for k, v in tensors.items()}


def strip_prefix(prefix: str, tensors: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    head = prefix + "/"
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}


def save_container(path: str | Path, tensors: Mapping[str, torch.Tensor], header: Mapping[str, Any]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    flat = {k: v.detach().cpu().contiguous().clone() for k, v in tensors.items()}
    metadata = {
        "format": FORMAT,
        "version": VERSION,
        "checksum": tensor_digest(flat),
    }
    for key, value in header.items():
        metadata[key] = value if isinstance(value, str) else json.dumps(value, sort_keys=True)
    try:
        save_file(flat, str(p), metadata=metadata)
    except OSError as exc:
        raise ArtifactIOError(f"failed to write checkpoint {p}", path=str(p), error=str(exc)) from exc
    logger.info("checkpoint_saved", extra={"context": {"path": str(p), "tensors": len(flat)}})
    return p


def load_container(path: str | Path) -> tuple[dict[str, torch.Tensor], dict[str, str]]:
    p = _resolve(path)
    try:
        with safe_open(str(p), framework="pt") as f:
            metadata = dict(f.metadata() or {})
        tensors = load_file(str(p))
    except SafetensorError as exc:
        raise CheckpointError(f"unreadable checkpoint {p}", path=str(p), error=str(exc)) from exc

    if metadata.get("format") != FORMAT:
        raise CheckpointError(f"not a {FORMAT} file: {p}", path=str(p), format=metadata.get("format"))
    if metadata.get("version") != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {metadata.get('version')}", path=str(p), expected=VERSION
        )
    digest = tensor_digest(tensors)
    if digest != metadata.get("checksum"):
        raise CheckpointError(f"checksum mismatch in {p}", path=str(p), expected=metadata.get("checksum"), actual=digest)
    logger.info("checkpoint_loaded", extra={"context": {"path": str(p), "tensors": len(tensors)}})
    return tensors, metadata


@dataclass
class CheckpointBundle:
    """Everything needed to resume training or run inference."""

    model_state: dict[str, torch.Tensor]
    schedule: dict[str, torch.Tensor]
    config: dict[str, Any]
    oracle_hash: str
    step: int = 0
    optimizer_state: dict[str, torch.Tensor] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def tensors(self) -> dict[str, torch.Tensor]:
        out = prefixed("model", self.model_state)
        out.update(prefixed("optim", self.optimizer_state))
        out.update(prefixed("schedule", self.schedule))
        return out

    def parameter_hash(self) -> str:
        return tensor_digest(self.model_state)


def save_checkpoint(bundle: CheckpointBundle, path: str | Path) -> Path:
    header = {
        "kind": "swapnet",
        "config": bundle.config,
        "oracle_hash": bundle.oracle_hash,
        "step": str(bundle.step),
        "extra": bundle.extra,
    }
    return save_container(path, bundle.tensors(), header)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    tensors, meta = load_container(path)
    if meta.get("kind") != "swapnet":
        raise CheckpointError(f"{path} is not a model checkpoint", path=str(path), kind=meta.get("kind"))
    return CheckpointBundle(
        model_state=strip_prefix("model", tensors),
        optimizer_state=strip_prefix("optim", tensors),
        schedule=strip_prefix("schedule", tensors),
        config=json.loads(meta["config"]),
        oracle_hash=meta.get("oracle_hash", ""),
        step=int(meta.get("step", "0")),
        extra=json.loads(meta.get("extra", "{}")),
    )
