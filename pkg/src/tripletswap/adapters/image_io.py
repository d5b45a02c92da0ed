# src/tripletswap/adapters/image_io.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np
import torch
from PIL import Image

from tripletswap.adapters.logging_utils import get_logger
from tripletswap.domain.errors import ArtifactIOError

logger = get_logger(__name__)


def _resolve(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Artifact not found: {p}")
    return p


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """[3,H,W] in [0,1] -> HxWx3 uint8 (round to nearest)."""
    arr = image.detach().cpu().clamp(0.0, 1.0).permute(1, 2, 0).numpy().astype(np.float64)
    return np.rint(arr * 255.0).astype(np.uint8)


def save_png(image: torch.Tensor, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(to_uint8(image)).save(p, format="PNG")
    except OSError as exc:
        raise ArtifactIOError(f"failed to write image {p}", path=str(p), error=str(exc)) from exc
    return p


def load_png(path: str | Path, as_uint8: bool = False) -> torch.Tensor:
    """PNG -> float32 [3,H,W] in [0,1], or the raw uint8 values."""
    p = _resolve(path)
    try:
        with Image.open(p) as img:
            raw = np.array(img.convert("RGB"), dtype=np.uint8)
            arr = raw if as_uint8 else raw.astype(np.float32) / 255.0
    except OSError as exc:
        raise ArtifactIOError(f"failed to read image {p}", path=str(p), error=str(exc)) from exc
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def quantize(image: torch.Tensor) -> torch.Tensor:
    """What a PNG round trip would return, without touching disk."""
    return torch.from_numpy(to_uint8(image).astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def write_jsonl(rows: Iterable[dict[str, Any]], path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    try:
        with p.open("w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"failed to write {p}", path=str(p), error=str(exc)) from exc
    logger.debug("jsonl_written", extra={"context": {"path": str(p)}})
    return p


def iter_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    p = _resolve(path)
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ArtifactIOError(f"bad JSON on line {lineno} of {p}", path=str(p), line=lineno) from exc


def read_json(path: str | Path) -> dict[str, Any]:
    p = _resolve(path)
    return json.loads(p.read_text(encoding="utf-8"))


def write_json(payload: dict[str, Any], path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return p
