# src/tripletswap/domain/seeds.py
from __future__ import annotations

import hashlib

import numpy as np
import torch

SEED_MASK = (1 << 64) - 1


def derive_seed(root: int, tag: str, index: int = 0) -> int:
    """
    Fan a root seed out into independent streams: sha256("root|tag|index"),
    first 8 bytes as an unsigned 64-bit integer.
    """
    digest = hashlib.sha256(f"{int(root) & SEED_MASK}|{tag}|{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def numpy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & SEED_MASK)


def torch_generator(seed: int, device: str | torch.device = "cpu") -> torch.Generator:
    g = torch.Generator(device=device)
    # torch seeds must fit a signed 64-bit range
    g.manual_seed(int(seed) & ((1 << 63) - 1))
    return g
