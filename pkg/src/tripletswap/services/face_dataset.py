# src/tripletswap/services/face_dataset.py
"""
Synthetic face dataset: identity pairs rendered to PNG plus a JSON-lines
manifest `samples.jsonl` with one record per image

    {id_key, image_path, identity[8], attributes[9], seed}

Pairs share an `id_key`; `seed` is the pair seed the two vectors came from.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import torch

from tripletswap.adapters.config import config
from tripletswap.adapters.image_io import iter_jsonl, load_png, save_png, write_jsonl
from tripletswap.adapters.logging_utils import get_logger
from tripletswap.analysis.render import render
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.factors import FactorVector, make_identity_pair
from tripletswap.domain.seeds import derive_seed
from tripletswap.domain.triplets import SampleRecord

logger = get_logger(__name__)

SAMPLES_FILE = "samples.jsonl"


def pair_seed(root_seed: int, index: int) -> int:
    return derive_seed(root_seed, "pair", index)


def _write_pair(args: tuple[int, int, str]) -> list[dict]:
    index, seed, out_dir = args
    id_key = f"id{index:06d}"
    rows = []
    for j, factors in enumerate(make_identity_pair(seed)):
        rel = f"images/{id_key}_{j}.png"
        save_png(render(factors), Path(out_dir) / rel)
        rows.append(
            SampleRecord(
                id_key=id_key,
                image_path=rel,
                identity=factors.identity,
                attributes=factors.attributes,
                seed=seed,
            ).model_dump(mode="json")
        )
    return rows


def generate_dataset(count: int, seed: int, out_dir: str | Path, workers: int | None = None) -> Path:
    """Render `count` images (ceil(count/2) identity pairs) and write the manifest."""
    if count < 1:
        raise ConfigValidationError("count must be >= 1", count=count)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_pairs = (count + 1) // 2
    jobs = [(i, pair_seed(seed, i), str(out)) for i in range(n_pairs)]
    n_workers = config.NUM_WORKERS if workers is None else workers

    if n_workers > 0:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            # map keeps submission order, so the manifest is deterministic
            results = list(ex.map(_write_pair, jobs, chunksize=16))
    else:
        results = [_write_pair(job) for job in jobs]

    rows = [row for pair in results for row in pair][:count]
    path = write_jsonl(rows, out / SAMPLES_FILE)
    logger.info(
        "dataset_generated",
        extra={"context": {"out": str(out), "count": len(rows), "pairs": n_pairs, "seed": seed}},
    )
    return path


def read_samples(data_dir: str | Path) -> list[SampleRecord]:
    return [SampleRecord(**row) for row in iter_jsonl(Path(data_dir) / SAMPLES_FILE)]


def load_dataset(
    data_dir: str | Path, as_uint8: bool = False
) -> tuple[torch.Tensor, list[FactorVector], list[SampleRecord]]:
    """Images [N,3,H,W], factor vectors and records, in manifest order."""
    root = Path(data_dir)
    records = read_samples(root)
    if not records:
        raise ConfigValidationError(f"empty dataset at {root}", path=str(root))
    images = torch.stack([load_png(root / r.image_path, as_uint8) for r in records])
    return images, [r.factors for r in records], records


def dataset_pair_seeds(data_dir: str | Path) -> list[int]:
    """Distinct pair seeds in manifest order."""
    seen: dict[int, None] = {}
    for r in read_samples(data_dir):
        seen.setdefault(r.seed, None)
    return list(seen)
