# src/tripletswap/services/triplet_builder.py
"""
Triplet ID Group construction.

For an identity pair (A1, A2) and a donor B, the proxy swaps B's identity onto
A2's attributes to make the pseudo target B~. Training then maps
(A1 identity, B~ attributes) to the real image A2.

On disk a manifest directory holds

    manifest.json    header: seed, proxy config, transform, counts
    triplets.jsonl   one TripletRecord per line
    images/          source / pseudo_target / ground_truth / donor PNGs
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from tripletswap.adapters.config import config
from tripletswap.adapters.image_io import iter_jsonl, read_json, save_png, write_json, write_jsonl
from tripletswap.adapters.logging_utils import get_logger
from tripletswap.adapters.proxy_degraded import make_proxy
from tripletswap.analysis.render import render
from tripletswap.domain.coefficients import extract_coefficients, recombine
from tripletswap.domain.errors import (
    ArtifactIOError,
    ConfigValidationError,
    ProxyFailureError,
    RecordRejectedError,
    TripletSwapError,
)
from tripletswap.domain.factors import (
    FACE_HEIGHT,
    FACE_WIDTH,
    IDENTITY_INTERVALS,
    IDENTITY_NAMES,
    FactorVector,
    make_identity_pair,
    sample_factors,
)
from tripletswap.domain.ports import ProxySwapper
from tripletswap.domain.run_config import ProxyConfig
from tripletswap.domain.seeds import derive_seed
from tripletswap.domain.triplets import ROLES, ControlTransform, DatasetManifest, TripletRecord

logger = get_logger(__name__)

MANIFEST_FILE = "manifest.json"
TRIPLETS_FILE = "triplets.jsonl"
MAX_DONOR_RESAMPLES = 100


def _tag(namespace: str, tag: str) -> str:
    return tag if namespace == "train" else f"{namespace}:{tag}"


def draw_donor(donor_seed: int, avoid_identity: tuple[float, ...]) -> FactorVector:
    donor = sample_factors(donor_seed)
    k = 0
    while donor.identity == avoid_identity:
        k += 1
        if k > MAX_DONOR_RESAMPLES:
            raise ConfigValidationError("could not draw a distinct donor identity", donor_seed=donor_seed)
        donor = sample_factors(derive_seed(donor_seed, "donor_resample", k))
    return donor


def check_landmark_consistency(record: TripletRecord) -> None:
    """With an exact proxy, recombining A1 and B~ coefficients must give A2's."""
    combined = recombine(extract_coefficients(record.source), extract_coefficients(record.pseudo_target))
    if combined != extract_coefficients(record.ground_truth):
        raise RecordRejectedError(
            "recombined landmarks differ from ground truth",
            pair_seed=record.pair_seed,
            donor_seed=record.donor_seed,
        )


def build_triplet(pair_seed: int, donor_seed: int, proxy: ProxySwapper, repeat: int = 0) -> TripletRecord:
    a1, a2 = make_identity_pair(pair_seed)
    donor = draw_donor(donor_seed, a1.identity)
    proxy_seed = derive_seed(pair_seed, f"proxy:{donor_seed}", repeat)
    try:
        pseudo = proxy.swap_factors(donor, a2, proxy_seed)
    except TripletSwapError:
        raise
    except Exception as exc:
        raise ProxyFailureError(
            f"proxy {proxy.name} failed: {exc}",
            pair_seed=pair_seed,
            donor_seed=donor_seed,
            proxy=proxy.name,
        ) from exc
    record = TripletRecord(
        pair_seed=pair_seed,
        donor_seed=donor_seed,
        repeat=repeat,
        source=a1,
        pseudo_target=pseudo,
        ground_truth=a2,
        donor=donor,
        proxy_name=proxy.name,
        proxy_seed=proxy_seed,
    )
    if proxy.name == "oracle":
        check_landmark_consistency(record)
    return record


def mirrored_face_shape(factors: FactorVector) -> dict[str, float]:
    """Face width/height mirrored about their interval midpoints (lo + hi - v)."""
    out = {}
    for idx in (FACE_WIDTH, FACE_HEIGHT):
        iv = IDENTITY_INTERVALS[idx]
        out[IDENTITY_NAMES[idx]] = iv.lo + iv.hi - factors.identity[idx]
    return out


def apply_control_transform(record: TripletRecord, transform: ControlTransform) -> TripletRecord:
    if transform == "preserve_glasses":
        if record.source.has_glasses != record.ground_truth.has_glasses:
            raise RecordRejectedError(
                "source and ground truth differ in glasses",
                pair_seed=record.pair_seed,
                donor_seed=record.donor_seed,
                reason="glasses_mismatch",
            )
        return record.with_pseudo_target(record.pseudo_target.replace(glasses_flag=0.0), transform)
    if transform == "transfer_face_shape":
        shape = mirrored_face_shape(record.ground_truth)
        return record.with_pseudo_target(record.pseudo_target.replace(**shape), transform)
    raise ConfigValidationError(f"unknown control transform {transform!r}", transform=transform)


def _write_images(args: tuple[int, TripletRecord, str]) -> dict[str, str]:
    index, record, out_dir = args
    paths = {}
    for role in ROLES:
        rel = f"images/{index:06d}_{role}.png"
        save_png(render(record.factors_for(role)), Path(out_dir) / rel)
        paths[role] = rel
    return paths


def collect_records(
    count: int,
    proxy: ProxySwapper,
    transform: ControlTransform | None,
    seed: int,
    *,
    pair_seeds: Sequence[int] | None = None,
    augment_repeats: int = 1,
    namespace: str = "train",
) -> tuple[list[TripletRecord], dict[str, int]]:
    """Deterministic, deduplicated records; transform-rejected records are filtered."""
    if count < 1:
        raise ConfigValidationError("count must be >= 1", count=count)
    records: list[TripletRecord] = []
    seen: set[tuple[int, int, int]] = set()
    rejected = duplicates = 0
    max_attempts = 50 * count
    i = 0
    while len(records) < count:
        if i >= max_attempts:
            raise ConfigValidationError(
                "could not collect enough triplets", requested=count, built=len(records), rejected=rejected
            )
        if pair_seeds:
            p_seed = pair_seeds[i % len(pair_seeds)]
        else:
            p_seed = derive_seed(seed, _tag(namespace, "pair"), i)
        d_seed = derive_seed(seed, _tag(namespace, "donor"), i)
        i += 1
        for repeat in range(augment_repeats):
            record = build_triplet(p_seed, d_seed, proxy, repeat)
            if record.dedup_key in seen:
                duplicates += 1
                continue
            if transform is not None:
                try:
                    record = apply_control_transform(record, transform)
                except RecordRejectedError:
                    rejected += 1
                    continue
            seen.add(record.dedup_key)
            records.append(record)
            if len(records) == count:
                break
    counts = {"records": len(records), "attempts": i, "rejected": rejected, "duplicates": duplicates}
    return records, counts


def build_manifest(
    count: int,
    proxy_config: ProxyConfig,
    transform: ControlTransform | None,
    seed: int,
    out_dir: str | Path,
    *,
    pair_seeds: Sequence[int] | None = None,
    namespace: str = "train",
    workers: int | None = None,
) -> DatasetManifest:
    proxy = make_proxy(proxy_config)
    records, counts = collect_records(
        count,
        proxy,
        transform,
        seed,
        pair_seeds=pair_seeds,
        augment_repeats=proxy_config.augment_repeats,
        namespace=namespace,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, r, str(out)) for i, r in enumerate(records)]
    n_workers = config.NUM_WORKERS if workers is None else workers
    if n_workers > 0:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            all_paths = list(ex.map(_write_images, jobs, chunksize=8))
    else:
        all_paths = [_write_images(job) for job in jobs]
    records = [r.model_copy(update={"paths": p}) for r, p in zip(records, all_paths)]

    manifest = DatasetManifest(
        seed=seed,
        proxy=proxy_config.model_dump(),
        transform=transform,
        counts=counts,
        records=tuple(records),
    )
    write_manifest(manifest, out)
    logger.info(
        "manifest_built",
        extra={"context": {"out": str(out), "proxy": proxy.name, "transform": transform, **counts}},
    )
    return manifest


def write_manifest(manifest: DatasetManifest, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    write_json(manifest.header(), out / MANIFEST_FILE)
    return write_jsonl((r.to_record() for r in manifest.records), out / TRIPLETS_FILE)


def read_manifest(manifest_dir: str | Path, check_files: bool = True) -> DatasetManifest:
    root = Path(manifest_dir)
    if root.is_file():
        root = root.parent
    header = read_json(root / MANIFEST_FILE)
    records = tuple(TripletRecord.from_record(row) for row in iter_jsonl(root / TRIPLETS_FILE))
    if check_files:
        for r in records:
            for role, rel in r.paths.items():
                if not (root / rel).exists():
                    raise ArtifactIOError(f"missing {role} image: {root / rel}", path=str(root / rel))
    return DatasetManifest(records=records, **header)
