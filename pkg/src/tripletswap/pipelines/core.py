# src/tripletswap/pipelines/core.py
"""
One function per CLI command. Each resolves its inputs, runs the service and
writes the resolved RunConfig next to what it produced.
"""
from __future__ import annotations

import errno
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

from loguru import logger

from tripletswap.adapters.config import config
from tripletswap.adapters.image_io import load_png, save_png
from tripletswap.domain.errors import ArtifactIOError
from tripletswap.domain.metrics import MetricReport
from tripletswap.domain.run_config import RunConfig
from tripletswap.domain.triplets import ControlTransform, DatasetManifest
from tripletswap.models.oracles import OracleEncoders
from tripletswap.services.ablation import AblationResult, run_ablation
from tripletswap.services.eval import evaluate_run
from tripletswap.services.face_dataset import dataset_pair_seeds, generate_dataset, load_dataset
from tripletswap.services.oracle_trainer import train_oracle_encoders
from tripletswap.services.swap import Swapper
from tripletswap.services.trainer import control_finetune, train_loop
from tripletswap.services.triplet_builder import build_manifest, read_manifest

ARTIFACT_ROOT = Path(config.ARTIFACT_ROOT)
DEFAULT_ORACLES = ARTIFACT_ROOT / "oracles.safetensors"


def default_path(*parts: str) -> Path:
    return ARTIFACT_ROOT.joinpath(*parts)


@contextmanager
def mlflow_run(enabled: bool, run_name: str) -> Iterator[Any]:
    """An MLflow run when tracking is enabled and installed, else a no-op."""
    if not enabled:
        yield None
        return
    try:
        import mlflow
    except ImportError:
        logger.warning("mlflow not installed; tracking disabled", run_name=run_name)
        yield None
        return
    with mlflow.start_run(run_name=run_name) as run:
        yield run


def _manifest_root(path: str | Path) -> Path:
    p = Path(path)
    return p.parent if p.is_file() else p


def load_oracles(path: str | Path | None) -> OracleEncoders:
    p = Path(path) if path is not None else DEFAULT_ORACLES
    logger.info("Loading oracle encoders", path=str(p))
    return OracleEncoders.load(p).to(config.DEVICE)


def load_manifest(path: str | Path) -> tuple[DatasetManifest, Path]:
    root = _manifest_root(path)
    return read_manifest(root), root


# ---------------------------
# Data
# ---------------------------

def gen_data(run_cfg: RunConfig, count: int, out_dir: Path, workers: int | None = None) -> Path:
    logger.info("Generating synthetic faces", count=count, seed=run_cfg.seed, out=str(out_dir))
    path = generate_dataset(count, run_cfg.seed, out_dir, workers)
    run_cfg.write(out_dir)
    logger.info("Dataset written", samples=str(path))
    return path


def train_oracles(run_cfg: RunConfig, data_dir: Path, out_path: Path) -> OracleEncoders:
    images, factors, _ = load_dataset(data_dir)
    oracle_cfg = run_cfg.oracle.model_copy(update={"seed": run_cfg.seed})
    logger.info("Pretraining oracle encoders", samples=len(factors), width=oracle_cfg.width)
    with mlflow_run(run_cfg.train.mlflow, "train-oracles") as run:
        encoders = train_oracle_encoders(images, factors, oracle_cfg, mlflow_run=run)
    encoders.save(out_path)
    run_cfg.write(out_path.parent)
    md = encoders.metadata
    logger.info(
        "Oracle encoders saved",
        path=str(out_path),
        epochs=md.epochs,
        decision_threshold=md.decision_threshold,
        separation_overlap=md.separation_overlap,
    )
    return encoders


def build_triplets(
    run_cfg: RunConfig,
    count: int,
    out_dir: Path,
    transform: ControlTransform | None = None,
    data_dir: Path | None = None,
    eval_split: bool = False,
    workers: int | None = None,
) -> DatasetManifest:
    pair_seeds = dataset_pair_seeds(data_dir) if data_dir is not None and not eval_split else None
    namespace = "eval" if eval_split else "train"
    logger.info(
        "Building triplet manifest",
        count=count,
        proxy=run_cfg.proxy.name,
        transform=transform,
        namespace=namespace,
        from_dataset=pair_seeds is not None,
    )
    manifest = build_manifest(
        count, run_cfg.proxy, transform, run_cfg.seed, out_dir, pair_seeds=pair_seeds, namespace=namespace, workers=workers
    )
    run_cfg.write(out_dir)
    logger.info("Triplet manifest written", out=str(out_dir), **manifest.counts)
    return manifest


# ---------------------------
# Training
# ---------------------------

def train(
    run_cfg: RunConfig,
    manifest_path: Path,
    oracles_path: Path | None,
    out_path: Path,
    resume: Path | None = None,
) -> Path:
    manifest, root = load_manifest(manifest_path)
    oracles = load_oracles(oracles_path)
    train_cfg = run_cfg.train.model_copy(update={"seed": run_cfg.seed, "proxy": manifest.proxy_name or run_cfg.train.proxy})
    logger.info("Training swap model", manifest=str(root), steps=train_cfg.steps, out=str(out_path))
    with mlflow_run(train_cfg.mlflow, "train"):
        bundle = train_loop(manifest, root, oracles, run_cfg.model, train_cfg, out_path, resume=resume)
    run_cfg.write(out_path.parent)
    logger.info("Training finished", step=bundle.step, checkpoint=str(out_path))
    return out_path


def finetune(
    run_cfg: RunConfig,
    checkpoint: Path,
    manifest_path: Path,
    oracles_path: Path | None,
    out_path: Path,
) -> Path:
    manifest, root = load_manifest(manifest_path)
    oracles = load_oracles(oracles_path)
    train_cfg = run_cfg.train.model_copy(update={"seed": run_cfg.seed})
    logger.info("Control finetune", checkpoint=str(checkpoint), transform=manifest.transform, steps=train_cfg.steps)
    with mlflow_run(train_cfg.mlflow, "finetune"):
        bundle = control_finetune(checkpoint, manifest, root, oracles, train_cfg, out_path)
    run_cfg.write(out_path.parent)
    logger.info("Finetune finished", step=bundle.step, checkpoint=str(out_path))
    return out_path


# ---------------------------
# Inference / evaluation
# ---------------------------

def swap_images(
    run_cfg: RunConfig,
    checkpoint: Path,
    source: Path,
    target: Path,
    oracles_path: Path | None,
    k: int,
    out_path: Path,
) -> Path:
    if not Path(checkpoint).exists():
        raise FileNotFoundError(errno.ENOENT, "Checkpoint not found", str(checkpoint))
    swapper = Swapper.from_checkpoint(checkpoint, load_oracles(oracles_path))
    image = swapper.swap_batch(load_png(source), load_png(target), k=k, seed=run_cfg.seed)[0]
    save_png(image, out_path)
    if not out_path.exists():
        raise ArtifactIOError(f"swap output missing: {out_path}", path=str(out_path))
    run_cfg.write(out_path.parent)
    logger.info("Swap written", out=str(out_path), k=k)
    return out_path


def evaluate(
    run_cfg: RunConfig,
    checkpoint: Path,
    manifest_path: Path,
    oracles_path: Path | None,
    out_dir: Path,
) -> MetricReport:
    manifest, root = load_manifest(manifest_path)
    oracles = load_oracles(oracles_path)
    eval_cfg = run_cfg.eval
    logger.info("Evaluating", checkpoint=str(checkpoint), pairs=min(eval_cfg.n_pairs, len(manifest.records)), k=eval_cfg.k_steps)
    report = evaluate_run(checkpoint, manifest, root, oracles, eval_cfg, out_dir)
    run_cfg.write(out_dir)
    logger.info(
        "Evaluation written",
        out=str(out_dir),
        id_similarity=report.id_similarity,
        retrieval_top1=report.retrieval_top1,
        frechet=report.frechet,
    )
    return report


def ablate(
    run_cfg: RunConfig,
    suite: str,
    oracles_path: Path | None,
    eval_manifest_path: Path,
    out_dir: Path,
    train_manifest_path: Path | None = None,
    data_dir: Path | None = None,
    count: int = 1_000,
) -> AblationResult:
    eval_manifest, eval_root = load_manifest(eval_manifest_path)
    train_manifest, train_root = load_manifest(train_manifest_path) if train_manifest_path else (None, None)
    oracles = load_oracles(oracles_path)
    pair_seeds = dataset_pair_seeds(data_dir) if data_dir is not None else None
    run_cfg = run_cfg.model_copy(update={"train": run_cfg.train.model_copy(update={"seed": run_cfg.seed})})
    logger.info("Running ablation suite", suite=suite, out=str(out_dir))
    result = run_ablation(
        suite,
        run_cfg,
        oracles,
        eval_manifest,
        eval_root,
        out_dir,
        train_manifest=train_manifest,
        train_root=train_root,
        train_count=count,
        pair_seeds=pair_seeds,
    )
    logger.info("Ablation finished", suite=suite, rows=len(result.reports), failures=len(result.failures))
    return result
