from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import typer
from loguru import logger

from tripletswap.domain.errors import TripletSwapError
from tripletswap.domain.run_config import RunConfig, resolve_run_config
from tripletswap.domain.triplets import TRANSFORM_ALIASES
from tripletswap.pipelines import core

app = typer.Typer(
    help="Triplet face-swap pipeline (data, oracles, triplets, training, swap, eval, ablation).",
    no_args_is_help=True,
    add_completion=False,
)

ConfigOpt = typer.Option(None, "--config", help="JSON config file with model/train/eval/oracle/proxy sections")
SeedOpt = typer.Option(None, "--seed", help="Root seed (default: config file, else 0)")
OraclesOpt = typer.Option(None, "--oracles", help="Oracle encoder checkpoint (default: <artifact root>/oracles.safetensors)")


def _flag(value: bool) -> Optional[bool]:
    """Unset switches must not override the config file."""
    return True if value else None


def _resolve(command: str, config: Optional[Path], seed: Optional[int], paths: dict[str, Any], **overrides: dict[str, Any]) -> RunConfig:
    return resolve_run_config(command, config_path=config, seed=seed, paths=paths, overrides=overrides)


def _transform(value: Optional[str]) -> Any:
    if value is None:
        return None
    if value not in TRANSFORM_ALIASES:
        raise typer.BadParameter(f"unknown transform {value!r}; choose from {sorted(TRANSFORM_ALIASES)}")
    return TRANSFORM_ALIASES[value]


def _steps(value: Optional[int]) -> Optional[int]:
    if value is not None and value not in (1, 4):
        raise typer.BadParameter("--steps must be 1 or 4")
    return value


@app.command("gen-data")
def gen_data_cmd(
    count: int = typer.Option(..., "--count", help="Number of images (pairs share an identity)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Dataset directory"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Render processes (default TRIPLETSWAP_NUM_WORKERS)"),
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Render identity pairs of synthetic faces with their factor manifest.
    """
    out = out or core.default_path("data")
    run_cfg = _resolve("gen-data", config, seed, {"out": out})
    core.gen_data(run_cfg, count, out, workers)


@app.command("train-oracles")
def train_oracles_cmd(
    data: Path = typer.Option(..., "--data", help="Dataset directory from gen-data"),
    out: Optional[Path] = typer.Option(None, "--out", help="Oracle checkpoint path"),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Maximum epochs"),
    min_samples: Optional[int] = typer.Option(None, "--min-samples", help="Required labelled samples"),
    rmse_target: Optional[float] = typer.Option(None, "--rmse-target", help="Worst-factor validation RMSE target"),
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Pretrain and freeze the identity encoder and attribute regressor.
    """
    out = out or core.DEFAULT_ORACLES
    run_cfg = _resolve(
        "train-oracles",
        config,
        seed,
        {"data": data, "out": out},
        oracle={"max_epochs": epochs, "min_samples": min_samples, "rmse_target": rmse_target},
    )
    core.train_oracles(run_cfg, data, out)


@app.command("build-triplets")
def build_triplets_cmd(
    count: int = typer.Option(..., "--count", help="Number of triplets"),
    out: Optional[Path] = typer.Option(None, "--out", help="Manifest directory"),
    proxy: Optional[str] = typer.Option(None, "--proxy", help="oracle | attr_noisy | id_weak"),
    transform: Optional[str] = typer.Option(None, "--transform", help="none | glasses | shape"),
    data: Optional[Path] = typer.Option(None, "--data", help="Take identity pairs from this dataset"),
    eval_split: bool = typer.Option(False, "--eval", help="Draw pairs from the held-out eval seed namespace"),
    sigma: Optional[float] = typer.Option(None, "--sigma", help="attr_noisy noise, in interval widths"),
    blend: Optional[float] = typer.Option(None, "--blend", help="id_weak source-identity weight"),
    repeats: Optional[int] = typer.Option(None, "--repeats", help="Augmentation repeats per triple"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Render processes"),
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Construct Triplet ID Groups (A1, B~, A2) with a proxy swapper.
    """
    tf = _transform(transform)
    out = out or core.default_path("eval_triplets" if eval_split else "triplets")
    run_cfg = _resolve(
        "build-triplets",
        config,
        seed,
        {"out": out, "data": data},
        proxy={"name": proxy, "sigma": sigma, "blend": blend, "augment_repeats": repeats},
        train={"transform": transform},
    )
    core.build_triplets(run_cfg, count, out, tf, data, eval_split, workers)


@app.command("train")
def train_cmd(
    manifest: Path = typer.Option(..., "--manifest", help="Triplet manifest directory"),
    out: Optional[Path] = typer.Option(None, "--out", help="Checkpoint path"),
    oracles: Optional[Path] = OraclesOpt,
    steps: Optional[int] = typer.Option(None, "--train-steps", help="Total optimisation steps"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Continue from this checkpoint"),
    no_facenet: bool = typer.Option(False, "--no-facenet"),
    no_id_adapter: bool = typer.Option(False, "--no-id-adapter"),
    no_id_loss: bool = typer.Option(False, "--no-id-loss"),
    no_rec_loss: bool = typer.Option(False, "--no-rec-loss"),
    mlflow: bool = typer.Option(False, "--mlflow", help="Log metrics to MLflow"),
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Train the swap model on a triplet manifest.
    """
    out = out or core.default_path("model.safetensors")
    run_cfg = _resolve(
        "train",
        config,
        seed,
        {"manifest": manifest, "out": out, "oracles": oracles, "resume": resume},
        train={
            "steps": steps,
            "batch_size": batch_size,
            "lr": lr,
            "no_facenet": _flag(no_facenet),
            "no_id_adapter": _flag(no_id_adapter),
            "no_id_loss": _flag(no_id_loss),
            "no_rec_loss": _flag(no_rec_loss),
            "mlflow": _flag(mlflow),
        },
    )
    core.train(run_cfg, manifest, oracles, out, resume)


@app.command("finetune")
def finetune_cmd(
    ckpt: Path = typer.Option(..., "--ckpt", help="Checkpoint to continue from"),
    manifest: Path = typer.Option(..., "--manifest", help="Transformed triplet manifest"),
    out: Path = typer.Option(..., "--out", help="Finetuned checkpoint path"),
    oracles: Optional[Path] = OraclesOpt,
    steps: Optional[int] = typer.Option(None, "--train-steps", help="Additional optimisation steps"),
    transform: Optional[str] = typer.Option(None, "--transform", help="Expected manifest transform"),
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Control finetune (glasses / face shape) on transformed triplets.
    """
    run_cfg = _resolve(
        "finetune",
        config,
        seed,
        {"ckpt": ckpt, "manifest": manifest, "out": out, "oracles": oracles},
        train={"steps": steps, "transform": transform},
    )
    core.finetune(run_cfg, ckpt, manifest, oracles, out)


@app.command("swap")
def swap_cmd(
    ckpt: Path = typer.Option(..., "--ckpt", help="Trained checkpoint"),
    source: Path = typer.Option(..., "--source", help="Source identity image (PNG)"),
    target: Path = typer.Option(..., "--target", help="Target image (PNG)"),
    out: Path = typer.Option(..., "--out", help="Output PNG"),
    steps: int = typer.Option(1, "--steps", help="Sampler steps: 1 or 4"),
    oracles: Optional[Path] = OraclesOpt,
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Put the source identity onto the target image.
    """
    k = _steps(steps) or 1
    run_cfg = _resolve(
        "swap", config, seed, {"ckpt": ckpt, "source": source, "target": target, "out": out}, eval={"k_steps": k}
    )
    core.swap_images(run_cfg, ckpt, source, target, oracles, k, out)


@app.command("eval")
def eval_cmd(
    ckpt: Path = typer.Option(..., "--ckpt", help="Trained checkpoint"),
    manifest: Path = typer.Option(..., "--manifest", help="Eval triplet manifest (build-triplets --eval)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report directory"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Sampler steps: 1 or 4"),
    n_pairs: Optional[int] = typer.Option(None, "--n-pairs"),
    no_plots: bool = typer.Option(False, "--no-plots"),
    oracles: Optional[Path] = OraclesOpt,
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Score a checkpoint: ID similarity, retrieval, pose/expression, Fréchet.
    """
    out = out or core.default_path("eval")
    run_cfg = _resolve(
        "eval",
        config,
        seed,
        {"ckpt": ckpt, "manifest": manifest, "out": out, "oracles": oracles},
        eval={"k_steps": _steps(steps), "n_pairs": n_pairs, "plots": False if no_plots else None},
    )
    core.evaluate(run_cfg, ckpt, manifest, oracles, out)


@app.command("ablate")
def ablate_cmd(
    suite: str = typer.Option(..., "--suite", help="architecture | losses | proxy | steps"),
    eval_manifest: Path = typer.Option(..., "--eval-manifest", help="Eval triplet manifest"),
    out: Optional[Path] = typer.Option(None, "--out", help="Comparison directory"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Shared training manifest"),
    data: Optional[Path] = typer.Option(None, "--data", help="Dataset for freshly built manifests"),
    count: int = typer.Option(1_000, "--count", help="Triplets per freshly built manifest"),
    oracles: Optional[Path] = OraclesOpt,
    seed: Optional[int] = SeedOpt,
    config: Optional[Path] = ConfigOpt,
) -> None:
    """
    Train and evaluate every variant of an ablation suite side by side.
    """
    out = out or core.default_path("ablation", suite)
    run_cfg = _resolve(
        "ablate",
        config,
        seed,
        {"eval_manifest": eval_manifest, "out": out, "manifest": manifest, "data": data, "oracles": oracles},
    )
    core.ablate(run_cfg, suite, oracles, eval_manifest, out, manifest, data, count)


def _error_record(exc: BaseException) -> dict[str, Any]:
    if isinstance(exc, TripletSwapError):
        return exc.to_record()
    if isinstance(exc, FileNotFoundError):
        path = exc.filename or str(exc)
        return {"error": "file_not_found", "message": str(exc), "context": {"path": str(path)}}
    return {"error": type(exc).__name__, "message": str(exc), "context": {}}


def _run(command: Any, args: list[str]) -> int:
    # standalone mode lets typer's own click report usage errors (exit 2) and
    # aborts (exit 1); only our exceptions propagate out of it
    try:
        command.main(args=args, prog_name="tripletswap", standalone_mode=True)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI; returns the process exit status."""
    args = list(sys.argv[1:] if argv is None else argv)
    command = typer.main.get_command(app)
    if not args:
        _run(command, ["--help"])
        return 2
    try:
        return _run(command, args)
    except (TripletSwapError, FileNotFoundError, OSError, ValueError, RuntimeError) as exc:
        record = _error_record(exc)
        logger.error("Command failed", error=record["error"])
        print(json.dumps(record, default=str), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
