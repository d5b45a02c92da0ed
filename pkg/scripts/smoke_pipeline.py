# scripts/smoke_pipeline.py
"""
End-to-end smoke run of the CLI with tiny counts.

Run:
    python scripts/smoke_pipeline.py [work_dir]

Steps, all through `entrypoints.cli.pipeline.main` with configs/smoke.json:
  1) gen-data -> train-oracles
  2) build-triplets (train, eval, glasses)
  3) train -> finetune -> swap -> eval (k=1 and k=4)
Prints the eval table at the end. Exits non-zero on the first failing step.
"""
from __future__ import annotations

import sys
import time
from pathlib import Path

from loguru import logger

ROOT = Path(__file__).resolve().parents[1]
sys.path[:0] = [str(ROOT / "src"), str(ROOT)]

from entrypoints.cli.pipeline import main  # noqa: E402

CONFIG = ROOT / "configs" / "smoke.json"


def run(*args: str) -> None:
    argv = [*args, "--config", str(CONFIG)]
    t0 = time.perf_counter()
    code = main(argv)
    if code != 0:
        logger.error("Step failed", argv=" ".join(argv), code=code)
        raise SystemExit(code)
    logger.info("Step done", command=args[0], seconds=round(time.perf_counter() - t0, 1))


def smoke(work: Path) -> None:
    data = work / "data"
    oracles = work / "oracles.safetensors"
    triplets = work / "triplets"
    eval_triplets = work / "eval_triplets"
    glasses = work / "glasses_triplets"
    model = work / "model.safetensors"

    run("gen-data", "--count", "240", "--out", str(data), "--workers", "0")
    run("train-oracles", "--data", str(data), "--out", str(oracles))
    run("build-triplets", "--count", "32", "--out", str(triplets), "--data", str(data), "--workers", "0")
    run("build-triplets", "--count", "24", "--out", str(eval_triplets), "--eval", "--workers", "0")
    run("build-triplets", "--count", "16", "--out", str(glasses), "--transform", "glasses", "--workers", "0")

    run("train", "--manifest", str(triplets), "--oracles", str(oracles), "--out", str(model))
    run(
        "finetune",
        "--ckpt", str(model),
        "--manifest", str(glasses),
        "--oracles", str(oracles),
        "--out", str(work / "model_glasses.safetensors"),
        "--train-steps", "5",
    )

    images = sorted((eval_triplets / "images").glob("*.png"))
    run(
        "swap",
        "--ckpt", str(model),
        "--source", str(images[0]),
        "--target", str(images[-1]),
        "--oracles", str(oracles),
        "--out", str(work / "swap.png"),
    )
    for k in ("1", "4"):
        run(
            "eval",
            "--ckpt", str(model),
            "--manifest", str(eval_triplets),
            "--oracles", str(oracles),
            "--out", str(work / f"eval_k{k}"),
            "--steps", k,
        )

    for k in ("1", "4"):
        print(f"=== eval k={k} ===")
        print((work / f"eval_k{k}" / "report.txt").read_text())


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "artifacts" / "smoke"
    target.mkdir(parents=True, exist_ok=True)
    smoke(target)
