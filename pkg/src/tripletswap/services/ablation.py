# src/tripletswap/services/ablation.py
"""
Ablation suites. Each variant trains (or reuses) a model and is scored on the
same eval manifest; a failing variant is recorded and the suite moves on.

    architecture   full, no_facenet, no_id_adapter, no_id_loss, no_rec_loss
    losses         full, no_id_loss, no_rec_loss
    proxy          oracle, attr_noisy, id_weak   (one training manifest each)
    steps          k=1, k=4 on one trained model
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Sequence

from tripletswap.adapters.logging_utils import get_logger
from tripletswap.domain.errors import ConfigValidationError, TripletSwapError
from tripletswap.domain.metrics import MetricReport
from tripletswap.domain.run_config import ProxyName, RunConfig
from tripletswap.domain.triplets import DatasetManifest
from tripletswap.models.oracles import OracleEncoders
from tripletswap.services.eval import evaluate_run, write_report
from tripletswap.services.trainer import train_loop
from tripletswap.services.triplet_builder import build_manifest

logger = get_logger(__name__)

SuiteName = Literal["architecture", "losses", "proxy", "steps"]


@dataclass(frozen=True)
class Variant:
    name: str
    train_overrides: dict[str, Any] = field(default_factory=dict)
    proxy: ProxyName | None = None
    k_steps: int | None = None


SUITES: dict[str, tuple[Variant, ...]] = {
    "architecture": (
        Variant("full"),
        Variant("no_facenet", {"no_facenet": True}),
        Variant("no_id_adapter", {"no_id_adapter": True}),
        Variant("no_id_loss", {"no_id_loss": True}),
        Variant("no_rec_loss", {"no_rec_loss": True}),
    ),
    "losses": (
        Variant("full"),
        Variant("no_id_loss", {"no_id_loss": True}),
        Variant("no_rec_loss", {"no_rec_loss": True}),
    ),
    "proxy": (
        Variant("oracle", proxy="oracle"),
        Variant("attr_noisy", proxy="attr_noisy"),
        Variant("id_weak", proxy="id_weak"),
    ),
    "steps": (
        Variant("1-step", k_steps=1),
        Variant("4-step", k_steps=4),
    ),
}


@dataclass
class AblationResult:
    suite: str
    reports: list[MetricReport] = field(default_factory=list)
    failures: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"suite": self.suite, "rows": [r.to_dict() for r in self.reports], "failures": self.failures}


def suite_variants(suite: str) -> tuple[Variant, ...]:
    if suite not in SUITES:
        raise ConfigValidationError(f"unknown ablation suite {suite!r}", suite=suite, known=sorted(SUITES))
    return SUITES[suite]


def _failure(variant: Variant, exc: Exception) -> dict[str, Any]:
    record = exc.to_record() if isinstance(exc, TripletSwapError) else {"error": type(exc).__name__, "message": str(exc)}
    return {"variant": variant.name, **record}


def run_ablation(
    suite: str,
    run_cfg: RunConfig,
    oracles: OracleEncoders,
    eval_manifest: DatasetManifest,
    eval_root: str | Path,
    out_dir: str | Path,
    *,
    train_manifest: DatasetManifest | None = None,
    train_root: str | Path | None = None,
    train_count: int = 1_000,
    pair_seeds: Sequence[int] | None = None,
) -> AblationResult:
    """Run every variant of `suite`; the comparison table lands in `out_dir`."""
    variants = suite_variants(suite)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = AblationResult(suite)

    shared: tuple[DatasetManifest, Path] | None = None
    if train_manifest is not None:
        shared = (train_manifest, Path(train_root or "."))

    def manifest_for(proxy: ProxyName | None) -> tuple[DatasetManifest, Path]:
        nonlocal shared
        if proxy is None and shared is not None:
            return shared
        proxy_cfg = run_cfg.proxy if proxy is None else run_cfg.proxy.model_copy(update={"name": proxy})
        root = out / f"triplets_{proxy_cfg.name}"
        manifest = build_manifest(
            train_count, proxy_cfg, run_cfg.train.transform, run_cfg.seed, root, pair_seeds=pair_seeds
        )
        if proxy is None:
            shared = (manifest, root)
        return manifest, root

    trained: str | None = None
    for variant in variants:
        try:
            ckpt = out / variant.name / "model.safetensors"
            if variant.k_steps is not None and trained is not None:
                ckpt = Path(trained)
            else:
                manifest, root = manifest_for(variant.proxy)
                train_cfg = run_cfg.train.model_copy(update=variant.train_overrides)
                if variant.proxy is not None:
                    train_cfg = train_cfg.model_copy(update={"proxy": variant.proxy})
                train_loop(manifest, root, oracles, run_cfg.model, train_cfg, ckpt)
                if variant.k_steps is not None:
                    trained = str(ckpt)
            eval_cfg = run_cfg.eval.model_copy(update={"k_steps": variant.k_steps or run_cfg.eval.k_steps, "plots": False})
            report = evaluate_run(ckpt, eval_manifest, eval_root, oracles, eval_cfg, label=variant.name)
            result.reports.append(report)
            logger.info("ablation_variant_done", extra={"context": {"suite": suite, "variant": variant.name}})
        except Exception as exc:
            result.failures.append(_failure(variant, exc))
            logger.warning(
                "ablation_variant_failed",
                extra={"context": {"suite": suite, "variant": variant.name}},
                exc_info=exc,
            )

    write_report(result.reports, out, extra={"suite": suite, "failures": result.failures})
    run_cfg.write(out)
    return result
