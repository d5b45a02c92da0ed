# src/tripletswap/services/eval.py
"""
Evaluation protocol: identity similarity, top-k identity retrieval, pose and
expression error, and a Fréchet distance over the frozen oracle features.

An eval manifest is an ordinary oracle-proxy triplet manifest: A1 is the
source, B~ the target, and A2 the ideal swap. Every report carries two
calibration rows next to the model row:

    ground_truth   A2 scored as if it were the swap   (upper bound)
    raw_targets    B~ scored as if it were the swap   (lower bound)
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import torch

from tripletswap.adapters.config import config
from tripletswap.adapters.image_io import load_png, read_json, write_json
from tripletswap.adapters.logging_utils import get_logger
from tripletswap.analysis.frechet import frechet_distance
from tripletswap.analysis.landmarks import coefficient_geometry
from tripletswap.analysis.render import region_masks
from tripletswap.domain.coefficients import CoefficientSet
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.factors import ATTRIBUTE_NAMES, LIGHTING_DIRECTION, MOUTH_CURVATURE, PITCH, YAW, attribute_widths
from tripletswap.domain.metrics import (
    METRIC_COLUMNS,
    Gallery,
    MetricReport,
    cosine_similarities,
    mean_cosine,
    pose_expression_l2,
    retrieval_accuracy,
)
from tripletswap.domain.run_config import EvalConfig
from tripletswap.domain.triplets import DatasetManifest
from tripletswap.models.oracles import OracleEncoders, circular_error
from tripletswap.services.swap import Swapper

logger = get_logger(__name__)

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
HIST_PNG = "id_similarity_hist.png"
ERRORS_PNG = "attribute_errors.png"

# frame pixels darker than this fraction of the skin median count as glasses
GLASSES_LUMINANCE_RATIO = 0.5
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_paired(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape[0] != b.shape[0]:
        raise ConfigValidationError("paired image sets differ in length", a=int(a.shape[0]), b=int(b.shape[0]))


@torch.no_grad()
def embed_images(images: torch.Tensor, oracles: OracleEncoders, batch_size: int = 256) -> np.ndarray:
    device = next(oracles.identity.parameters()).device
    out = [
        oracles.embed(images[s : s + batch_size].to(device)).cpu().double().numpy()
        for s in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(out)


@torch.no_grad()
def estimate_attribute_batch(images: torch.Tensor, oracles: OracleEncoders, batch_size: int = 256) -> np.ndarray:
    device = next(oracles.attributes.parameters()).device
    return np.concatenate(
        [oracles.estimate_attributes(images[s : s + batch_size].to(device)) for s in range(0, images.shape[0], batch_size)]
    )


@torch.no_grad()
def feature_batch(images: torch.Tensor, oracles: OracleEncoders, batch_size: int = 256) -> np.ndarray:
    device = next(oracles.identity.parameters()).device
    return np.concatenate(
        [oracles.features(images[s : s + batch_size].to(device)) for s in range(0, images.shape[0], batch_size)]
    )


def id_similarity(swapped: torch.Tensor, sources: torch.Tensor, encoder: OracleEncoders) -> float:
    _check_paired(swapped, sources)
    return mean_cosine(embed_images(swapped, encoder), embed_images(sources, encoder))


def build_gallery(sources: torch.Tensor, ids: Sequence[str], encoder: OracleEncoders) -> Gallery:
    return Gallery(ids=tuple(ids), embeddings=embed_images(sources, encoder))


def id_retrieval(
    swapped: torch.Tensor,
    true_ids: Sequence[str],
    gallery: Gallery,
    encoder: OracleEncoders,
    k: int,
) -> float:
    return retrieval_accuracy(embed_images(swapped, encoder), true_ids, gallery, k)


def pose_expression_error(swapped: torch.Tensor, targets: torch.Tensor, regressor: OracleEncoders) -> tuple[float, float]:
    _check_paired(swapped, targets)
    s = estimate_attribute_batch(swapped, regressor)
    t = estimate_attribute_batch(targets, regressor)
    return pose_expression_l2(s[:, [YAW, PITCH]], t[:, [YAW, PITCH]], s[:, MOUTH_CURVATURE], t[:, MOUTH_CURVATURE])


def frechet_feature_distance(set_a: torch.Tensor, set_b: torch.Tensor, feature_extractor: OracleEncoders) -> float:
    return frechet_distance(feature_batch(set_a, feature_extractor), feature_batch(set_b, feature_extractor))


def attribute_errors(swapped: torch.Tensor, targets: torch.Tensor, regressor: OracleEncoders) -> dict[str, float]:
    """Mean absolute attribute error per factor, as a fraction of the interval width."""
    s = estimate_attribute_batch(swapped, regressor)
    t = estimate_attribute_batch(targets, regressor)
    widths = attribute_widths()
    out = {}
    for j, name in enumerate(ATTRIBUTE_NAMES):
        if j == LIGHTING_DIRECTION:
            err = circular_error(s[:, j], t[:, j]) / widths[j]
        else:
            err = np.abs(s[:, j] - t[:, j]) / widths[j]
        out[name] = float(np.mean(err))
    return out


def glasses_present(image: torch.Tensor, coefficients: CoefficientSet) -> bool:
    """Dark frame pixels where the geometry puts the glasses frame."""
    size = int(image.shape[-1])
    masks = region_masks(coefficient_geometry(coefficients), size)
    luma = np.tensordot(_LUMA, image.detach().cpu().double().numpy(), axes=1)
    skin = masks.face & ~masks.glasses & ~masks.eyes & ~masks.mouth
    if not masks.glasses_frame.any() or not skin.any():
        return False
    return bool(luma[masks.glasses_frame].mean() < GLASSES_LUMINANCE_RATIO * np.median(luma[skin]))


def score_images(
    label: str,
    swapped: torch.Tensor,
    sources: torch.Tensor,
    targets: torch.Tensor,
    real: torch.Tensor,
    gallery: Gallery,
    true_ids: Sequence[str],
    oracles: OracleEncoders,
    provenance: dict[str, Any] | None = None,
) -> MetricReport:
    _check_paired(swapped, sources)
    _check_paired(swapped, targets)
    emb = embed_images(swapped, oracles)
    pose, expr = pose_expression_error(swapped, targets, oracles)
    return MetricReport(
        label=label,
        n=int(swapped.shape[0]),
        id_similarity=mean_cosine(emb, embed_images(sources, oracles)),
        retrieval_top1=retrieval_accuracy(emb, true_ids, gallery, 1),
        retrieval_top5=retrieval_accuracy(emb, true_ids, gallery, 5),
        pose_l2=pose,
        expression_l2=expr,
        frechet=frechet_feature_distance(swapped, real, oracles),
        provenance=dict(provenance or {}),
    )


# ----------------------------
# Reports
# ----------------------------

def report_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    rows = [{"label": r.label, "n": r.n, **{c: getattr(r, c) for c in METRIC_COLUMNS}} for r in reports]
    return pd.DataFrame(rows, columns=["label", "n", *METRIC_COLUMNS])


def write_report(reports: Sequence[MetricReport], out_dir: str | Path, extra: dict[str, Any] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json({"rows": [r.to_dict() for r in reports], **(extra or {})}, out / REPORT_JSON)
    table = report_frame(reports).to_string(index=False, float_format=lambda v: f"{v:.4f}")
    (out / REPORT_TXT).write_text(table + "\n", encoding="utf-8")
    return out / REPORT_JSON


def read_report(path: str | Path) -> list[MetricReport]:
    p = Path(path)
    data = read_json(p / REPORT_JSON if p.is_dir() else p)
    return [MetricReport.from_dict(row) for row in data["rows"]]


def write_plots(
    similarities: dict[str, np.ndarray],
    errors: dict[str, float],
    out_dir: str | Path,
) -> list[Path]:
    """Best effort: a failed plot is logged, not raised."""
    out = Path(out_dir)
    written: list[Path] = []
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for label, values in similarities.items():
            ax.hist(values, bins=40, range=(-1.0, 1.0), alpha=0.5, label=label)
        ax.set_xlabel("cosine(identity(swap), identity(source))")
        ax.set_ylabel("pairs")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / HIST_PNG, dpi=120)
        plt.close(fig)
        written.append(out / HIST_PNG)

        fig, ax = plt.subplots(figsize=(7, 4))
        names = list(errors)
        ax.bar(range(len(names)), [errors[n] for n in names])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylabel("mean |error| / interval width")
        fig.tight_layout()
        fig.savefig(out / ERRORS_PNG, dpi=120)
        plt.close(fig)
        written.append(out / ERRORS_PNG)
    except Exception as exc:
        logger.warning("plot_failed", extra={"context": {"out": str(out), "error": str(exc)}})
    return written


# ----------------------------
# Full run
# ----------------------------

def load_eval_images(manifest: DatasetManifest, root: str | Path, n_pairs: int | None = None) -> dict[str, torch.Tensor]:
    records = list(manifest.records)[: n_pairs or None]
    if not records:
        raise ConfigValidationError("eval manifest has no records")
    base = Path(root)
    return {
        role: torch.stack([load_png(base / r.paths[role]) for r in records])
        for role in ("source", "pseudo_target", "ground_truth")
    }


def run_swaps(swapper: Swapper, sources: torch.Tensor, targets: torch.Tensor, k: int, seed: int, batch_size: int) -> torch.Tensor:
    out = []
    for s in range(0, sources.shape[0], batch_size):
        out.append(swapper.swap_batch(sources[s : s + batch_size], targets[s : s + batch_size], k, seed, offset=s).cpu())
    return torch.cat(out)


def evaluate_images(
    swapped: torch.Tensor,
    images: dict[str, torch.Tensor],
    oracles: OracleEncoders,
    label: str = "model",
    provenance: dict[str, Any] | None = None,
    out_dir: str | Path | None = None,
    plots: bool = True,
) -> list[MetricReport]:
    """Model row plus the two calibration rows, optionally written to `out_dir`."""
    sources, targets, real = images["source"], images["pseudo_target"], images["ground_truth"]
    ids = [f"src{i:06d}" for i in range(sources.shape[0])]
    gallery = build_gallery(sources, ids, oracles)
    candidates = {label: swapped, "ground_truth": real, "raw_targets": targets}
    reports = [
        score_images(name, imgs, sources, targets, real, gallery, ids, oracles, provenance)
        for name, imgs in candidates.items()
    ]
    if out_dir is not None:
        write_report(reports, out_dir)
        if plots:
            src_emb = gallery.embeddings
            sims = {name: cosine_similarities(embed_images(imgs, oracles), src_emb) for name, imgs in candidates.items()}
            write_plots(sims, attribute_errors(swapped, targets, oracles), out_dir)
    return reports


def evaluate_run(
    checkpoint: str | Path | Swapper,
    eval_manifest: DatasetManifest,
    manifest_root: str | Path,
    oracles: OracleEncoders,
    cfg: EvalConfig | None = None,
    out_dir: str | Path | None = None,
    label: str = "model",
) -> MetricReport:
    cfg = cfg or EvalConfig()
    swapper = checkpoint if isinstance(checkpoint, Swapper) else Swapper.from_checkpoint(checkpoint, oracles)
    images = load_eval_images(eval_manifest, manifest_root, cfg.n_pairs)
    swapped = run_swaps(swapper, images["source"], images["pseudo_target"], cfg.k_steps, cfg.seed, cfg.batch_size)
    provenance = {
        "checkpoint": str(checkpoint) if not isinstance(checkpoint, Swapper) else "in-memory",
        "k_steps": cfg.k_steps,
        "seed": cfg.seed,
        "proxy": eval_manifest.proxy_name,
        "device": config.DEVICE,
    }
    reports = evaluate_images(swapped, images, oracles, label, provenance, out_dir, cfg.plots)
    model_row = reports[0]
    logger.info(
        "evaluation_done",
        extra={"context": {"label": label, **{c: getattr(model_row, c) for c in METRIC_COLUMNS}}},
    )
    return model_row
