# src/tripletswap/services/oracle_trainer.py
"""
Pretraining of the frozen oracle encoders.

Validation RMSE is reported per factor as a fraction of that factor's
interval width. Lighting direction uses circular error and is scored only
where the lighting is visible; glasses darkness only where glasses are worn.
"""
from __future__ import annotations

from typing import Any, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.model_selection import train_test_split

from tripletswap.adapters.config import config
from tripletswap.adapters.logging_utils import get_logger
from tripletswap.analysis.render import render
from tripletswap.domain.errors import ConfigValidationError, OracleTrainingError
from tripletswap.domain.factors import (
    ATTRIBUTE_NAMES,
    GLASSES_DARKNESS,
    GLASSES_FLAG,
    IDENTITY_NAMES,
    LIGHTING_DIRECTION,
    LIGHTING_STRENGTH,
    TWO_PI,
    FactorVector,
    attribute_widths,
    make_identity_pair,
    normalize_identity,
)
from tripletswap.domain.metrics import cosine_similarities, decision_threshold
from tripletswap.domain.run_config import OracleTrainConfig
from tripletswap.domain.seeds import derive_seed, torch_generator
from tripletswap.models.oracles import (
    OracleEncoders,
    attributes_to_targets,
    build_oracles,
    circular_error,
)

logger = get_logger(__name__)

# column positions inside the 10-wide attribute target
_DARKNESS_COL = GLASSES_DARKNESS - 1
_COS_COL, _SIN_COL = 8, 9


def _as_float(images: torch.Tensor) -> torch.Tensor:
    if images.dtype == torch.uint8:
        return images.float() / 255.0
    return images.float()


def _attribute_loss_mask(attributes: np.ndarray, min_strength: float) -> np.ndarray:
    mask = np.ones((attributes.shape[0], 10), dtype=np.float32)
    mask[:, _DARKNESS_COL] = attributes[:, GLASSES_FLAG]
    visible = (attributes[:, LIGHTING_STRENGTH] >= min_strength).astype(np.float32)
    mask[:, _COS_COL] = visible
    mask[:, _SIN_COL] = visible
    return mask


def validation_rmse(
    true_identity: np.ndarray,
    est_identity: np.ndarray,
    true_attributes: np.ndarray,
    est_attributes: np.ndarray,
    min_strength: float = 0.1,
) -> dict[str, float]:
    """Per-factor RMSE in fractions of the interval width."""
    out: dict[str, float] = {}
    id_err = (normalize_identity(est_identity) - normalize_identity(true_identity)) / 2.0
    for j, name in enumerate(IDENTITY_NAMES):
        out[name] = float(np.sqrt(np.mean(id_err[:, j] ** 2)))

    widths = attribute_widths()
    for j, name in enumerate(ATTRIBUTE_NAMES):
        if j == LIGHTING_DIRECTION:
            keep = true_attributes[:, LIGHTING_STRENGTH] >= min_strength
            err = circular_error(est_attributes[keep, j], true_attributes[keep, j]) / TWO_PI
        elif j == GLASSES_DARKNESS:
            keep = true_attributes[:, GLASSES_FLAG] == 1.0
            err = (est_attributes[keep, j] - true_attributes[keep, j]) / widths[j]
        else:
            err = (est_attributes[:, j] - true_attributes[:, j]) / widths[j]
        out[name] = float(np.sqrt(np.mean(err**2))) if err.size else 0.0
    return out


@torch.no_grad()
def _estimate(encoders: OracleEncoders, images: torch.Tensor, batch_size: int, device: str) -> tuple[np.ndarray, np.ndarray]:
    ids, attrs = [], []
    for start in range(0, images.shape[0], batch_size):
        batch = _as_float(images[start : start + batch_size]).to(device)
        ids.append(encoders.estimate_identity(batch))
        attrs.append(encoders.estimate_attributes(batch))
    return np.concatenate(ids), np.concatenate(attrs)


@torch.no_grad()
def separation_stats(
    encoders: OracleEncoders,
    n_pairs: int = 1_000,
    seed: int = 0,
    device: str = "cpu",
    batch_size: int = 256,
) -> dict[str, float]:
    """
    Same/different identity cosine distributions over fresh identity pairs,
    with the balanced-error decision threshold.
    """
    firsts, seconds = [], []
    for i in range(n_pairs):
        a, b = make_identity_pair(derive_seed(seed, "separation", i))
        firsts.append(render(a))
        seconds.append(render(b))
    emb_a = np.concatenate(
        [encoders.embed(torch.stack(firsts[s : s + batch_size]).to(device)).cpu().double().numpy() for s in range(0, n_pairs, batch_size)]
    )
    emb_b = np.concatenate(
        [encoders.embed(torch.stack(seconds[s : s + batch_size]).to(device)).cpu().double().numpy() for s in range(0, n_pairs, batch_size)]
    )
    same = cosine_similarities(emb_a, emb_b)
    different = cosine_similarities(emb_a, np.roll(emb_b, 1, axis=0))
    threshold, overlap = decision_threshold(same, different)
    return {
        "same_identity_mean": float(same.mean()),
        "different_identity_mean": float(different.mean()),
        "decision_threshold": threshold,
        "separation_overlap": overlap,
    }


def train_oracle_encoders(
    images: torch.Tensor,
    factors: Sequence[FactorVector],
    cfg: OracleTrainConfig | None = None,
    *,
    separation_pairs: int = 1_000,
    mlflow_run: Any | None = None,
) -> OracleEncoders:
    cfg = cfg or OracleTrainConfig()
    n = len(factors)
    if n < cfg.min_samples:
        raise ConfigValidationError(
            f"oracle pretraining needs >= {cfg.min_samples} labelled samples", n=n, required=cfg.min_samples
        )
    if images.shape[0] != n:
        raise ConfigValidationError("images and factors differ in length", images=images.shape[0], factors=n)

    device = config.DEVICE
    resolution = int(images.shape[-1])
    identity = np.stack([f.identity_array() for f in factors])
    attributes = np.stack([f.attribute_array() for f in factors])

    id_targets = torch.from_numpy(normalize_identity(identity).astype(np.float32))
    attr_targets = torch.from_numpy(attributes_to_targets(attributes).astype(np.float32))
    attr_mask = torch.from_numpy(_attribute_loss_mask(attributes, cfg.min_lighting_strength))

    train_idx, val_idx = train_test_split(
        np.arange(n), test_size=cfg.val_fraction, random_state=cfg.seed % (2**32)
    )
    train_idx = torch.from_numpy(np.sort(train_idx))
    val_idx_np = np.sort(val_idx)

    encoders = build_oracles(cfg.width, resolution, seed=derive_seed(cfg.seed, "oracle_init")).to(device)
    params = list(encoders.identity.parameters()) + list(encoders.attributes.parameters())
    optim = torch.optim.Adam(params, lr=cfg.lr)
    gen = torch_generator(derive_seed(cfg.seed, "oracle_shuffle"))

    rmse: dict[str, float] = {}
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        encoders.identity.train()
        encoders.attributes.train()
        order = train_idx[torch.randperm(train_idx.numel(), generator=gen)]
        running = 0.0
        for start in range(0, order.numel(), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = _as_float(images[idx]).to(device)
            id_pred = encoders.identity(x)
            attr_pred = encoders.attributes(x)
            mask = attr_mask[idx].to(device)
            loss = F.mse_loss(id_pred, id_targets[idx].to(device)) + (
                ((attr_pred - attr_targets[idx].to(device)) ** 2) * mask
            ).sum() / mask.sum().clamp_min(1.0)
            optim.zero_grad(set_to_none=True)
            loss.backward()
            optim.step()
            running += float(loss.detach()) * idx.numel()

        encoders.identity.eval()
        encoders.attributes.eval()
        est_id, est_attr = _estimate(encoders, images[torch.from_numpy(val_idx_np)], cfg.batch_size, device)
        rmse = validation_rmse(
            identity[val_idx_np], est_id, attributes[val_idx_np], est_attr, cfg.min_lighting_strength
        )
        worst = max(rmse, key=rmse.__getitem__)
        logger.info(
            "oracle_epoch_done",
            extra={
                "context": {
                    "epoch": epoch,
                    "train_loss": running / max(int(order.numel()), 1),
                    "worst_factor": worst,
                    "worst_rmse": rmse[worst],
                }
            },
        )
        if rmse[worst] <= cfg.rmse_target:
            break
    else:
        worst = max(rmse, key=rmse.__getitem__)
        raise OracleTrainingError(
            f"oracle RMSE target {cfg.rmse_target} not reached after {cfg.max_epochs} epochs; worst factor {worst}",
            worst_factor=worst,
            worst_rmse=rmse[worst],
            val_rmse=rmse,
        )

    encoders.freeze()
    stats = separation_stats(encoders, separation_pairs, derive_seed(cfg.seed, "separation"), device)
    md = encoders.metadata
    md.val_rmse = rmse
    md.n_train = int(train_idx.numel())
    md.epochs = epoch
    md.decision_threshold = stats["decision_threshold"]
    md.separation_overlap = stats["separation_overlap"]
    md.same_identity_mean = stats["same_identity_mean"]
    md.different_identity_mean = stats["different_identity_mean"]
    logger.info("oracle_trained", extra={"context": {"epochs": epoch, **stats, "oracle_hash": encoders.parameter_hash()}})

    if mlflow_run:
        import mlflow

        for name, value in rmse.items():
            mlflow.log_metric(f"oracle_rmse_{name}", float(value))
        mlflow.log_metric("oracle_separation_overlap", stats["separation_overlap"])

    return encoders
