# src/tripletswap/services/trainer.py
"""
Triplet ID Group training.

Per sample: z0 = E(A2), z_t = add_noise(z0, eps, T-1), condition on
(E(B~), landmarks of B~, E(A1), identity embedding of A1), then

    total = lambda_dm * L_dm + lambda_id * L_id(D(x0_hat), A1) + lambda_rec * L_rec(D(x0_hat), A2)

The oracle encoders stay frozen; everything inside SwapModel trains.
Batches, noise and the reconstruction mix are pure functions of
(seed, step), so a resumed run replays an uninterrupted one.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Sequence

import torch
from torch.utils.data import DataLoader, Dataset

from tripletswap.adapters.checkpoint_io import CheckpointBundle, load_checkpoint, save_checkpoint
from tripletswap.adapters.config import config
from tripletswap.adapters.image_io import iter_jsonl, load_png
from tripletswap.adapters.logging_utils import get_logger
from tripletswap.analysis.codec import LatentCodec
from tripletswap.analysis.diffusion import NoiseSchedule, add_noise, diffusion_loss, id_loss, make_schedule, rec_loss
from tripletswap.analysis.landmarks import render_landmarks
from tripletswap.domain.coefficients import extract_coefficients, recombine
from tripletswap.domain.errors import CheckpointError, ConfigValidationError, NumericError, TrainingAbortedError
from tripletswap.domain.losses import LossBreakdown, total_loss
from tripletswap.domain.run_config import ModelConfig, TrainConfig, TrainingLandmarks
from tripletswap.domain.seeds import derive_seed, numpy_rng, torch_generator
from tripletswap.domain.triplets import DatasetManifest, TripletRecord
from tripletswap.models.oracles import OracleEncoders
from tripletswap.models.swapnet import ConditionBundle, SwapModel, init_model

logger = get_logger(__name__)

OPTIM_KEYS = ("exp_avg", "exp_avg_sq", "step")
FROZEN_COMPONENTS = ("oracle_identity_encoder", "oracle_attribute_regressor", "landmark_geometry")
TRAINABLE_COMPONENTS = ("swapnet", "facenet", "id_adapter", "pose_guider", "context_tokens")


# ----------------------------
# Batches
# ----------------------------

@dataclass
class TripletBatch:
    source: torch.Tensor          # A1 [B,3,H,W]
    pseudo_target: torch.Tensor   # B~
    ground_truth: torch.Tensor    # A2
    landmarks: torch.Tensor       # landmark image fed to the pose guider
    id_embedding: torch.Tensor    # oracle embedding of A1
    ground_truth_landmarks: torch.Tensor | None = None

    @property
    def size(self) -> int:
        return int(self.source.shape[0])

    def to(self, device: str | torch.device) -> TripletBatch:
        gtl = self.ground_truth_landmarks
        return TripletBatch(
            source=self.source.to(device),
            pseudo_target=self.pseudo_target.to(device),
            ground_truth=self.ground_truth.to(device),
            landmarks=self.landmarks.to(device),
            id_embedding=self.id_embedding.to(device),
            ground_truth_landmarks=None if gtl is None else gtl.to(device),
        )


def training_landmarks(record: TripletRecord, mode: TrainingLandmarks = "pseudo_target") -> torch.Tensor:
    """Landmark image for a training triplet, from the recorded factors."""
    if mode == "pseudo_target":
        coeffs = extract_coefficients(record.pseudo_target)
    else:
        coeffs = recombine(extract_coefficients(record.source), extract_coefficients(record.pseudo_target))
    return render_landmarks(coeffs)


def collate(items: Sequence[dict[str, torch.Tensor]]) -> TripletBatch:
    stacked = {k: torch.stack([it[k] for it in items]) for k in items[0]}
    return TripletBatch(**stacked)


class TripletImageDataset(Dataset):
    """
    Images of a triplet manifest, loaded from the rendered PNGs.

    Source identity embeddings are computed once with the frozen oracle so
    worker processes never touch it.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        root: str | Path,
        oracles: OracleEncoders,
        landmark_mode: TrainingLandmarks = "pseudo_target",
        with_ground_truth_landmarks: bool = False,
        batch_size: int = 256,
    ) -> None:
        if not manifest.records:
            raise ConfigValidationError("manifest has no records")
        self.records = list(manifest.records)
        self.root = Path(root)
        self.landmark_mode = landmark_mode
        self.with_ground_truth_landmarks = with_ground_truth_landmarks
        self.id_embeddings = self._embed_sources(oracles, batch_size)

    def _image(self, record: TripletRecord, role: str) -> torch.Tensor:
        rel = record.paths.get(role)
        if rel is None:
            raise ConfigValidationError(f"record has no {role} image", pair_seed=record.pair_seed)
        return load_png(self.root / rel)

    @torch.no_grad()
    def _embed_sources(self, oracles: OracleEncoders, batch_size: int) -> torch.Tensor:
        device = next(oracles.identity.parameters()).device
        out = []
        for start in range(0, len(self.records), batch_size):
            imgs = torch.stack([self._image(r, "source") for r in self.records[start : start + batch_size]])
            out.append(oracles.embed(imgs.to(device)).float().cpu())
        return torch.cat(out)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> dict[str, torch.Tensor]:
        r = self.records[index]
        item = {
            "source": self._image(r, "source"),
            "pseudo_target": self._image(r, "pseudo_target"),
            "ground_truth": self._image(r, "ground_truth"),
            "landmarks": training_landmarks(r, self.landmark_mode),
            "id_embedding": self.id_embeddings[index],
        }
        if self.with_ground_truth_landmarks:
            item["ground_truth_landmarks"] = render_landmarks(extract_coefficients(r.ground_truth))
        return item

    def batch(self, indices: Sequence[int]) -> TripletBatch:
        return collate([self[i] for i in indices])


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    """Indices of the batch used at `step`: seeded per-epoch permutation, partial tail dropped."""
    per_epoch = max(1, n // batch_size)
    epoch, pos = divmod(step, per_epoch)
    order = numpy_rng(derive_seed(seed, "shuffle", epoch)).permutation(n)
    return [int(i) for i in order[pos * batch_size : (pos + 1) * batch_size]]


def step_loader(
    dataset: TripletImageDataset,
    batch_size: int,
    seed: int,
    start: int,
    stop: int,
    workers: int | None = None,
) -> Iterator[TripletBatch]:
    """Batches for steps [start, stop); prefetching keeps the sampler order."""
    sampler = [batch_indices(len(dataset), batch_size, seed, s) for s in range(start, stop)]
    n_workers = config.NUM_WORKERS if workers is None else workers
    loader = DataLoader(dataset, batch_sampler=sampler, num_workers=n_workers, collate_fn=collate)
    return iter(loader)


# ----------------------------
# Freezing
# ----------------------------

@dataclass(frozen=True)
class FreezePolicy:
    frozen: tuple[str, ...] = FROZEN_COMPONENTS
    trainable: tuple[str, ...] = TRAINABLE_COMPONENTS
    oracle_hash: str = ""

    @classmethod
    def capture(cls, oracles: OracleEncoders) -> FreezePolicy:
        oracles.freeze()
        return cls(oracle_hash=oracles.parameter_hash())

    def verify(self, oracles: OracleEncoders) -> None:
        trainable = [
            name
            for module in (oracles.identity, oracles.attributes)
            for name, p in module.named_parameters()
            if p.requires_grad
        ]
        if trainable:
            raise TrainingAbortedError("frozen oracle has trainable parameters", parameters=trainable)
        current = oracles.parameter_hash()
        if current != self.oracle_hash:
            raise TrainingAbortedError("frozen oracle parameters changed", expected=self.oracle_hash, actual=current)


# ----------------------------
# Checkpoint conversion
# ----------------------------

def optimizer_tensors(model: SwapModel, optimizer: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    """Adam moments keyed `<param name>/<exp_avg|exp_avg_sq|step>`."""
    out: dict[str, torch.Tensor] = {}
    for name, p in model.named_parameters():
        state = optimizer.state.get(p)
        if not state:
            continue
        for key in OPTIM_KEYS:
            out[f"{name}/{key}"] = torch.as_tensor(state[key]).detach().clone()
    return out


def restore_optimizer(model: SwapModel, optimizer: torch.optim.Optimizer, tensors: dict[str, torch.Tensor]) -> None:
    for name, p in model.named_parameters():
        if f"{name}/exp_avg" not in tensors:
            continue
        optimizer.state[p] = {key: tensors[f"{name}/{key}"].to(p.device).clone() for key in OPTIM_KEYS}
        # the step counter stays on cpu as torch.optim.Adam keeps it
        optimizer.state[p]["step"] = tensors[f"{name}/step"].clone()


def checkpoint_config(model_cfg: ModelConfig, train_cfg: TrainConfig, codec: LatentCodec) -> dict[str, Any]:
    return {
        "model": model_cfg.model_dump(mode="json"),
        "train": train_cfg.model_dump(mode="json"),
        "codec": codec.to_record(),
    }


def model_from_checkpoint(bundle: CheckpointBundle) -> tuple[SwapModel, LatentCodec]:
    try:
        model_cfg = ModelConfig(**bundle.config["model"])
        codec = LatentCodec(**bundle.config.get("codec", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError("checkpoint config snapshot is invalid", error=str(exc)) from exc
    schedule = NoiseSchedule(betas=bundle.schedule["betas"], alpha_bars=bundle.schedule["alpha_bars"])
    model = SwapModel(model_cfg, schedule)
    missing, unexpected = model.load_state_dict(bundle.model_state, strict=False)
    if missing or unexpected:
        raise CheckpointError("checkpoint does not match model structure", missing=missing, unexpected=unexpected)
    return model, codec


def load_swap_model(path: str | Path, device: str | None = None) -> tuple[SwapModel, LatentCodec, CheckpointBundle]:
    bundle = load_checkpoint(path)
    model, codec = model_from_checkpoint(bundle)
    model.to(device or config.DEVICE).eval()
    return model, codec, bundle


# ----------------------------
# Trainer
# ----------------------------

class TripletTrainer:
    def __init__(
        self,
        model: SwapModel,
        oracles: OracleEncoders,
        train_cfg: TrainConfig,
        codec: LatentCodec | None = None,
        step: int = 0,
        device: str | None = None,
    ) -> None:
        self.device = device or config.DEVICE
        self.model = model.to(self.device)
        self.oracles = oracles.to(self.device)
        self.policy = FreezePolicy.capture(oracles)
        self.cfg = train_cfg
        self.codec = codec or LatentCodec()
        self.weights = train_cfg.effective_weights()
        self.step = step
        self.last_grad_norm = 0.0
        self.trainable = [p for p in self.model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(
            self.trainable, lr=train_cfg.lr, betas=train_cfg.adam_betas, eps=train_cfg.adam_eps
        )

    @property
    def schedule(self) -> NoiseSchedule:
        return self.model.schedule

    def _mix_reconstruction(self, batch: TripletBatch) -> TripletBatch:
        """Replace a seeded fraction of pseudo targets by the ground truth."""
        if self.cfg.reconstruction_mix <= 0.0:
            return batch
        if batch.ground_truth_landmarks is None:
            raise ConfigValidationError("reconstruction mix needs ground-truth landmarks in the batch")
        rng = numpy_rng(derive_seed(self.cfg.seed, "reconstruction_mix", self.step))
        mask = torch.from_numpy(rng.random(batch.size) < self.cfg.reconstruction_mix).to(batch.source.device)
        sel = mask.view(-1, 1, 1, 1)
        return TripletBatch(
            source=batch.source,
            pseudo_target=torch.where(sel, batch.ground_truth, batch.pseudo_target),
            ground_truth=batch.ground_truth,
            landmarks=torch.where(sel, batch.ground_truth_landmarks, batch.landmarks),
            id_embedding=batch.id_embedding,
            ground_truth_landmarks=batch.ground_truth_landmarks,
        )

    def condition_for(self, batch: TripletBatch) -> ConditionBundle:
        return ConditionBundle(
            target_latent=self.codec.encode(batch.pseudo_target),
            landmark_image=batch.landmarks,
            source_latent=self.codec.encode(batch.source),
            id_embedding=batch.id_embedding,
        )

    def losses(self, batch: TripletBatch, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """(total, l_dm, l_id, l_rec) as differentiable tensors."""
        t = self.schedule.T - 1
        z0 = self.codec.encode(batch.ground_truth)
        z_t = add_noise(z0, noise, t, self.schedule)
        eps_hat, x0_hat = self.model(z_t, self.condition_for(batch), t)
        generated = self.codec.decode(x0_hat)
        w = self.weights
        l_dm = diffusion_loss(noise, eps_hat)
        # a switched-off identity term never touches the oracle embedder
        l_id = id_loss(generated, batch.source, self.oracles) if w.lambda_id else generated.new_zeros(())
        l_rec = rec_loss(generated, batch.ground_truth)
        total = w.lambda_dm * l_dm + w.lambda_id * l_id + w.lambda_rec * l_rec
        return total, l_dm, l_id, l_rec

    def step_noise(self, batch: TripletBatch) -> torch.Tensor:
        shape = (batch.size, *self.codec.latent_shape(int(batch.ground_truth.shape[-1])))
        gen = torch_generator(derive_seed(self.cfg.seed, "noise", self.step))
        return torch.randn(shape, generator=gen, dtype=batch.ground_truth.dtype).to(self.device)

    def _nonfinite_grads(self) -> dict[str, float]:
        return {
            name: float(p.grad.norm())
            for name, p in self.model.named_parameters()
            if p.grad is not None and not torch.isfinite(p.grad).all()
        }

    def train_step(self, batch: TripletBatch) -> LossBreakdown:
        self.model.train()
        batch = self._mix_reconstruction(batch.to(self.device))
        noise = self.step_noise(batch)
        parts: dict[str, float] = {}
        grad_norm = 0.0
        try:
            total, l_dm, l_id, l_rec = self.losses(batch, noise)
            parts = {"l_dm": l_dm.detach().item(), "l_id": l_id.detach().item(), "l_rec": l_rec.detach().item()}
            self.optimizer.zero_grad(set_to_none=True)
            total.backward()
            grads = [p.grad for p in self.trainable if p.grad is not None]
            grad_norm = torch.linalg.vector_norm(torch.stack([g.norm() for g in grads])).item() if grads else 0.0
            breakdown = total_loss(parts["l_dm"], parts["l_id"], parts["l_rec"], self.weights)
            if not math.isfinite(grad_norm):
                raise NumericError("non-finite gradient norm", grad_norm=grad_norm)
        except NumericError as exc:
            raise TrainingAbortedError(
                f"training step {self.step} failed: {exc}",
                step=self.step,
                losses=parts,
                grad_norm=grad_norm,
                bad_grads=self._nonfinite_grads(),
            ) from exc
        self.optimizer.step()
        self.step += 1
        self.last_grad_norm = grad_norm
        return breakdown

    def bundle(self, train_cfg: TrainConfig | None = None) -> CheckpointBundle:
        cfg = train_cfg or self.cfg
        return CheckpointBundle(
            model_state={k: v.detach().cpu() for k, v in self.model.state_dict().items()},
            schedule=self.schedule.to_tensors(),
            config=checkpoint_config(self.model.config, cfg, self.codec),
            oracle_hash=self.policy.oracle_hash,
            step=self.step,
            optimizer_state={k: v.cpu() for k, v in optimizer_tensors(self.model, self.optimizer).items()},
        )

    @classmethod
    def from_checkpoint(
        cls,
        bundle: CheckpointBundle,
        oracles: OracleEncoders,
        train_cfg: TrainConfig,
        device: str | None = None,
    ) -> TripletTrainer:
        if bundle.oracle_hash and bundle.oracle_hash != oracles.parameter_hash():
            raise CheckpointError(
                "checkpoint was trained against different oracle encoders",
                expected=bundle.oracle_hash,
                actual=oracles.parameter_hash(),
            )
        model, codec = model_from_checkpoint(bundle)
        trainer = cls(model, oracles, train_cfg, codec=codec, step=bundle.step, device=device)
        restore_optimizer(trainer.model, trainer.optimizer, bundle.optimizer_state)
        return trainer


def new_trainer(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    oracles: OracleEncoders,
    device: str | None = None,
) -> TripletTrainer:
    schedule = make_schedule(train_cfg.T, train_cfg.beta_min, train_cfg.beta_max)
    model = init_model(train_cfg.apply_to_model(model_cfg), schedule, seed=derive_seed(train_cfg.seed, "model_init"))
    return TripletTrainer(model, oracles, train_cfg, device=device)


# ----------------------------
# Loops
# ----------------------------

def _periodic_path(out: Path, step: int) -> Path:
    return out.with_name(f"{out.stem}.step{step:06d}{out.suffix}")


def _log_mlflow(row: dict[str, Any]) -> None:
    try:
        import mlflow

        for key in ("l_dm", "l_id", "l_rec", "total", "grad_norm"):
            mlflow.log_metric(key, float(row[key]), step=int(row["step"]))
    except Exception as exc:  # tracking is best-effort
        logger.warning("mlflow_log_failed", extra={"context": {"error": str(exc)}})


def run_steps(
    trainer: TripletTrainer,
    dataset: TripletImageDataset,
    stop: int,
    out: Path,
    log_path: Path | None = None,
    workers: int | None = None,
) -> CheckpointBundle:
    cfg = trainer.cfg
    start = trainer.step
    log_path = log_path or out.with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with log_path.open("a", encoding="utf-8") as log_file:
        for batch in step_loader(dataset, cfg.batch_size, cfg.seed, start, stop, workers):
            loss = trainer.train_step(batch)
            row = {
                "step": trainer.step,
                **loss.to_dict(),
                "grad_norm": trainer.last_grad_norm,
                "wallclock": time.perf_counter() - t0,
            }
            log_file.write(json.dumps(row, sort_keys=True) + "\n")
            if trainer.step % cfg.log_every == 0 or trainer.step == stop:
                log_file.flush()
                logger.info("train_step", extra={"context": row})
                if cfg.mlflow:
                    _log_mlflow(row)
            if trainer.step % cfg.checkpoint_every == 0 and trainer.step < stop:
                save_checkpoint(trainer.bundle(), _periodic_path(out, trainer.step))

    trainer.policy.verify(trainer.oracles)
    bundle = trainer.bundle()
    save_checkpoint(bundle, out)
    logger.info(
        "training_finished",
        extra={"context": {"steps": trainer.step, "out": str(out), "parameter_hash": bundle.parameter_hash()}},
    )
    return bundle


def train_loop(
    manifest: DatasetManifest,
    manifest_root: str | Path,
    oracles: OracleEncoders,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out: str | Path,
    *,
    resume: str | Path | None = None,
    log_path: str | Path | None = None,
    workers: int | None = None,
) -> CheckpointBundle:
    """Train to `train_cfg.steps` total steps, from scratch or from `resume`."""
    if resume is not None:
        trainer = TripletTrainer.from_checkpoint(load_checkpoint(resume), oracles, train_cfg)
    else:
        trainer = new_trainer(model_cfg, train_cfg, oracles)
    dataset = TripletImageDataset(
        manifest,
        manifest_root,
        oracles,
        landmark_mode=train_cfg.training_landmarks,
        with_ground_truth_landmarks=train_cfg.reconstruction_mix > 0.0,
    )
    logger.info(
        "training_started",
        extra={
            "context": {
                "records": len(dataset),
                "start_step": trainer.step,
                "steps": train_cfg.steps,
                "proxy": manifest.proxy_name,
                "transform": manifest.transform,
            }
        },
    )
    return run_steps(
        trainer, dataset, max(train_cfg.steps, trainer.step), Path(out), None if log_path is None else Path(log_path), workers
    )


def control_finetune(
    checkpoint: str | Path,
    manifest: DatasetManifest,
    manifest_root: str | Path,
    oracles: OracleEncoders,
    train_cfg: TrainConfig,
    out: str | Path,
    *,
    log_path: str | Path | None = None,
    workers: int | None = None,
) -> CheckpointBundle:
    """Continue training for `train_cfg.steps` more steps on transformed triplets only."""
    if manifest.transform is None:
        raise ConfigValidationError("finetuning needs a transformed manifest")
    if train_cfg.transform is not None and train_cfg.transform != manifest.transform:
        raise ConfigValidationError(
            "transform mismatch between manifest and config",
            manifest=manifest.transform,
            config=train_cfg.transform,
        )
    mismatched = [r.pair_seed for r in manifest.records if r.control_transform != manifest.transform]
    if mismatched:
        raise ConfigValidationError("manifest mixes transformed and plain triplets", pair_seeds=mismatched[:5])

    bundle = load_checkpoint(checkpoint)
    cfg = train_cfg.model_copy(update={"transform": manifest.transform})
    if cfg.steps == 0:
        save_checkpoint(bundle, out)
        logger.info("finetune_skipped", extra={"context": {"reason": "zero steps", "out": str(out)}})
        return bundle
    trainer = TripletTrainer.from_checkpoint(bundle, oracles, cfg)
    dataset = TripletImageDataset(
        manifest,
        manifest_root,
        oracles,
        landmark_mode=cfg.training_landmarks,
        with_ground_truth_landmarks=cfg.reconstruction_mix > 0.0,
    )
    return run_steps(
        trainer, dataset, bundle.step + cfg.steps, Path(out), None if log_path is None else Path(log_path), workers
    )


def read_training_log(path: str | Path) -> list[dict[str, Any]]:
    return list(iter_jsonl(path))
