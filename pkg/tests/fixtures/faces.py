# tests/fixtures/faces.py

import torch

from tripletswap.adapters.proxy_oracle import OracleProxy
from tripletswap.analysis.codec import LatentCodec
from tripletswap.analysis.diffusion import make_schedule
from tripletswap.analysis.render import render
from tripletswap.domain.run_config import ModelConfig, TrainConfig
from tripletswap.domain.seeds import derive_seed, torch_generator
from tripletswap.models.oracles import OracleEncoders
from tripletswap.models.swapnet import ConditionBundle, SwapModel, init_model
from tripletswap.services.trainer import TripletBatch, training_landmarks
from tripletswap.services.triplet_builder import build_triplet


def tiny_model_config(**overrides) -> ModelConfig:
    """
    Smallest SwapNet that still has both down levels and attention at 16 and 8.
    """
    base = dict(base_width=16, d_ctx=16, n_txt=2, n_id=2, head_dim=16, norm_groups=8)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(batch_size=2, steps=2, lr=1e-3, log_every=1, checkpoint_every=1_000)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_model(seed: int = 0, **overrides) -> SwapModel:
    return init_model(tiny_model_config(**overrides), make_schedule(), seed=seed)


def oracle_triplets(n: int, seed: int = 0):
    proxy = OracleProxy()
    return [
        build_triplet(derive_seed(seed, "pair", i), derive_seed(seed, "donor", i), proxy)
        for i in range(n)
    ]


def triplet_batch(oracles: OracleEncoders, n: int = 2, seed: int = 0) -> TripletBatch:
    """In-memory batch rendered straight from factors (no PNG round trip)."""
    records = oracle_triplets(n, seed)
    source = torch.stack([render(r.source) for r in records])
    with torch.no_grad():
        id_embedding = oracles.embed(source)
    return TripletBatch(
        source=source,
        pseudo_target=torch.stack([render(r.pseudo_target) for r in records]),
        ground_truth=torch.stack([render(r.ground_truth) for r in records]),
        landmarks=torch.stack([training_landmarks(r) for r in records]),
        id_embedding=id_embedding,
    )


def random_condition(model: SwapModel, n: int = 2, seed: int = 0) -> ConditionBundle:
    c = model.config
    side = c.latent_resolution
    gen = torch_generator(seed)
    return ConditionBundle(
        target_latent=torch.randn(n, c.latent_channels, side, side, generator=gen),
        landmark_image=torch.rand(n, 3, c.resolution, c.resolution, generator=gen),
        source_latent=torch.randn(n, c.latent_channels, side, side, generator=gen),
        id_embedding=torch.randn(n, c.id_dim, generator=gen),
    )


def codec() -> LatentCodec:
    return LatentCodec()
