# src/tripletswap/models/swapnet.py
"""
Three-branch swap model.

SwapNet   UNet over [noise latent + pose feature ; target latent] with fused
          self-attention and adapter cross-attention at every attention site.
FaceNet   structural copy of the SwapNet trunk fed the clean source latent at a
          fixed t=0 embedding; it only supplies reference tokens.
ID path   IdProjector (Linear + LayerNorm) -> N_id tokens for the adapter term.
Pose      PoseGuider maps the landmark image to latent resolution.

Every condition path starts at zero: the target-latent slice of the input
conv, the adapter output projections, the pose guider's last layer and the
prediction head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from tripletswap.analysis.diffusion import NoiseSchedule, eps_from_x0, predicted_x0
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.run_config import ModelConfig
from tripletswap.models.attention import SpatialTransformer, zero_module


@dataclass
class ConditionBundle:
    """Batched conditioning tensors for one forward pass."""

    target_latent: torch.Tensor
    landmark_image: torch.Tensor
    source_latent: torch.Tensor
    id_embedding: torch.Tensor
    # None -> the model's learned context tokens
    context: torch.Tensor | None = None

    def validate(self) -> None:
        missing = [
            name
            for name in ("target_latent", "landmark_image", "source_latent", "id_embedding")
            if getattr(self, name) is None
        ]
        if missing:
            raise ConfigValidationError("incomplete condition bundle", missing=missing)
        b = self.target_latent.shape[0]
        sizes = {
            name: getattr(self, name).shape[0]
            for name in ("landmark_image", "source_latent", "id_embedding")
        }
        if any(s != b for s in sizes.values()):
            raise ConfigValidationError("condition batch sizes differ", target_latent=b, **sizes)

    def to(self, *args: object, **kwargs: object) -> ConditionBundle:
        return ConditionBundle(
            target_latent=self.target_latent.to(*args, **kwargs),  # type: ignore[arg-type]
            landmark_image=self.landmark_image.to(*args, **kwargs),  # type: ignore[arg-type]
            source_latent=self.source_latent.to(*args, **kwargs),  # type: ignore[arg-type]
            id_embedding=self.id_embedding.to(*args, **kwargs),  # type: ignore[arg-type]
            context=None if self.context is None else self.context.to(*args, **kwargs),  # type: ignore[arg-type]
        )


@dataclass
class ReferenceCache:
    """Normalised FaceNet tokens, one entry per self-attention site."""

    tokens: list[torch.Tensor]

    def __len__(self) -> int:
        return len(self.tokens)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64, device=t.device) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int, groups: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class ExpandedConvIn(nn.Module):
    """
    Input conv over 2*C_lat channels, stored as two halves: the noise half and
    the zero-initialised target half. Equivalent to one conv over the channel
    concatenation; `weight` returns that concatenated kernel.
    """

    def __init__(self, latent_channels: int, out_ch: int) -> None:
        super().__init__()
        self.noise = nn.Conv2d(latent_channels, out_ch, 3, padding=1)
        self.target = zero_module(nn.Conv2d(latent_channels, out_ch, 3, padding=1, bias=False))

    @property
    def weight(self) -> torch.Tensor:
        return torch.cat([self.noise.weight, self.target.weight], dim=1)

    def forward(self, noise_latent: torch.Tensor, target_latent: torch.Tensor) -> torch.Tensor:
        return self.noise(noise_latent) + self.target(target_latent)


class PoseGuider(nn.Module):
    """Landmark image [3,64,64] -> feature [C_lat,16,16]; last layer zero-initialised."""

    def __init__(self, latent_channels: int) -> None:
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 32, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 64, 4, stride=2, padding=1),
            nn.SiLU(),
        )
        self.out = zero_module(nn.Conv2d(64, latent_channels, 3, padding=1))

    def forward(self, landmark_image: torch.Tensor) -> torch.Tensor:
        return self.out(self.body(landmark_image))


class IdProjector(nn.Module):
    """8-real identity embedding -> N_id tokens of width d_ctx."""

    def __init__(self, id_dim: int, n_id: int, d_ctx: int) -> None:
        super().__init__()
        self.n_id = n_id
        self.d_ctx = d_ctx
        self.proj = nn.Linear(id_dim, n_id * d_ctx)
        self.norm = nn.LayerNorm(d_ctx)

    def forward(self, id_embedding: torch.Tensor) -> torch.Tensor:
        return self.norm(self.proj(id_embedding).view(-1, self.n_id, self.d_ctx))


class UNetTrunk(nn.Module):
    """
    Shared UNet body. `forward` takes the already-projected input features, so
    SwapNet and FaceNet differ only in their input conv and head.
    """

    def __init__(self, config: ModelConfig, use_id_adapter: bool) -> None:
        super().__init__()
        c = config
        self.temb_dim = 4 * c.base_width
        self.time_mlp = nn.Sequential(
            nn.Linear(c.base_width, self.temb_dim),
            nn.SiLU(),
            nn.Linear(self.temb_dim, self.temb_dim),
        )
        widths = [c.base_width * m for m in c.channel_mults]
        res = c.latent_resolution

        def attn(ch: int, r: int) -> nn.Module | None:
            if r in c.attention_resolutions:
                return SpatialTransformer(ch, c.d_ctx, c.head_dim, c.norm_groups, use_id_adapter)
            return None

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = c.base_width
        level_res = []
        for i, w in enumerate(widths):
            self.down_res.append(ResBlock(prev, w, self.temb_dim, c.norm_groups))
            self.down_attn.append(attn(w, res) or nn.Identity())
            level_res.append(res)
            prev = w
            if i + 1 < len(widths):
                self.downsample.append(nn.Conv2d(w, w, 4, stride=2, padding=1))
                res //= 2

        self.mid_res1 = ResBlock(prev, prev, self.temb_dim, c.norm_groups)
        self.mid_attn = attn(prev, res) or nn.Identity()
        self.mid_res2 = ResBlock(prev, prev, self.temb_dim, c.norm_groups)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            self.up_res.append(ResBlock(prev + w, w, self.temb_dim, c.norm_groups))
            self.up_attn.append(attn(w, level_res[i]) or nn.Identity())
            prev = w
            if i > 0:
                self.upsample.append(nn.Conv2d(w, w, 3, padding=1))
        self.out_width = prev

    def attention_sites(self) -> list[SpatialTransformer]:
        return [m for m in self.modules() if isinstance(m, SpatialTransformer)]

    def forward(
        self,
        h: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        id_tokens: torch.Tensor | None = None,
        reference: ReferenceCache | None = None,
        capture: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        temb = self.time_mlp(timestep_embedding(t, self.time_mlp[0].in_features).to(h.dtype))
        refs = iter(reference.tokens) if reference is not None else None

        def run_attn(module: nn.Module, x: torch.Tensor) -> torch.Tensor:
            if isinstance(module, SpatialTransformer):
                ref = next(refs) if refs is not None else None
                return module(x, context, id_tokens, ref, capture)
            return x

        skips = []
        for i, (res_block, attn_block) in enumerate(zip(self.down_res, self.down_attn)):
            h = run_attn(attn_block, res_block(h, temb))
            skips.append(h)
            if i < len(self.downsample):
                h = self.downsample[i](h)

        h = self.mid_res1(h, temb)
        h = run_attn(self.mid_attn, h)
        h = self.mid_res2(h, temb)

        for i, (res_block, attn_block) in enumerate(zip(self.up_res, self.up_attn)):
            h = res_block(torch.cat([h, skips.pop()], dim=1), temb)
            h = run_attn(attn_block, h)
            if i < len(self.upsample):
                h = self.upsample[i](F.interpolate(h, scale_factor=2.0, mode="nearest"))
        return h


class FaceNet(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.conv_in = nn.Conv2d(config.latent_channels, config.base_width, 3, padding=1)
        self.trunk = UNetTrunk(config, use_id_adapter=False)

    def forward(self, source_latent: torch.Tensor, context: torch.Tensor) -> ReferenceCache:
        captured: list[torch.Tensor] = []
        t = torch.zeros(source_latent.shape[0], device=source_latent.device)
        self.trunk(self.conv_in(source_latent), t, context, capture=captured)
        return ReferenceCache(captured)


class SwapModel(nn.Module):
    def __init__(self, config: ModelConfig, schedule: NoiseSchedule) -> None:
        super().__init__()
        self.config = config
        self.schedule = schedule
        c = config
        self.conv_in = ExpandedConvIn(c.latent_channels, c.base_width)
        self.trunk = UNetTrunk(c, use_id_adapter=c.use_id_adapter)
        self.norm_out = nn.GroupNorm(c.norm_groups, self.trunk.out_width)
        self.conv_out = zero_module(nn.Conv2d(self.trunk.out_width, c.latent_channels, 3, padding=1))
        self.pose_guider = PoseGuider(c.latent_channels)
        self.context_tokens = nn.Parameter(torch.randn(c.n_txt, c.d_ctx) * 0.02)
        self.id_projector = IdProjector(c.id_dim, c.n_id, c.d_ctx) if c.use_id_adapter else None
        self.facenet = FaceNet(c) if c.use_facenet else None
        if self.facenet is not None:
            copy_trunk_into_facenet(self, self.facenet)

    def context_for(self, batch: int, override: torch.Tensor | None = None) -> torch.Tensor:
        if override is not None:
            return override
        return self.context_tokens.unsqueeze(0).expand(batch, -1, -1)

    def facenet_extract(self, source_latent: torch.Tensor, context: torch.Tensor | None = None) -> ReferenceCache:
        if self.facenet is None:
            raise ConfigValidationError("model was built without FaceNet")
        return self.facenet(source_latent, self.context_for(source_latent.shape[0], context))

    def pose_guider_forward(self, landmark_image: torch.Tensor) -> torch.Tensor:
        return self.pose_guider(landmark_image)

    def forward(
        self,
        noise_latent: torch.Tensor,
        condition: ConditionBundle,
        t: int,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (eps_hat, x0_hat)."""
        condition.validate()
        b = noise_latent.shape[0]
        if condition.target_latent.shape != noise_latent.shape:
            raise ConfigValidationError(
                "target latent shape differs from noise latent",
                noise=tuple(noise_latent.shape),
                target=tuple(condition.target_latent.shape),
            )
        context = self.context_for(b, condition.context)
        x = noise_latent + self.pose_guider(condition.landmark_image)
        h = self.conv_in(x, condition.target_latent)

        reference = self.facenet(condition.source_latent, context) if self.facenet is not None else None
        id_tokens = self.id_projector(condition.id_embedding) if self.id_projector is not None else None

        t_batch = torch.full((b,), float(t), device=noise_latent.device)
        h = self.trunk(h, t_batch, context, id_tokens, reference)
        raw = self.conv_out(F.silu(self.norm_out(h)))

        if self.config.parameterization == "x0":
            x0_hat = raw
            eps_hat = eps_from_x0(noise_latent, x0_hat, t, self.schedule)
        else:
            eps_hat = raw
            x0_hat = predicted_x0(noise_latent, eps_hat, t, self.schedule)
        return eps_hat, x0_hat

    def predict(self, z_t: torch.Tensor, condition: ConditionBundle, t: int) -> tuple[torch.Tensor, torch.Tensor]:
        return self(z_t, condition, t)


def copy_trunk_into_facenet(model: SwapModel, facenet: FaceNet) -> None:
    """FaceNet inherits the SwapNet trunk; its input conv takes the noise-latent half."""
    with torch.no_grad():
        facenet.conv_in.weight.copy_(model.conv_in.noise.weight)
        if facenet.conv_in.bias is not None and model.conv_in.noise.bias is not None:
            facenet.conv_in.bias.copy_(model.conv_in.noise.bias)
        source = {k: v for k, v in model.trunk.state_dict().items() if "_id" not in k}
        facenet.trunk.load_state_dict(source, strict=True)


def init_model(config: ModelConfig, schedule: NoiseSchedule, seed: int = 0) -> SwapModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return SwapModel(config, schedule)


def swapnet_forward(
    noise_latent: torch.Tensor,
    condition: ConditionBundle,
    t: int,
    model: SwapModel,
) -> tuple[torch.Tensor, torch.Tensor]:
    return model(noise_latent, condition, t)


def trainable_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
