# src/tripletswap/domain/run_config.py
"""
Experiment configuration. Every section is a pydantic model so a JSON config
file validates on load; `RunConfig` is the resolved view written next to
every artifact.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.losses import LossWeights
from tripletswap.domain.triplets import TRANSFORM_ALIASES, ControlTransform

ProxyName = Literal["oracle", "attr_noisy", "id_weak"]
Parameterization = Literal["x0", "eps"]
TrainingLandmarks = Literal["pseudo_target", "recombined"]


class ProxyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: ProxyName = "oracle"
    # attr_noisy: std of the attribute noise, in units of each interval's width
    sigma: float = Field(default=0.08, ge=0.0)
    # id_weak: weight of the source identity in the blend
    blend: float = Field(default=0.85, ge=0.0, le=1.0)
    augment_repeats: int = Field(default=1, ge=1)


class OracleTrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=32, gt=0)
    batch_size: int = Field(default=128, gt=0)
    lr: float = Field(default=2e-3, gt=0.0)
    max_epochs: int = Field(default=40, gt=0)
    rmse_target: float = Field(default=0.05, gt=0.0)
    min_samples: int = Field(default=20_000, ge=1)
    val_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    # lighting direction only scored where strength is visible
    min_lighting_strength: float = Field(default=0.1, ge=0.0)
    seed: int = 0


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    resolution: int = Field(default=64, gt=0)
    latent_channels: int = Field(default=48, gt=0)
    base_width: int = Field(default=64, gt=0)
    channel_mults: tuple[int, ...] = (1, 2)
    attention_resolutions: tuple[int, ...] = (16, 8)
    head_dim: int = Field(default=16, gt=0)
    d_ctx: int = Field(default=64, gt=0)
    n_txt: int = Field(default=8, gt=0)
    n_id: int = Field(default=4, gt=0)
    id_dim: int = Field(default=8, gt=0)
    norm_groups: int = Field(default=8, gt=0)
    parameterization: Parameterization = "x0"
    use_facenet: bool = True
    use_id_adapter: bool = True

    @model_validator(mode="after")
    def _check_widths(self) -> ModelConfig:
        for mult in self.channel_mults:
            width = self.base_width * mult
            if width % self.head_dim != 0:
                raise ValueError(f"width {width} not divisible by head_dim {self.head_dim}")
            if width % self.norm_groups != 0:
                raise ValueError(f"width {width} not divisible by norm_groups {self.norm_groups}")
        if self.d_ctx % self.head_dim != 0:
            raise ValueError("d_ctx must be divisible by head_dim")
        if not self.channel_mults:
            raise ValueError("channel_mults must not be empty")
        return self

    @property
    def latent_resolution(self) -> int:
        return self.resolution // 4


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(default=8, gt=0)
    lr: float = Field(default=1e-4, gt=0.0)
    steps: int = Field(default=5_000, ge=0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    weights: LossWeights = Field(default_factory=LossWeights)
    proxy: ProxyName = "oracle"
    transform: ControlTransform | None = None
    seed: int = 0

    no_facenet: bool = False
    no_id_adapter: bool = False
    no_id_loss: bool = False
    no_rec_loss: bool = False

    training_landmarks: TrainingLandmarks = "pseudo_target"
    reconstruction_mix: float = Field(default=0.0, ge=0.0, le=1.0)

    T: int = Field(default=1000, ge=1)
    beta_min: float = 1e-4
    beta_max: float = 2e-2

    log_every: int = Field(default=50, gt=0)
    checkpoint_every: int = Field(default=1_000, gt=0)
    mlflow: bool = False

    @field_validator("transform", mode="before")
    @classmethod
    def _alias_transform(cls, v: Any) -> Any:
        if isinstance(v, str) and v in TRANSFORM_ALIASES:
            return TRANSFORM_ALIASES[v]
        return v

    def effective_weights(self) -> LossWeights:
        """Ablation switches force the matching weight to zero."""
        return LossWeights(
            lambda_id=0.0 if self.no_id_loss else self.weights.lambda_id,
            lambda_dm=self.weights.lambda_dm,
            lambda_rec=0.0 if self.no_rec_loss else self.weights.lambda_rec,
        )

    def apply_to_model(self, model: ModelConfig) -> ModelConfig:
        return model.model_copy(
            update={
                "use_facenet": model.use_facenet and not self.no_facenet,
                "use_id_adapter": model.use_id_adapter and not self.no_id_adapter,
            }
        )


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_pairs: int = Field(default=1_000, ge=2)
    k_steps: int = 1
    seed: int = 10_000
    batch_size: int = Field(default=32, gt=0)
    plots: bool = True

    @field_validator("k_steps")
    @classmethod
    def _supported_k(cls, v: int) -> int:
        if v not in (1, 4):
            raise ValueError("k_steps must be 1 or 4")
        return v


class RunConfig(BaseModel):
    """Resolved configuration of one CLI invocation."""

    command: str
    seed: int = 0
    paths: dict[str, str] = Field(default_factory=dict)
    overrides: dict[str, Any] = Field(default_factory=dict)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    oracle: OracleTrainConfig = Field(default_factory=OracleTrainConfig)
    proxy: ProxyConfig = Field(default_factory=ProxyConfig)

    def write(self, directory: str | Path) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "run_config.json"
        path.write_text(self.model_dump_json(indent=2))
        return path


SECTIONS = ("model", "train", "eval", "oracle", "proxy")


def _deep_merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"config file is not valid JSON: {p}", path=str(p), error=str(exc)) from exc
    unknown = set(data) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigValidationError(f"unknown config sections: {sorted(unknown)}", path=str(p))
    return data


def resolve_run_config(
    command: str,
    *,
    config_path: str | Path | None = None,
    seed: int | None = None,
    paths: dict[str, Any] | None = None,
    overrides: dict[str, dict[str, Any]] | None = None,
) -> RunConfig:
    """File values first, then command-line overrides (flags win)."""
    data = load_config_file(config_path)
    flags = {section: {k: v for k, v in values.items() if v is not None} for section, values in (overrides or {}).items()}
    merged = _deep_merge({s: data.get(s, {}) for s in SECTIONS}, flags)
    root_seed = seed if seed is not None else int(data.get("seed", 0))
    try:
        return RunConfig(
            command=command,
            seed=root_seed,
            paths={k: str(v) for k, v in (paths or {}).items() if v is not None},
            overrides=flags,
            **merged,
        )
    except ValidationError as exc:
        raise ConfigValidationError(f"invalid configuration for {command}", errors=exc.errors()) from exc
