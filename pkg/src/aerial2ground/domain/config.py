"""
Experiment configuration.

One JSON document (`ExperimentConfig`) configures every stage. Each nested
section is a Pydantic model with defaults matching the documented desk-scale
setup, so `ExperimentConfig()` is a complete, runnable configuration.

Unknown keys are rejected (`extra="forbid"`) so a typo in a config file is a
ConfigError instead of a silently ignored field.
"""

import json
import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from aerial2ground.domain.models import CameraMode, HeightNormalization
from aerial2ground.errors import ConfigError

SCHEMA_VERSION = 1

Range = tuple[float, float]
CountRange = tuple[int, int]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorConfig(_Section):
    """Procedural scene + renderer settings (scene_synth)."""

    extent_m: float = 64.0
    aerial_resolution: int = 64
    raster_grid: int = 256  # fine raster that aerial pixels area-average
    ground_mode: CameraMode = CameraMode.PERSPECTIVE
    ground_resolution: tuple[int, int] | None = None  # (H_g, W_g); None → mode default

    building_count: CountRange = (2, 5)
    tree_count: CountRange = (2, 6)
    road_count: CountRange = (1, 2)
    building_height_m: Range = (3.0, 30.0)
    tree_height_m: Range = (2.0, 15.0)
    building_size_m: Range = (6.0, 16.0)
    tree_radius_m: Range = (1.5, 4.0)
    road_width_m: float = 6.0
    placement_attempts: int = 200

    eye_height_m: float = 1.6
    hfov: float = math.pi / 2
    camera_yaw: float = math.pi / 2  # canonical heading: north
    camera_yaw_jitter: float = 0.0
    camera_jitter_m: float = 8.0  # along the main road
    distance_fade_m: float | None = 150.0
    sky_albedo: tuple[float, float, float] = (0.62, 0.75, 0.92)

    normalization: HeightNormalization = HeightNormalization.UNIT_SCALED
    open_threshold: float = 0.05  # vertical-object coverage below this → "open"

    @property
    def ground_shape(self) -> tuple[int, int]:
        if self.ground_resolution is not None:
            return self.ground_resolution
        return (64, 64) if self.ground_mode is CameraMode.PERSPECTIVE else (32, 128)

    def check(self) -> None:
        """Raise ConfigError for empty bounds or nonpositive resolutions."""
        for name in ("building_count", "tree_count", "road_count"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ConfigError(f"{name} bounds are empty: {(lo, hi)}")
        if self.road_count[0] < 1:
            raise ConfigError("scenes need at least one road for camera placement")
        for name in ("building_height_m", "tree_height_m", "building_size_m", "tree_radius_m"):
            lo, hi = getattr(self, name)
            if lo <= 0 or lo > hi:
                raise ConfigError(f"{name} bounds are empty: {(lo, hi)}")
        if self.aerial_resolution <= 0 or min(self.ground_shape) <= 0 or self.raster_grid <= 0:
            raise ConfigError("resolutions must be positive")
        if self.extent_m <= 0 or self.road_width_m <= 0 or self.road_width_m >= self.extent_m:
            raise ConfigError("extent and road width must satisfy 0 < road_width < extent")
        if not (0.0 < self.hfov < math.pi):
            raise ConfigError("hfov must lie in (0, pi)")


class DatasetConfig(_Section):
    seed: int = 0
    n_train: int = 4000
    n_test: int = 512
    workers: int = 1


class CodecConfig(_Section):
    """Small VAE that embeds aerial, height and ground images."""

    latent_channels: int = 4
    scale_factor: int = 4
    base_channels: int = 32
    kl_weight: float = 1e-6
    latent_scale: float = 1.0
    lr: float = 2e-4
    epochs: int = 20
    batch_size: int = 64
    min_images: int = 500
    seed: int = 0


class SemanticConfig(_Section):
    """Two-tower contrastive encoder for aerial and ground views."""

    patch_grid: int = 4  # tokens = patch_grid² + 1 global token
    width: int = 128
    layers: int = 2
    heads: int = 4
    temperature: float = 0.07
    lr: float = 3e-4
    epochs: int = 30
    batch_size: int = 128
    min_pairs: int = 1000
    seed: int = 0

    @property
    def tokens(self) -> int:
        return self.patch_grid**2 + 1


class ExtractorConfig(_Section):
    """Pinned metric classifier standing in for the Inception network."""

    channels: tuple[int, ...] = (16, 32, 64)
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0


class DenoiserConfig(_Section):
    """U-shaped noise predictor; flags select the conditioning variant."""

    base_channels: int = 64
    channel_mult: tuple[int, ...] = (1, 2, 2)
    attention_levels: tuple[int, ...] = (1, 2)  # cross-attention at the two coarsest levels
    heads: int = 4
    use_clip: bool = True
    use_vae_cond: bool = True
    use_height: bool = True
    zero_init_out: bool = True

    def conditioning_channels(self, latent_channels: int) -> int:
        n = 0
        if self.use_vae_cond:
            n += latent_channels
            if self.use_height:
                n += latent_channels
        return n


class DiffusionConfig(_Section):
    timesteps: int = 1000
    schedule: Literal["linear", "cosine"] = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    p_drop: float = 0.1
    lr: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 32
    epochs: int = 100
    guidance_scale: float = 2.0
    steps: int = 50
    val_size: int = 256
    seed: int = 0
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)


class EvalConfig(_Section):
    kid_subsets: int = 10
    kid_subset_size: int = 100
    is_splits: int = 10
    workers: int = 4
    seed: int = 0


class AblationConfig(_Section):
    cfg_scales: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    height_noise_sigmas: tuple[float, ...] = (0.0, 0.2)
    variants: tuple[str, ...] = ("full", "no_height", "vae_only", "clip_only", "none")
    full_grid: bool = False
    alpha: float = 0.05


class OrchestrationConfig(_Section):
    temporal_address: str = "localhost:7233"
    task_queue: str = "a2g-experiments"
    activity_timeout_hours: float = 24.0
    max_attempts: int = 3
    max_parallel_variants: int = 2


class ExperimentConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    codec: CodecConfig = Field(default_factory=CodecConfig)
    semantic: SemanticConfig = Field(default_factory=SemanticConfig)
    extractor: ExtractorConfig = Field(default_factory=ExtractorConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    orchestration: OrchestrationConfig = Field(default_factory=OrchestrationConfig)


# ── Loading and overrides ────────────────────────────────────────────


def load_config(path: Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load a config file (or defaults) and apply `dotted.key=json` overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
    for item in overrides or []:
        apply_override(data, item)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def apply_override(data: dict[str, Any], item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like section.field=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings such as ground_mode=panorama
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a non-object value")
    node[parts[-1]] = value


def with_updates(config: ExperimentConfig, **sections: dict[str, Any]) -> ExperimentConfig:
    """Return a copy with nested section fields replaced (validated)."""
    data = config.model_dump(mode="json")
    for section, fields in sections.items():
        target = data[section]
        for k, v in fields.items():
            if isinstance(v, dict) and isinstance(target.get(k), dict):
                target[k] = {**target[k], **v}
            else:
                target[k] = v
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration update: {exc}") from exc
