"""
Checkpoint directories.

    <ckpt>/codec.pt       codec.json
    <ckpt>/semantic.pt    semantic.json
    <ckpt>/extractor.pt   extractor.json
    <ckpt>/diffusion.pt   diffusion.json   diffusion_state.pt (resume)
    <ckpt>/<stage>_loss.csv

A diffusion checkpoint may live in its own directory (one per ablation
variant); its manifest then points at the directory holding the frozen
codec and semantic encoder.
"""

import json
import logging
from pathlib import Path
from typing import Any, Literal

import pandas as pd
import torch
from pydantic import BaseModel, Field, ValidationError

from aerial2ground.domain.config import (
    CodecConfig,
    DiffusionConfig,
    ExtractorConfig,
    SemanticConfig,
)
from aerial2ground.domain.provenance import file_hash, weights_hash
from aerial2ground.errors import DependencyError, FormatError, IoError
from aerial2ground.models.classifier import MetricClassifier
from aerial2ground.models.codec import LatentCodec
from aerial2ground.models.layers import freeze
from aerial2ground.models.semantic import SemanticEncoder
from aerial2ground.models.unet import ConditionalUNet

logger = logging.getLogger(__name__)

Stage = Literal["codec", "semantic", "extractor", "diffusion"]
STAGES: tuple[Stage, ...] = ("codec", "semantic", "extractor", "diffusion")


class StageManifest(BaseModel):
    schema_version: Literal[1] = 1
    stage: Stage
    config: dict[str, Any]
    config_hash: str
    weights_hash: str
    data_hash: str = ""
    epochs: int = 0
    loss_csv: str = ""
    seed: int = 0
    # Diffusion only.
    prerequisites: str | None = None
    codec_hash: str | None = None
    semantic_hash: str | None = None
    schedule: str | None = None
    timesteps: int | None = None
    p_drop: float | None = None
    extra: dict[str, Any] = Field(default_factory=dict)


def weights_path(ckpt: Path, stage: Stage) -> Path:
    return Path(ckpt) / f"{stage}.pt"


def manifest_path(ckpt: Path, stage: Stage) -> Path:
    return Path(ckpt) / f"{stage}.json"


def state_path(ckpt: Path) -> Path:
    return Path(ckpt) / "diffusion_state.pt"


def loss_csv_path(ckpt: Path, stage: Stage) -> Path:
    return Path(ckpt) / f"{stage}_loss.csv"


def has_stage(ckpt: Path, stage: Stage) -> bool:
    return weights_path(ckpt, stage).exists() and manifest_path(ckpt, stage).exists()


def read_stage_manifest(ckpt: Path, stage: Stage) -> StageManifest:
    path = manifest_path(ckpt, stage)
    if not path.exists() or not weights_path(ckpt, stage).exists():
        raise DependencyError(stage, f"no {stage} checkpoint in {ckpt}")
    try:
        return StageManifest.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise FormatError(f"malformed {path.name}: {exc}", field=stage) from exc


def save_stage(ckpt: Path, module: torch.nn.Module, manifest: StageManifest) -> StageManifest:
    ckpt = Path(ckpt)
    try:
        ckpt.mkdir(parents=True, exist_ok=True)
        torch.save(module.state_dict(), weights_path(ckpt, manifest.stage))
        manifest_path(ckpt, manifest.stage).write_text(
            json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True)
        )
    except OSError as exc:
        raise IoError(f"cannot write {manifest.stage} checkpoint to {ckpt}: {exc}") from exc
    logger.info("Saved %s checkpoint to %s (weights %s)", manifest.stage, ckpt, manifest.weights_hash[:12])
    return manifest


def _load_weights(ckpt: Path, stage: Stage, module: torch.nn.Module, manifest: StageManifest) -> None:
    state = torch.load(weights_path(ckpt, stage), map_location="cpu", weights_only=True)
    module.load_state_dict(state)
    if weights_hash(module) != manifest.weights_hash:
        raise FormatError(f"{stage} weights do not match the hash in {stage}.json", field=stage)


def load_codec(ckpt: Path) -> LatentCodec:
    manifest = read_stage_manifest(ckpt, "codec")
    codec = LatentCodec(CodecConfig.model_validate(manifest.config))
    _load_weights(ckpt, "codec", codec, manifest)
    return freeze(codec)


def load_semantic(ckpt: Path) -> SemanticEncoder:
    manifest = read_stage_manifest(ckpt, "semantic")
    encoder = SemanticEncoder(SemanticConfig.model_validate(manifest.config))
    _load_weights(ckpt, "semantic", encoder, manifest)
    return freeze(encoder)


def load_extractor(ckpt: Path) -> MetricClassifier:
    manifest = read_stage_manifest(ckpt, "extractor")
    model = MetricClassifier(ExtractorConfig.model_validate(manifest.config))
    _load_weights(ckpt, "extractor", model, manifest)
    return freeze(model)


def build_denoiser(config: DiffusionConfig, codec: LatentCodec, semantic_config: SemanticConfig) -> ConditionalUNet:
    torch.manual_seed(config.seed)
    return ConditionalUNet(
        config.denoiser, codec.latent_channels, semantic_config.tokens, semantic_config.width
    )


def prerequisites_dir(ckpt: Path) -> Path:
    manifest = read_stage_manifest(ckpt, "diffusion")
    return Path(manifest.prerequisites) if manifest.prerequisites else Path(ckpt)


def _check_prerequisite(prereq: Path, stage: Stage, recorded: str | None) -> None:
    if recorded is None:
        return
    current = read_stage_manifest(prereq, stage).weights_hash
    if current != recorded:
        raise DependencyError(
            stage, f"{stage} in {prereq} has weights {current[:12]}, the denoiser was trained on {recorded[:12]}"
        )


def load_denoiser(ckpt: Path) -> tuple[ConditionalUNet, StageManifest]:
    manifest = read_stage_manifest(ckpt, "diffusion")
    prereq = prerequisites_dir(ckpt)
    _check_prerequisite(prereq, "codec", manifest.codec_hash)
    _check_prerequisite(prereq, "semantic", manifest.semantic_hash)
    codec = load_codec(prereq)
    config = DiffusionConfig.model_validate(manifest.config)
    # Variants without cross-attention never read the token shape.
    if config.denoiser.use_clip or has_stage(prereq, "semantic"):
        semantic_config = SemanticConfig.model_validate(read_stage_manifest(prereq, "semantic").config)
    else:
        semantic_config = SemanticConfig()
    model = build_denoiser(config, codec, semantic_config)
    _load_weights(ckpt, "diffusion", model, manifest)
    return freeze(model), manifest


def checkpoint_hash(ckpt: Path, stage: Stage = "diffusion") -> str:
    return file_hash(weights_path(ckpt, stage))


# ── Loss history and resume state ────────────────────────────────────


def write_loss_csv(ckpt: Path, stage: Stage, rows: list[tuple], columns: list[str]) -> Path:
    path = loss_csv_path(ckpt, stage)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.8f")
    return path


def save_resume_state(ckpt: Path, state: dict) -> None:
    path = state_path(ckpt)
    tmp = path.with_suffix(".tmp")
    torch.save(state, tmp)
    tmp.replace(path)


def load_resume_state(ckpt: Path) -> dict | None:
    path = state_path(ckpt)
    if not path.exists():
        return None
    return torch.load(path, map_location="cpu", weights_only=True)
