"""
Paired training/evaluation records.

These models carry numpy arrays, so they enable `arbitrary_types_allowed`
and validate shape/range invariants in `model_validator`s. Pixels are
float32 in [0, 1] with channels last; height maps are float32 so the PFM
round trip is bit-exact.
"""

from typing import Annotated

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from aerial2ground.domain.models import GroundCamera, HeightNormalization, SceneClass


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def _as_float32(v: object) -> np.ndarray:
    return np.asarray(v, dtype=np.float32)


Float32Array = Annotated[np.ndarray, BeforeValidator(_as_float32)]


def _check_rgb(pixels: np.ndarray) -> None:
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected H×W×3 pixels, got shape {pixels.shape}")
    if not np.isfinite(pixels).all() or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")


class AerialImage(_ArrayModel):
    pixels: Float32Array

    @model_validator(mode="after")
    def _square_rgb(self) -> "AerialImage":
        _check_rgb(self.pixels)
        if self.pixels.shape[0] != self.pixels.shape[1]:
            raise ValueError("aerial images are square")
        return self

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


class HeightMap(_ArrayModel):
    values: Float32Array
    normalization: HeightNormalization

    @model_validator(mode="after")
    def _range(self) -> "HeightMap":
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"expected H×W heights, got shape {v.shape}")
        if not np.isfinite(v).all() or v.min(initial=0.0) < 0.0:
            raise ValueError("heights must be finite and nonnegative")
        if self.normalization is HeightNormalization.UNIT_SCALED and v.max(initial=0.0) > 1.0:
            raise ValueError("unit_scaled heights must lie in [0, 1]")
        return self

    @property
    def upper_bound(self) -> float:
        return 1.0 if self.normalization is HeightNormalization.UNIT_SCALED else float("inf")


class GroundView(_ArrayModel):
    pixels: Float32Array
    camera: GroundCamera
    # Per-pixel object index (−1 = sky); only populated in debug renders.
    object_ids: np.ndarray | None = None

    @model_validator(mode="after")
    def _rgb(self) -> "GroundView":
        _check_rgb(self.pixels)
        if self.object_ids is not None and self.object_ids.shape != self.pixels.shape[:2]:
            raise ValueError("object id buffer must match the image size")
        return self


class PairedSample(_ArrayModel):
    id: str = Field(..., min_length=1)
    aerial: AerialImage
    height: HeightMap
    ground: GroundView
    scene_seed: int = Field(..., ge=0)
    scene_class: SceneClass = SceneClass.OPEN

    @model_validator(mode="after")
    def _aligned(self) -> "PairedSample":
        if self.height.values.shape != self.aerial.pixels.shape[:2]:
            raise ValueError("height map and aerial image must share spatial dimensions")
        return self
