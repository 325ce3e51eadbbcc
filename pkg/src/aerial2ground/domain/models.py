"""
Domain models for procedural scenes and ground cameras.

All models use Pydantic v2 BaseModel for validation and for byte-stable JSON
serialization: `SceneSpec.model_dump_json()` is the canonical serialized
form, so two specs from the same (seed, config) serialize identically.

Enums inherit from (str, Enum) so they serialize as plain strings in JSON
(e.g. "building" instead of {"value": "building"}).
"""

import math
from enum import Enum
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

Albedo = tuple[
    Annotated[float, Field(ge=0.0, le=1.0)],
    Annotated[float, Field(ge=0.0, le=1.0)],
    Annotated[float, Field(ge=0.0, le=1.0)],
]


class ObjectClass(str, Enum):
    """Scene object categories, listed bottom layer first."""

    GROUND = "ground"
    ROAD = "road"
    TREE = "tree"
    BUILDING = "building"

    @property
    def layer(self) -> int:
        # Tie-break for the topmost rule when heights are equal.
        return _LAYER[self]

    @property
    def is_flat(self) -> bool:
        return self in (ObjectClass.GROUND, ObjectClass.ROAD)


_LAYER = {ObjectClass.GROUND: 0, ObjectClass.ROAD: 1, ObjectClass.TREE: 2, ObjectClass.BUILDING: 3}


class CameraMode(str, Enum):
    PERSPECTIVE = "perspective"  # narrow-FOV crops
    PANORAMA = "panorama"        # 360° wide-FOV strips


class HeightNormalization(str, Enum):
    RAW_M = "raw_m"
    UNIT_SCALED = "unit_scaled"


class SceneClass(str, Enum):
    """Ground-view category used as the pinned metric classifier's label space."""

    OPEN = "open"
    BUILDING = "building"
    TREE = "tree"

    @classmethod
    def ordered(cls) -> list["SceneClass"]:
        return [cls.OPEN, cls.BUILDING, cls.TREE]


# ── Footprints ───────────────────────────────────────────────────────


class RectFootprint(BaseModel):
    """Axis-aligned rectangle in world meters."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["rect"] = "rect"
    x0: float
    y0: float
    x1: float
    y1: float

    @model_validator(mode="after")
    def _ordered(self) -> "RectFootprint":
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("rectangle corners must satisfy x0 < x1 and y0 < y1")
        return self

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def bounds(self) -> tuple[float, float, float, float]:
        return self.x0, self.y0, self.x1, self.y1

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


class DiscFootprint(BaseModel):
    """Disc in world meters (tree crowns)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["disc"] = "disc"
    cx: float
    cy: float
    r: float = Field(..., gt=0.0)

    @property
    def area(self) -> float:
        return math.pi * self.r**2

    def bounds(self) -> tuple[float, float, float, float]:
        return self.cx - self.r, self.cy - self.r, self.cx + self.r, self.cy + self.r

    def contains(self, x: float, y: float) -> bool:
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r**2


Footprint = Annotated[RectFootprint | DiscFootprint, Field(discriminator="kind")]


# ── Scene ────────────────────────────────────────────────────────────


class SceneObject(BaseModel):
    model_config = ConfigDict(frozen=True)

    cls: ObjectClass
    footprint: Footprint
    height_m: float = Field(..., ge=0.0)
    albedo: Albedo

    @model_validator(mode="after")
    def _flat_classes(self) -> "SceneObject":
        if self.cls.is_flat and self.height_m != 0.0:
            raise ValueError(f"{self.cls.value} objects must have height_m = 0")
        return self


class SceneSpec(BaseModel):
    """Procedural scene from which both views and the height map are rendered.

    `objects[0]` is conventionally the ground plane covering the full extent.
    """

    model_config = ConfigDict(frozen=True)

    seed: int = Field(..., ge=0)
    extent_m: float = Field(..., gt=0.0)
    objects: list[SceneObject]

    @model_validator(mode="after")
    def _inside_extent(self) -> "SceneSpec":
        eps = 1e-9
        for i, obj in enumerate(self.objects):
            x0, y0, x1, y1 = obj.footprint.bounds()
            if x0 < -eps or y0 < -eps or x1 > self.extent_m + eps or y1 > self.extent_m + eps:
                raise ValueError(f"object {i} ({obj.cls.value}) footprint leaves [0, {self.extent_m}]^2")
        return self

    def of_class(self, cls: ObjectClass) -> list[tuple[int, SceneObject]]:
        return [(i, o) for i, o in enumerate(self.objects) if o.cls is cls]

    @property
    def ground_albedo(self) -> Albedo:
        ground = self.of_class(ObjectClass.GROUND)
        return ground[0][1].albedo if ground else (0.5, 0.5, 0.5)


class GroundCamera(BaseModel):
    """Street-level camera. Yaw is counter-clockwise from east, in radians.

    Perspective mode looks along `yaw`; in panorama mode `yaw` is the heading
    of the image's left edge and headings decrease to the right.
    """

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    eye_height_m: float = Field(1.6, gt=0.0)
    yaw: float
    mode: CameraMode
    hfov: float | None = None

    @model_validator(mode="after")
    def _fov(self) -> "GroundCamera":
        if self.mode is CameraMode.PERSPECTIVE:
            if self.hfov is None or not (0.0 < self.hfov < math.pi):
                raise ValueError("perspective cameras need hfov in (0, pi)")
        return self
