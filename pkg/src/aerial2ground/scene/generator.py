"""
Seeded procedural scene generation and ground-camera placement.

Every draw comes from a `numpy.random.Generator` seeded with the scene seed,
so `generate_scene(seed, config)` is a pure function of its inputs. Objects
are placed by rejection sampling: buildings and trees never overlap roads or
each other, which keeps every road cell a valid camera position.
"""

import logging

import numpy as np

from aerial2ground.domain.config import GeneratorConfig
from aerial2ground.domain.models import (
    CameraMode,
    DiscFootprint,
    GroundCamera,
    ObjectClass,
    RectFootprint,
    SceneObject,
    SceneSpec,
)
from aerial2ground.errors import CameraError, ConfigError

logger = logging.getLogger(__name__)

_BASE_ALBEDO: dict[ObjectClass, tuple[float, float, float]] = {
    ObjectClass.GROUND: (0.55, 0.50, 0.38),
    ObjectClass.ROAD: (0.30, 0.30, 0.32),
    ObjectClass.TREE: (0.18, 0.45, 0.16),
}
_BUILDING_PALETTE = (
    (0.75, 0.70, 0.65),
    (0.62, 0.36, 0.30),
    (0.82, 0.82, 0.80),
    (0.45, 0.46, 0.56),
)
_ALBEDO_JITTER = 0.06
_CLEARANCE_M = 1.0  # gap kept between placed objects and roads


def _albedo(rng: np.random.Generator, base: tuple[float, float, float]) -> tuple[float, float, float]:
    jitter = rng.uniform(-_ALBEDO_JITTER, _ALBEDO_JITTER, size=3)
    r, g, b = (float(np.clip(c + j, 0.0, 1.0)) for c, j in zip(base, jitter))
    return r, g, b


def _bbox_overlap(a: tuple[float, float, float, float], b: tuple[float, float, float, float], margin: float) -> bool:
    return not (
        a[2] + margin <= b[0] or b[2] + margin <= a[0] or a[3] + margin <= b[1] or b[3] + margin <= a[1]
    )


def _count(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def _roads(rng: np.random.Generator, config: GeneratorConfig) -> list[SceneObject]:
    extent, w = config.extent_m, config.road_width_m
    roads: list[SceneObject] = []
    # The main road runs east-west near the middle; cameras stand on it.
    yc = extent / 2 + float(rng.uniform(-extent / 8, extent / 8))
    yc = float(np.clip(yc, w / 2, extent - w / 2))
    roads.append(
        SceneObject(
            cls=ObjectClass.ROAD,
            footprint=RectFootprint(x0=0.0, y0=yc - w / 2, x1=extent, y1=yc + w / 2),
            height_m=0.0,
            albedo=_albedo(rng, _BASE_ALBEDO[ObjectClass.ROAD]),
        )
    )
    for _ in range(_count(rng, config.road_count) - 1):
        centre = float(rng.uniform(w / 2, extent - w / 2))
        if rng.random() < 0.5:
            fp = RectFootprint(x0=centre - w / 2, y0=0.0, x1=centre + w / 2, y1=extent)
        else:
            fp = RectFootprint(x0=0.0, y0=centre - w / 2, x1=extent, y1=centre + w / 2)
        roads.append(
            SceneObject(cls=ObjectClass.ROAD, footprint=fp, height_m=0.0, albedo=_albedo(rng, _BASE_ALBEDO[ObjectClass.ROAD]))
        )
    return roads


def _place(
    rng: np.random.Generator,
    config: GeneratorConfig,
    cls: ObjectClass,
    count: int,
    minimum: int,
    occupied: list[tuple[float, float, float, float]],
) -> list[SceneObject]:
    extent = config.extent_m
    placed: list[SceneObject] = []
    attempts = 0
    while len(placed) < count and attempts < config.placement_attempts * max(count, 1):
        attempts += 1
        if cls is ObjectClass.BUILDING:
            sx, sy = rng.uniform(*config.building_size_m, size=2)
            x0 = float(rng.uniform(0.0, extent - sx))
            y0 = float(rng.uniform(0.0, extent - sy))
            fp: RectFootprint | DiscFootprint = RectFootprint(x0=x0, y0=y0, x1=x0 + float(sx), y1=y0 + float(sy))
            height = float(rng.uniform(*config.building_height_m))
            albedo = _albedo(rng, _BUILDING_PALETTE[int(rng.integers(len(_BUILDING_PALETTE)))])
        else:
            r = float(rng.uniform(*config.tree_radius_m))
            cx = float(rng.uniform(r, extent - r))
            cy = float(rng.uniform(r, extent - r))
            fp = DiscFootprint(cx=cx, cy=cy, r=r)
            height = float(rng.uniform(*config.tree_height_m))
            albedo = _albedo(rng, _BASE_ALBEDO[ObjectClass.TREE])
        box = fp.bounds()
        if any(_bbox_overlap(box, other, _CLEARANCE_M) for other in occupied):
            continue
        occupied.append(box)
        placed.append(SceneObject(cls=cls, footprint=fp, height_m=height, albedo=albedo))
    if len(placed) < minimum:
        raise ConfigError(
            f"could only place {len(placed)} of at least {minimum} {cls.value} objects; "
            "reduce counts or sizes, or enlarge extent_m"
        )
    return placed


def generate_scene(seed: int, config: GeneratorConfig) -> SceneSpec:
    """Draw a deterministic scene: ground plane, roads, buildings, trees."""
    config.check()
    rng = np.random.default_rng(seed)
    extent = config.extent_m

    ground = SceneObject(
        cls=ObjectClass.GROUND,
        footprint=RectFootprint(x0=0.0, y0=0.0, x1=extent, y1=extent),
        height_m=0.0,
        albedo=_albedo(rng, _BASE_ALBEDO[ObjectClass.GROUND]),
    )
    roads = _roads(rng, config)
    occupied = [r.footprint.bounds() for r in roads]
    n_buildings = _count(rng, config.building_count)
    n_trees = _count(rng, config.tree_count)
    buildings = _place(rng, config, ObjectClass.BUILDING, n_buildings, config.building_count[0], occupied)
    trees = _place(rng, config, ObjectClass.TREE, n_trees, config.tree_count[0], occupied)

    scene = SceneSpec(seed=seed, extent_m=extent, objects=[ground, *roads, *buildings, *trees])
    logger.debug("scene %d: %d roads, %d buildings, %d trees", seed, len(roads), len(buildings), len(trees))
    return scene


def on_road(scene: SceneSpec, x: float, y: float) -> bool:
    return any(obj.footprint.contains(x, y) for _, obj in scene.of_class(ObjectClass.ROAD))


def place_camera(scene: SceneSpec, config: GeneratorConfig, seed: int | None = None) -> GroundCamera:
    """Draw a camera on the main road's centre line with the canonical yaw."""
    roads = scene.of_class(ObjectClass.ROAD)
    if not roads:
        raise CameraError("scene has no road to stand on")
    rng = np.random.default_rng([scene.seed if seed is None else seed, 1])
    x0, y0, x1, y1 = roads[0][1].footprint.bounds()
    half_w = config.road_width_m / 2
    along = float(rng.uniform(-config.camera_jitter_m, config.camera_jitter_m))
    if (x1 - x0) >= (y1 - y0):
        x = float(np.clip((x0 + x1) / 2 + along, x0 + half_w, x1 - half_w))
        y = (y0 + y1) / 2
    else:
        x = (x0 + x1) / 2
        y = float(np.clip((y0 + y1) / 2 + along, y0 + half_w, y1 - half_w))
    yaw = config.camera_yaw + float(rng.uniform(-config.camera_yaw_jitter, config.camera_yaw_jitter))
    mode = config.ground_mode
    return GroundCamera(
        x=x,
        y=y,
        eye_height_m=config.eye_height_m,
        yaw=yaw,
        mode=mode,
        hfov=config.hfov if mode is CameraMode.PERSPECTIVE else None,
    )
