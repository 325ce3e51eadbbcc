"""
Renderers for the three aligned views of a SceneSpec.

- `render_aerial`: orthographic top-down colour, area-averaged from a fixed
  fine raster so that renders at different resolutions agree after block
  downsampling.
- `analytic_height`: exact per-pixel heights, one orthographic ray per pixel
  centre (replaces a learned height estimator).
- `render_ground`: flat-shaded ray caster for perspective crops and 360°
  panoramas, with distance fade toward the constant sky colour.

The topmost rule everywhere: highest `height_m` wins, ties broken by layer
(ground < road < tree < building), then by object index.
"""

import math

import numpy as np

from aerial2ground.domain.models import (
    CameraMode,
    DiscFootprint,
    GroundCamera,
    HeightNormalization,
    ObjectClass,
    RectFootprint,
    SceneClass,
    SceneSpec,
)
from aerial2ground.domain.samples import AerialImage, GroundView, HeightMap
from aerial2ground.errors import CameraError, ConfigError
from aerial2ground.scene.generator import on_road

SKY_ID = -1
DEFAULT_SKY = (0.62, 0.75, 0.92)

# Flat shading factors per face orientation.
_SHADE_X_FACE = 0.78
_SHADE_Y_FACE = 1.0
_SHADE_TREE = 0.9


def _paint_order(scene: SceneSpec) -> list[int]:
    return sorted(range(len(scene.objects)), key=lambda i: (scene.objects[i].height_m, scene.objects[i].cls.layer, i))


def _footprint_mask(fp: RectFootprint | DiscFootprint, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if isinstance(fp, RectFootprint):
        return (xs >= fp.x0) & (xs <= fp.x1) & (ys >= fp.y0) & (ys <= fp.y1)
    return (xs - fp.cx) ** 2 + (ys - fp.cy) ** 2 <= fp.r**2


def _pixel_centres(extent: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    step = extent / n
    xs = (np.arange(n) + 0.5) * step
    ys = extent - (np.arange(n) + 0.5) * step  # row 0 is the north edge
    return np.meshgrid(xs, ys)


def render_object_ids(scene: SceneSpec, res: int) -> np.ndarray:
    """Topmost object index under each pixel centre (res×res, int32)."""
    xs, ys = _pixel_centres(scene.extent_m, res)
    ids = np.full((res, res), SKY_ID, dtype=np.int32)
    for idx in _paint_order(scene):
        ids[_footprint_mask(scene.objects[idx].footprint, xs, ys)] = idx
    return ids


def _albedo_table(scene: SceneSpec) -> np.ndarray:
    return np.array([obj.albedo for obj in scene.objects], dtype=np.float64).reshape(-1, 3)


def render_aerial(scene: SceneSpec, res: int, *, raster_grid: int = 256) -> AerialImage:
    if res < 8:
        raise ConfigError(f"aerial resolution must be at least 8, got {res}")
    if raster_grid % res != 0:
        raise ConfigError(f"aerial resolution {res} must divide the raster grid {raster_grid}")
    k = raster_grid // res
    ids = render_object_ids(scene, raster_grid)
    fine = _albedo_table(scene)[ids]
    pixels = fine.reshape(res, k, res, k, 3).mean(axis=(1, 3))
    return AerialImage(pixels=np.clip(pixels, 0.0, 1.0).astype(np.float32))


def analytic_height(
    scene: SceneSpec,
    res: int,
    normalization: HeightNormalization = HeightNormalization.UNIT_SCALED,
) -> HeightMap:
    ids = render_object_ids(scene, res)
    heights = np.array([obj.height_m for obj in scene.objects], dtype=np.float64)[ids]
    if normalization is HeightNormalization.UNIT_SCALED:
        top = heights.max(initial=0.0)
        if top > 0.0:
            heights = heights / top
    return HeightMap(values=heights.astype(np.float32), normalization=normalization)


def perturb_height(h: HeightMap, sigma: float, seed: int) -> HeightMap:
    """Add i.i.d. N(0, sigma²) noise per pixel, then clamp to the valid range."""
    if sigma < 0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return h
    rng = np.random.default_rng(seed)
    noisy = h.values.astype(np.float64) + rng.normal(0.0, sigma, size=h.values.shape)
    return HeightMap(values=np.clip(noisy, 0.0, h.upper_bound).astype(np.float32), normalization=h.normalization)


# ── Ground view ray casting ─────────────────────────────────────────


def _perspective_rays(camera: GroundCamera, h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    f = (w / 2) / math.tan(camera.hfov / 2)  # type: ignore[operator]
    u = (np.arange(w) + 0.5) - w / 2  # + right
    v = h / 2 - (np.arange(h) + 0.5)  # + up
    fx, fy = math.cos(camera.yaw), math.sin(camera.yaw)
    rx, ry = math.sin(camera.yaw), -math.cos(camera.yaw)
    vx = f * fx + u * rx
    vy = f * fy + u * ry
    length = np.sqrt(f * f + u * u)
    hx = np.broadcast_to(vx / length, (h, w))
    hy = np.broadcast_to(vy / length, (h, w))
    slope = v[:, None] / length[None, :]
    return hx, hy, slope


def _panorama_rays(yaw: float, h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Column 0 looks along yaw; columns sweep clockwise, left to right as in the perspective view.
    az = yaw - 2 * math.pi * np.arange(w) / w
    el = (h / 2 - (np.arange(h) + 0.5)) * (2 * math.pi / w)
    hx = np.broadcast_to(np.cos(az), (h, w))
    hy = np.broadcast_to(np.sin(az), (h, w))
    slope = np.broadcast_to(np.tan(el)[:, None], (h, w))
    return hx, hy, slope


def _panorama_shift(yaw: float, w: int) -> tuple[int, float]:
    """Split yaw into a whole-column roll and a sub-column remainder."""
    q = yaw / (2 * math.pi) * w
    m = round(q)
    if abs(q - m) <= 1e-9:
        return m, 0.0
    m = math.floor(q)
    return m, (q - m) * (2 * math.pi / w)


def _flat_ids(scene: SceneSpec, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    ground = scene.of_class(ObjectClass.GROUND)
    ids = np.full(gx.shape, ground[0][0] if ground else SKY_ID, dtype=np.int32)
    for idx, obj in scene.of_class(ObjectClass.ROAD):
        ids[_footprint_mask(obj.footprint, gx, gy)] = idx
    return ids


def _cast(
    scene: SceneSpec, camera: GroundCamera, hx: np.ndarray, hy: np.ndarray, slope: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hit distance, object id and face shade per ray."""
    cx, cy, eye = camera.x, camera.y, camera.eye_height_m
    t_hit = np.full(hx.shape, np.inf)
    ids = np.full(hx.shape, SKY_ID, dtype=np.int32)
    shade = np.ones(hx.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        for idx, obj in enumerate(scene.objects):
            if obj.cls.is_flat:
                continue
            fp = obj.footprint
            if isinstance(fp, RectFootprint):
                tx0, tx1 = (fp.x0 - cx) / hx, (fp.x1 - cx) / hx
                ty0, ty1 = (fp.y0 - cy) / hy, (fp.y1 - cy) / hy
                txmin, tymin = np.minimum(tx0, tx1), np.minimum(ty0, ty1)
                t_enter = np.maximum(txmin, tymin)
                t_exit = np.minimum(np.maximum(tx0, tx1), np.maximum(ty0, ty1))
                face = np.where(txmin > tymin, _SHADE_X_FACE, _SHADE_Y_FACE)
            else:
                dx, dy = cx - fp.cx, cy - fp.cy
                b = hx * dx + hy * dy
                disc = b * b - (dx * dx + dy * dy - fp.r**2)
                root = np.sqrt(np.where(disc >= 0, disc, np.nan))
                t_enter, t_exit = -b - root, -b + root
                face = np.full(hx.shape, _SHADE_TREE)
            valid = (t_enter <= t_exit) & (t_enter > 0)
            z_enter = eye + t_enter * slope
            side = valid & (z_enter >= 0) & (z_enter <= obj.height_m)
            t_top = (obj.height_m - eye) / slope
            top = valid & (z_enter > obj.height_m) & (slope < 0) & (t_top >= t_enter) & (t_top <= t_exit)
            t_obj = np.where(side, t_enter, np.where(top, t_top, np.inf))
            closer = t_obj < t_hit
            t_hit = np.where(closer, t_obj, t_hit)
            ids = np.where(closer, idx, ids)
            shade = np.where(closer, np.where(side, face, 1.0), shade)

        t_ground = np.where(slope < 0, eye / -slope, np.inf)
    closer = t_ground < t_hit
    gx = np.where(closer, cx + t_ground * hx, 0.0)
    gy = np.where(closer, cy + t_ground * hy, 0.0)
    ground_ids = _flat_ids(scene, gx, gy)
    t_hit = np.where(closer, t_ground, t_hit)
    ids = np.where(closer, ground_ids, ids)
    shade = np.where(closer, 1.0, shade)
    return t_hit, ids.astype(np.int32), shade


def render_ground(
    scene: SceneSpec,
    camera: GroundCamera,
    res: tuple[int, int],
    *,
    sky_albedo: tuple[float, float, float] = DEFAULT_SKY,
    distance_fade_m: float | None = 150.0,
    debug: bool = False,
) -> GroundView:
    """Ray-cast the street-level view; `debug` attaches the object-id buffer."""
    if not on_road(scene, camera.x, camera.y):
        raise CameraError(f"camera at ({camera.x:.2f}, {camera.y:.2f}) is not on a road")
    h, w = res
    if h <= 0 or w <= 0:
        raise ConfigError(f"ground resolution must be positive, got {res}")

    roll = 0
    if camera.mode is CameraMode.PERSPECTIVE:
        if camera.hfov is None or not (0.0 < camera.hfov < math.pi):
            raise CameraError("perspective cameras need hfov in (0, pi)")
        hx, hy, slope = _perspective_rays(camera, h, w)
    else:
        roll, yaw = _panorama_shift(camera.yaw, w)
        hx, hy, slope = _panorama_rays(yaw, h, w)

    t_hit, ids, shade = _cast(scene, camera, hx, hy, slope)
    sky = np.asarray(sky_albedo, dtype=np.float64)
    table = np.vstack([_albedo_table(scene), sky[None, :]])
    colour = table[np.where(ids == SKY_ID, len(scene.objects), ids)] * shade[..., None]
    if distance_fade_m is not None:
        k = np.exp(-np.where(np.isfinite(t_hit), t_hit, 0.0) / distance_fade_m)[..., None]
        colour = colour * k + sky * (1.0 - k)
    colour = np.where((ids == SKY_ID)[..., None], sky, colour)

    if roll:
        colour = np.roll(colour, roll, axis=1)
        ids = np.roll(ids, roll, axis=1)
    return GroundView(
        pixels=np.clip(colour, 0.0, 1.0).astype(np.float32),
        camera=camera,
        object_ids=ids if debug else None,
    )


# ── Derived labels and consistency checks ───────────────────────────


def scene_class_of(scene: SceneSpec, ground_ids: np.ndarray, open_threshold: float = 0.05) -> SceneClass:
    """Dominant vertical object class in a ground view."""
    classes = np.array([obj.cls.layer for obj in scene.objects] + [-1])
    layers = classes[np.where(ground_ids == SKY_ID, len(scene.objects), ground_ids)]
    n_building = int((layers == ObjectClass.BUILDING.layer).sum())
    n_tree = int((layers == ObjectClass.TREE.layer).sum())
    if (n_building + n_tree) < open_threshold * ground_ids.size:
        return SceneClass.OPEN
    return SceneClass.BUILDING if n_building >= n_tree else SceneClass.TREE


def view_consistency_violations(scene: SceneSpec, ground_ids: np.ndarray, aerial_res: int) -> set[int]:
    """Objects visible from the street that never appear in the aerial id buffer."""
    aerial_ids = set(np.unique(render_object_ids(scene, aerial_res)).tolist())
    ground_seen = set(np.unique(ground_ids).tolist()) - {SKY_ID}
    return ground_seen - aerial_ids
