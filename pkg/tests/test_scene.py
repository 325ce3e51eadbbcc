import math

import numpy as np
import pytest

from aerial2ground.domain.config import GeneratorConfig
from aerial2ground.domain.models import (
    CameraMode,
    DiscFootprint,
    GroundCamera,
    HeightNormalization,
    ObjectClass,
    RectFootprint,
    SceneObject,
    SceneSpec,
)
from aerial2ground.domain.samples import HeightMap
from aerial2ground.errors import CameraError, ConfigError
from aerial2ground.scene.generator import generate_scene, on_road, place_camera
from aerial2ground.scene.render import (
    SKY_ID,
    analytic_height,
    perturb_height,
    render_aerial,
    render_ground,
    render_object_ids,
    view_consistency_violations,
)

GROUND = SceneObject(
    cls=ObjectClass.GROUND,
    footprint=RectFootprint(x0=0.0, y0=0.0, x1=64.0, y1=64.0),
    height_m=0.0,
    albedo=(0.5, 0.4, 0.3),
)
ROAD = SceneObject(
    cls=ObjectClass.ROAD,
    footprint=RectFootprint(x0=0.0, y0=29.0, x1=64.0, y1=35.0),
    height_m=0.0,
    albedo=(0.3, 0.3, 0.3),
)


def building(x0, y0, x1, y1, height, albedo=(0.9, 0.1, 0.1)):
    return SceneObject(
        cls=ObjectClass.BUILDING,
        footprint=RectFootprint(x0=x0, y0=y0, x1=x1, y1=y1),
        height_m=height,
        albedo=albedo,
    )


def scene_of(*objects):
    return SceneSpec(seed=0, extent_m=64.0, objects=[GROUND, ROAD, *objects])


def north_camera(mode=CameraMode.PERSPECTIVE, yaw=math.pi / 2):
    return GroundCamera(
        x=32.0, y=32.0, yaw=yaw, mode=mode, hfov=math.pi / 2 if mode is CameraMode.PERSPECTIVE else None
    )


# ── generate_scene ───────────────────────────────────────────────────


def test_generate_scene_is_deterministic():
    config = GeneratorConfig()
    assert generate_scene(7, config).model_dump_json() == generate_scene(7, config).model_dump_json()


def test_generate_scene_depends_on_seed():
    config = GeneratorConfig()
    assert generate_scene(7, config).objects != generate_scene(8, config).objects


def test_generated_objects_respect_bounds():
    config = GeneratorConfig()
    scene = generate_scene(11, config)
    buildings = scene.of_class(ObjectClass.BUILDING)
    trees = scene.of_class(ObjectClass.TREE)
    assert config.building_count[0] <= len(buildings) <= config.building_count[1]
    assert config.tree_count[0] <= len(trees) <= config.tree_count[1]
    assert all(3.0 <= o.height_m <= 30.0 for _, o in buildings)
    assert all(2.0 <= o.height_m <= 15.0 for _, o in trees)
    for obj in scene.objects:
        x0, y0, x1, y1 = obj.footprint.bounds()
        assert 0.0 <= x0 and x1 <= scene.extent_m and 0.0 <= y0 and y1 <= scene.extent_m


def test_flat_config_gives_flat_scene():
    config = GeneratorConfig(building_count=(0, 0), tree_count=(0, 0))
    scene = generate_scene(3, config)
    assert {o.cls for o in scene.objects} <= {ObjectClass.GROUND, ObjectClass.ROAD}
    for normalization in HeightNormalization:
        assert not analytic_height(scene, 64, normalization).values.any()


@pytest.mark.parametrize(
    "overrides",
    [
        {"building_count": (3, 1)},
        {"road_count": (0, 0)},
        {"aerial_resolution": 0},
        {"tree_height_m": (0.0, 5.0)},
    ],
)
def test_generate_scene_rejects_bad_config(overrides):
    with pytest.raises(ConfigError):
        generate_scene(0, GeneratorConfig(**overrides))


def test_camera_is_placed_on_the_main_road():
    config = GeneratorConfig(camera_jitter_m=20.0)
    for seed in range(20):
        scene = generate_scene(seed, config)
        camera = place_camera(scene, config)
        assert on_road(scene, camera.x, camera.y)
        assert camera.yaw == pytest.approx(config.camera_yaw)
        assert camera.eye_height_m == 1.6


# ── render_aerial ────────────────────────────────────────────────────


def test_ground_only_scene_renders_constant_albedo():
    scene = SceneSpec(seed=0, extent_m=64.0, objects=[GROUND])
    image = render_aerial(scene, 32).pixels
    assert image.shape == (32, 32, 3)
    np.testing.assert_allclose(image, np.broadcast_to(GROUND.albedo, image.shape), atol=1e-6)


def test_centred_building_block_matches_footprint():
    scene = SceneSpec(seed=0, extent_m=64.0, objects=[GROUND, building(27.0, 27.0, 37.0, 37.0, 10.0)])
    image = render_aerial(scene, 64).pixels
    rows, cols = np.nonzero(np.all(np.abs(image - np.array([0.9, 0.1, 0.1])) < 1e-6, axis=-1))
    # 1 px per metre: a 10 m square covers 10 ± 1 rows and columns around the centre.
    assert 9 <= rows.max() - rows.min() + 1 <= 11
    assert 9 <= cols.max() - cols.min() + 1 <= 11
    assert abs((rows.min() + rows.max()) / 2 - 31.5) <= 1
    assert abs((cols.min() + cols.max()) / 2 - 31.5) <= 1


def test_aerial_render_is_resolution_consistent():
    scene = generate_scene(5, GeneratorConfig())
    fine = render_aerial(scene, 64).pixels.astype(np.float64)
    coarse = render_aerial(scene, 32).pixels
    downsampled = fine.reshape(32, 2, 32, 2, 3).mean(axis=(1, 3))
    assert np.abs(downsampled - coarse).max() <= 1 / 255


@pytest.mark.parametrize("res", [4, 48])
def test_render_aerial_rejects_bad_resolution(res):
    with pytest.raises(ConfigError):
        render_aerial(scene_of(), res)


# ── analytic_height ──────────────────────────────────────────────────


def test_single_building_unit_scaled_height():
    scene = scene_of(building(16.0, 40.0, 32.0, 56.0, 12.0))
    heights = analytic_height(scene, 64, HeightNormalization.UNIT_SCALED).values
    ids = render_object_ids(scene, 64)
    assert set(np.unique(heights).tolist()) == {0.0, 1.0}
    np.testing.assert_array_equal(heights == 1.0, ids == 2)


def test_overlap_takes_the_taller_object():
    tree = SceneObject(
        cls=ObjectClass.TREE, footprint=DiscFootprint(cx=40.0, cy=48.0, r=6.0), height_m=6.0, albedo=(0.2, 0.5, 0.2)
    )
    scene = scene_of(building(30.0, 40.0, 40.0, 56.0, 12.0), tree)
    heights = analytic_height(scene, 64, HeightNormalization.RAW_M).values
    # Pixel (15, 38) is centred on world (38.5, 48.5), inside both footprints.
    assert heights[15, 38] == 12.0
    assert heights.max() == 12.0
    assert 6.0 in np.unique(heights)


def test_height_argmax_lies_in_tallest_footprint():
    scene = generate_scene(9, GeneratorConfig())
    heights = analytic_height(scene, 64).values
    ids = render_object_ids(scene, 64)
    tallest = max(range(len(scene.objects)), key=lambda i: scene.objects[i].height_m)
    rows, cols = np.nonzero(heights == heights.max())
    assert (ids[rows, cols] == tallest).all()


# ── render_ground ────────────────────────────────────────────────────


def test_empty_scene_is_sky_over_ground():
    view = render_ground(scene_of(), north_camera(), (32, 32), distance_fade_m=None, debug=True)
    sky = np.array(view.pixels[:16])
    np.testing.assert_allclose(sky, np.broadcast_to((0.62, 0.75, 0.92), sky.shape), atol=1e-6)
    assert (view.object_ids[:16] == SKY_ID).all()
    below = view.object_ids[16:]
    assert set(np.unique(below).tolist()) <= {0, 1}
    # Far below-horizon rows land on open ground, the nearest rows on the road under the camera.
    assert (view.object_ids[16] == 0).all()
    assert (view.object_ids[-1] == 1).all()
    np.testing.assert_allclose(view.pixels[16, 0], GROUND.albedo, atol=1e-6)


def test_building_due_north_spans_projected_width():
    scene = scene_of(building(30.0, 45.0, 34.0, 55.0, 20.0))
    view = render_ground(scene, north_camera(), (64, 64), debug=True)
    cols = np.nonzero(view.object_ids[31] == 2)[0]
    assert cols.size > 0
    assert (np.diff(cols) == 1).all()
    # Pinhole projection with f = 32 px of a 4 m face 13 m ahead.
    expected = 2 * 32 * 2 / 13
    assert abs(cols.size - expected) <= 1
    assert abs((cols.min() + cols.max() + 1) / 2 - 32) <= 1


def test_panorama_half_turn_is_a_circular_shift():
    scene = scene_of(building(30.0, 45.0, 34.0, 55.0, 20.0), building(5.0, 5.0, 15.0, 20.0, 8.0))
    res = (16, 64)
    a = render_ground(scene, north_camera(CameraMode.PANORAMA, math.pi / 2), res).pixels
    b = render_ground(scene, north_camera(CameraMode.PANORAMA, math.pi / 2 + math.pi), res).pixels
    assert a.shape == (16, 64, 3)
    np.testing.assert_array_equal(b, np.roll(a, 32, axis=1))


def test_panorama_columns_sweep_clockwise_from_yaw():
    scene = scene_of(building(30.0, 45.0, 34.0, 55.0, 20.0))
    # Left edge faces west; north is a quarter turn to the right.
    view = render_ground(scene, north_camera(CameraMode.PANORAMA, math.pi), (16, 64), debug=True)
    cols = np.nonzero(view.object_ids[7] == 2)[0]
    assert cols.size > 0
    assert abs(cols.mean() - 16) <= 1


def test_render_ground_is_deterministic():
    scene = generate_scene(2, GeneratorConfig())
    camera = place_camera(scene, GeneratorConfig())
    a = render_ground(scene, camera, (64, 64)).pixels
    b = render_ground(scene, camera, (64, 64)).pixels
    np.testing.assert_array_equal(a, b)


def test_off_road_camera_is_rejected():
    camera = GroundCamera(x=32.0, y=10.0, yaw=0.0, mode=CameraMode.PERSPECTIVE, hfov=1.0)
    with pytest.raises(CameraError):
        render_ground(scene_of(), camera, (32, 32))


def test_ground_view_objects_appear_from_above():
    config = GeneratorConfig()
    for seed in range(5):
        scene = generate_scene(seed, config)
        view = render_ground(scene, place_camera(scene, config), config.ground_shape, debug=True)
        assert view_consistency_violations(scene, view.object_ids, config.aerial_resolution) == set()


# ── perturb_height ───────────────────────────────────────────────────


def test_zero_sigma_returns_input():
    h = analytic_height(generate_scene(1, GeneratorConfig()), 64)
    assert perturb_height(h, 0.0, seed=3) is h


def test_perturbed_unit_map_stays_in_range():
    h = analytic_height(generate_scene(1, GeneratorConfig()), 64)
    noisy = perturb_height(h, 0.2, seed=3).values
    assert noisy.min() >= 0.0 and noisy.max() <= 1.0
    assert not np.array_equal(noisy, h.values)


def test_perturbed_flat_map_matches_clamped_normal_mean():
    flat = HeightMap(values=np.zeros((128, 128), dtype=np.float32), normalization=HeightNormalization.UNIT_SCALED)
    noisy = perturb_height(flat, 0.2, seed=0).values
    assert noisy.mean() == pytest.approx(0.2 / math.sqrt(2 * math.pi), abs=0.005)


def test_negative_sigma_is_rejected():
    h = analytic_height(scene_of(), 32)
    with pytest.raises(ConfigError):
        perturb_height(h, -0.1, seed=0)
