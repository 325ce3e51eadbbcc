"""Assemble PairedSamples from scene seeds; optionally across worker processes."""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from aerial2ground.domain.config import DatasetConfig, GeneratorConfig
from aerial2ground.domain.samples import PairedSample
from aerial2ground.scene.dataset import Split
from aerial2ground.scene.generator import generate_scene, place_camera
from aerial2ground.scene.render import analytic_height, render_aerial, render_ground, scene_class_of

logger = logging.getLogger(__name__)


def scene_seed_for(base_seed: int, index: int) -> int:
    """Stable per-sample scene seed derived from the dataset seed."""
    return int(np.random.SeedSequence(entropy=base_seed, spawn_key=(index,)).generate_state(1)[0])


def sample_id_for(index: int) -> str:
    return f"{index:06d}"


def make_sample(sample_id: str, scene_seed: int, config: GeneratorConfig) -> PairedSample:
    """Render aerial, height and ground views from one scene and one camera draw."""
    scene = generate_scene(scene_seed, config)
    camera = place_camera(scene, config)
    ground = render_ground(
        scene,
        camera,
        config.ground_shape,
        sky_albedo=config.sky_albedo,
        distance_fade_m=config.distance_fade_m,
        debug=True,
    )
    label = scene_class_of(scene, ground.object_ids, config.open_threshold)  # type: ignore[arg-type]
    return PairedSample(
        id=sample_id,
        aerial=render_aerial(scene, config.aerial_resolution, raster_grid=config.raster_grid),
        height=analytic_height(scene, config.aerial_resolution, config.normalization),
        ground=ground.model_copy(update={"object_ids": None}),
        scene_seed=scene_seed,
        scene_class=label,
    )


def _make(args: tuple[str, int, GeneratorConfig]) -> PairedSample:
    return make_sample(*args)


def generate_samples(
    dataset: DatasetConfig, generator: GeneratorConfig
) -> tuple[list[PairedSample], dict[str, Split]]:
    """All train then test samples, ordered by index, plus the split map."""
    total = dataset.n_train + dataset.n_test
    jobs = [(sample_id_for(i), scene_seed_for(dataset.seed, i), generator) for i in range(total)]
    if dataset.workers > 1:
        with ProcessPoolExecutor(max_workers=dataset.workers) as pool:
            samples = list(pool.map(_make, jobs, chunksize=32))
    else:
        samples = [_make(job) for job in jobs]
    splits: dict[str, Split] = {
        s.id: ("train" if i < dataset.n_train else "test") for i, s in enumerate(samples)
    }
    logger.info("Generated %d train / %d test samples", dataset.n_train, dataset.n_test)
    return samples, splits
