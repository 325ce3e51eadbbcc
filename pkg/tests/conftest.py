"""Shared fixtures: tiny configurations, datasets and checkpoints."""

from pathlib import Path

import pytest

from aerial2ground.domain.config import ExperimentConfig, load_config
from aerial2ground.domain.requests import TrainRequest, TrainStage
from aerial2ground.services.datagen import DatasetService
from aerial2ground.services.factory import ServiceFactory
from aerial2ground.services.training import TrainingService

TINY = [
    "generator.aerial_resolution=32",
    "generator.ground_resolution=[32, 32]",
    "generator.building_count=[1, 2]",
    "generator.tree_count=[1, 2]",
    "dataset.n_train=8",
    "dataset.n_test=6",
    "codec.base_channels=8",
    "codec.epochs=1",
    "codec.batch_size=8",
    "codec.min_images=1",
    "semantic.patch_grid=2",
    "semantic.width=16",
    "semantic.layers=1",
    "semantic.heads=2",
    "semantic.epochs=1",
    "semantic.batch_size=8",
    "semantic.min_pairs=1",
    "extractor.channels=[4, 8, 8]",
    "extractor.epochs=1",
    "extractor.batch_size=8",
    "diffusion.timesteps=20",
    "diffusion.beta_end=0.5",
    "diffusion.epochs=1",
    "diffusion.batch_size=4",
    "diffusion.steps=5",
    "diffusion.val_size=2",
    "diffusion.denoiser.base_channels=8",
    "diffusion.denoiser.channel_mult=[1, 2]",
    "diffusion.denoiser.attention_levels=[1]",
    "diffusion.denoiser.heads=2",
    "eval.kid_subsets=2",
    "eval.kid_subset_size=3",
    "eval.is_splits=1",
    "eval.workers=1",
    "ablation.cfg_scales=[1.0, 2.0]",
    "ablation.height_noise_sigmas=[0.0, 0.2]",
]


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--run-pilot", action="store_true", default=False, help="run full-scale pilot tests")
    parser.addoption("--run-temporal", action="store_true", default=False, help="run tests needing Temporal")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    for marker, option in (("pilot", "--run-pilot"), ("temporal", "--run-temporal")):
        if config.getoption(option):
            continue
        skip = pytest.mark.skip(reason=f"needs {option}")
        for item in items:
            if marker in item.keywords:
                item.add_marker(skip)


@pytest.fixture(autouse=True)
def _fresh_services():
    ServiceFactory.configure("cpu")
    yield
    ServiceFactory.reset()


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return load_config(None, TINY)


@pytest.fixture(scope="session")
def tiny_session_config() -> ExperimentConfig:
    return load_config(None, TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory, tiny_session_config: ExperimentConfig) -> Path:
    root = tmp_path_factory.mktemp("data")
    DatasetService().generate(tiny_session_config, root)
    return root


@pytest.fixture(scope="session")
def tiny_checkpoints(
    tmp_path_factory: pytest.TempPathFactory, tiny_session_config: ExperimentConfig, tiny_dataset: Path
) -> Path:
    """Codec, semantic, extractor and a full-variant diffusion checkpoint in one directory."""
    ckpt = tmp_path_factory.mktemp("ckpt")
    service = TrainingService("cpu")
    for stage in TrainStage:
        service.train(
            TrainRequest(stage=stage, config=tiny_session_config, data_dir=str(tiny_dataset), out_dir=str(ckpt))
        )
    return ckpt
