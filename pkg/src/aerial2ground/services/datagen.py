"""Dataset generation service (gen-data)."""

import logging
from pathlib import Path

from aerial2ground.domain.config import ExperimentConfig
from aerial2ground.domain.provenance import config_hash
from aerial2ground.scene.dataset import MANIFEST, DatasetManifest, read_manifest, write_dataset
from aerial2ground.scene.pipeline import generate_samples

logger = logging.getLogger(__name__)


def data_config_hash(config: ExperimentConfig) -> str:
    """Hash of the sections that determine the dataset contents."""
    return config_hash(
        {
            "generator": config.generator.model_dump(mode="json"),
            "dataset": config.dataset.model_dump(mode="json", exclude={"workers"}),
        }
    )


class DatasetService:
    """Renders the paired dataset described by the generator and dataset sections."""

    def generate(self, config: ExperimentConfig, out_dir: Path) -> DatasetManifest:
        stamp = data_config_hash(config)
        logger.info(
            "Generating %d/%d samples (seed %d, config %s) into %s",
            config.dataset.n_train,
            config.dataset.n_test,
            config.dataset.seed,
            stamp[:12],
            out_dir,
        )
        samples, splits = generate_samples(config.dataset, config.generator)
        return write_dataset(samples, Path(out_dir), splits=splits, config_hash=stamp)

    def ensure(self, config: ExperimentConfig, out_dir: Path) -> DatasetManifest:
        """Reuse an existing dataset generated from the same sections."""
        out_dir = Path(out_dir)
        if (out_dir / MANIFEST).exists():
            manifest = read_manifest(out_dir)
            if manifest.config_hash == data_config_hash(config):
                logger.info("Reusing dataset in %s", out_dir)
                return manifest
        return self.generate(config, out_dir)

    @staticmethod
    def summary(manifest: DatasetManifest) -> dict[str, object]:
        return {
            "samples": len(manifest.ids),
            "train": len(manifest.ids_in("train")),
            "test": len(manifest.ids_in("test")),
            "config_hash": manifest.config_hash,
        }
