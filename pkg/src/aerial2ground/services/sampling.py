"""
Sampling service: generate one ground view per sample of a dataset split.

Writes `<id>.png` into the output directory and `run.json` with the
provenance (checkpoint hash, guidance scale, steps, seed and the height
perturbation) needed to reproduce the run.
"""

import json
import logging
from pathlib import Path

from aerial2ground import checkpoints
from aerial2ground.diffusion.sampler import Sampler
from aerial2ground.diffusion.schedule import schedule_for
from aerial2ground.domain.config import DiffusionConfig
from aerial2ground.domain.requests import SampleRequest, SampleRun
from aerial2ground.errors import DataError, IoError
from aerial2ground.models.tensors import select_device
from aerial2ground.scene.dataset import dataset_hash, read_dataset, write_png

logger = logging.getLogger(__name__)

RUN = "run.json"


class SamplingService:
    def __init__(self, device: str | None = None) -> None:
        self.device = select_device(device)

    def load(self, ckpt_dir: Path, ground_shape: tuple[int, int]) -> tuple[Sampler, DiffusionConfig]:
        model, manifest = checkpoints.load_denoiser(ckpt_dir)
        cfg = DiffusionConfig.model_validate(manifest.config)
        prereq = checkpoints.prerequisites_dir(ckpt_dir)
        codec = checkpoints.load_codec(prereq).to(self.device)
        semantic = checkpoints.load_semantic(prereq).to(self.device) if cfg.denoiser.use_clip else None
        sampler = Sampler(model.to(self.device), codec, semantic, schedule_for(cfg), ground_shape)
        return sampler, cfg

    def sample(self, request: SampleRequest) -> SampleRun:
        data_dir = Path(request.data_dir)
        samples = read_dataset(data_dir, request.split)[: request.limit]
        if not samples:
            raise DataError(f"no {request.split} samples in {data_dir}")
        ground_shape = samples[0].ground.pixels.shape[:2]
        sampler, cfg = self.load(Path(request.ckpt_dir), ground_shape)
        logger.info(
            "Sampling %d views: scale %.2f, %d steps, seed %d, no_height=%s, height noise %.3f",
            len(samples),
            request.guidance_scale,
            request.steps,
            request.seed,
            request.no_height,
            request.height_noise_sigma,
        )

        views = sampler.generate(
            samples,
            scale=request.guidance_scale,
            steps=request.steps,
            seed=request.seed,
            no_height=request.no_height,
            height_noise_sigma=request.height_noise_sigma,
            batch_size=request.batch_size,
        )

        out = Path(request.out_dir)
        run = SampleRun(
            ids=[v.id for v in views],
            checkpoint_hash=checkpoints.checkpoint_hash(Path(request.ckpt_dir)),
            config_hash=checkpoints.read_stage_manifest(Path(request.ckpt_dir), "diffusion").config_hash,
            data_hash=dataset_hash(data_dir),
            guidance_scale=request.guidance_scale,
            steps=request.steps,
            seed=request.seed,
            no_height=request.no_height,
            height_noise_sigma=request.height_noise_sigma,
            mean_seconds_per_image=sum(v.seconds for v in views) / len(views),
        )
        try:
            out.mkdir(parents=True, exist_ok=True)
            for view in views:
                write_png(out / f"{view.id}.png", view.pixels)
            (out / RUN).write_text(json.dumps(run.model_dump(mode="json"), indent=2, sort_keys=True))
        except OSError as exc:
            raise IoError(f"cannot write samples to {out}: {exc}") from exc
        logger.info("Wrote %d views to %s (%.3f s/image, T=%d)", len(views), out, run.mean_seconds_per_image, cfg.timesteps)
        return run
