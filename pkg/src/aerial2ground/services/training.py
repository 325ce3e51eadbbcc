"""
Training service: one method per stage, all writing into a checkpoint directory.

Stages run in order codec → semantic → extractor → diffusion. The diffusion
stage needs the frozen codec (and the semantic encoder when the variant uses
it) and raises DependencyError naming whichever is missing. Diffusion
training saves a resume state every epoch and continues from it when the
stage config is unchanged.
"""

import logging
from pathlib import Path

import torch

from aerial2ground import checkpoints
from aerial2ground.checkpoints import StageManifest
from aerial2ground.diffusion.schedule import schedule_for
from aerial2ground.diffusion.trainer import DiffusionTrainer, encode_samples
from aerial2ground.domain.config import ExperimentConfig, SemanticConfig
from aerial2ground.domain.provenance import config_hash, weights_hash
from aerial2ground.domain.requests import TrainRequest, TrainStage
from aerial2ground.domain.samples import PairedSample
from aerial2ground.errors import Aerial2GroundError, DataError, DependencyError
from aerial2ground.models.classifier import train_extractor
from aerial2ground.models.codec import train_codec
from aerial2ground.models.semantic import train_semantic
from aerial2ground.models.tensors import select_device
from aerial2ground.scene.dataset import dataset_hash, read_dataset

logger = logging.getLogger(__name__)


class TrainingService:
    def __init__(self, device: str | None = None) -> None:
        self.device = select_device(device)

    def train(self, request: TrainRequest) -> StageManifest:
        handlers = {
            TrainStage.CODEC: self.train_codec,
            TrainStage.SEMANTIC: self.train_semantic,
            TrainStage.EXTRACTOR: self.train_extractor,
            TrainStage.DIFFUSION: self.train_diffusion,
        }
        return handlers[request.stage](request)

    def ensure(self, request: TrainRequest) -> StageManifest:
        """Train a stage unless an up-to-date checkpoint already exists."""
        stage = request.stage.value
        if checkpoints.has_stage(Path(request.out_dir), stage):
            manifest = checkpoints.read_stage_manifest(Path(request.out_dir), stage)
            if manifest.config_hash == self._stage_hash(request):
                logger.info("Reusing %s checkpoint in %s", stage, request.out_dir)
                return manifest
        return self.train(request)

    # ── Helpers ──────────────────────────────────────────────────

    @staticmethod
    def _section(config: ExperimentConfig, stage: TrainStage) -> dict:
        return getattr(config, stage.value).model_dump(mode="json")

    def _stage_hash(self, request: TrainRequest) -> str:
        fields = {
            "stage": self._section(request.config, request.stage),
            "data": dataset_hash(Path(request.data_dir)),
        }
        if request.stage is TrainStage.DIFFUSION:
            fields["prerequisites"] = self._prerequisite_hashes(request)
        return config_hash(fields)

    @staticmethod
    def _prerequisite_hashes(request: TrainRequest) -> dict[str, str | None]:
        """Weight hashes of the frozen encoders a diffusion run would load."""
        prereq = Path(request.prerequisites_dir or request.out_dir)
        stages = ["codec", "semantic"] if request.config.diffusion.denoiser.use_clip else ["codec"]
        return {
            stage: checkpoints.read_stage_manifest(prereq, stage).weights_hash
            if checkpoints.has_stage(prereq, stage)
            else None
            for stage in stages
        }

    @staticmethod
    def _train_split(data_dir: Path) -> list[PairedSample]:
        samples = read_dataset(data_dir, "train")
        if not samples:
            raise DataError(f"no training samples in {data_dir}")
        return samples

    def _finish(
        self,
        request: TrainRequest,
        module: torch.nn.Module,
        history: list[float],
        seed: int,
        **fields: object,
    ) -> StageManifest:
        out = Path(request.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv = checkpoints.write_loss_csv(
            out, request.stage.value, [(i + 1, v) for i, v in enumerate(history)], ["epoch", "train_loss"]
        )
        manifest = StageManifest(
            stage=request.stage.value,
            config=self._section(request.config, request.stage),
            config_hash=self._stage_hash(request),
            weights_hash=weights_hash(module),
            data_hash=dataset_hash(Path(request.data_dir)),
            epochs=len(history),
            loss_csv=csv.name,
            seed=seed,
            **fields,
        )
        return checkpoints.save_stage(out, module.cpu(), manifest)

    # ── Stages ───────────────────────────────────────────────────

    def train_codec(self, request: TrainRequest) -> StageManifest:
        cfg = request.config.codec
        logger.info("Stage codec: seed %d, config %s", cfg.seed, config_hash(cfg)[:12])
        codec, history = train_codec(self._train_split(Path(request.data_dir)), cfg, device=self.device)
        return self._finish(request, codec, history, cfg.seed)

    def train_semantic(self, request: TrainRequest) -> StageManifest:
        cfg = request.config.semantic
        logger.info("Stage semantic: seed %d, config %s", cfg.seed, config_hash(cfg)[:12])
        encoder, history = train_semantic(self._train_split(Path(request.data_dir)), cfg, device=self.device)
        return self._finish(request, encoder, history, cfg.seed)

    def train_extractor(self, request: TrainRequest) -> StageManifest:
        cfg = request.config.extractor
        logger.info("Stage extractor: seed %d, config %s", cfg.seed, config_hash(cfg)[:12])
        model, history = train_extractor(self._train_split(Path(request.data_dir)), cfg, device=self.device)
        return self._finish(request, model, history, cfg.seed)

    def train_diffusion(self, request: TrainRequest) -> StageManifest:
        cfg = request.config.diffusion
        out = Path(request.out_dir)
        prereq = Path(request.prerequisites_dir or request.out_dir)
        codec = checkpoints.load_codec(prereq)
        semantic = checkpoints.load_semantic(prereq) if cfg.denoiser.use_clip else None
        semantic_config = (
            checkpoints.read_stage_manifest(prereq, "semantic").config
            if checkpoints.has_stage(prereq, "semantic")
            else None
        )
        if semantic_config is None:
            if cfg.denoiser.use_clip:
                raise DependencyError("semantic")
            semantic_config = request.config.semantic.model_dump(mode="json")
        codec_hash = weights_hash(codec)
        semantic_hash = weights_hash(semantic) if semantic is not None else None

        train = self._train_split(Path(request.data_dir))
        held_out = read_dataset(Path(request.data_dir), "test")[: cfg.val_size]
        logger.info(
            "Stage diffusion: %d train / %d val samples, seed %d, variant clip=%s vae=%s height=%s",
            len(train),
            len(held_out),
            cfg.seed,
            cfg.denoiser.use_clip,
            cfg.denoiser.use_vae_cond,
            cfg.denoiser.use_height,
        )

        codec.to(self.device)
        if semantic is not None:
            semantic.to(self.device)
        model = checkpoints.build_denoiser(cfg, codec, SemanticConfig.model_validate(semantic_config))
        trainer = DiffusionTrainer(model.to(self.device), codec, semantic, schedule_for(cfg), cfg)
        stage_hash = self._stage_hash(request)

        out.mkdir(parents=True, exist_ok=True)
        state = checkpoints.load_resume_state(out) if request.resume else None
        if state is not None and state.get("config_hash") == stage_hash:
            trainer.load_state_dict(state)
            logger.info("Resuming diffusion training after epoch %d", trainer.epoch)

        train_set = encode_samples(train, codec, semantic, cfg)
        val_set = encode_samples(held_out, codec, semantic, cfg) if held_out else None

        def checkpoint_epoch(t: DiffusionTrainer) -> None:
            checkpoints.save_resume_state(out, {**t.state_dict(), "config_hash": stage_hash})
            checkpoints.write_loss_csv(out, "diffusion", t.history, ["epoch", "train_loss", "val_loss"])

        trainer.fit(train_set, val_set, cfg.epochs, on_epoch=checkpoint_epoch)
        csv = checkpoints.write_loss_csv(out, "diffusion", trainer.history, ["epoch", "train_loss", "val_loss"])

        if weights_hash(codec) != codec_hash or (semantic is not None and weights_hash(semantic) != semantic_hash):
            raise Aerial2GroundError("frozen encoder weights changed during diffusion training")

        manifest = StageManifest(
            stage="diffusion",
            config=cfg.model_dump(mode="json"),
            config_hash=stage_hash,
            weights_hash=weights_hash(trainer.model),
            data_hash=dataset_hash(Path(request.data_dir)),
            epochs=trainer.epoch,
            loss_csv=csv.name,
            seed=cfg.seed,
            prerequisites=str(prereq.resolve()) if prereq.resolve() != out.resolve() else None,
            codec_hash=codec_hash,
            semantic_hash=semantic_hash,
            schedule=cfg.schedule,
            timesteps=cfg.timesteps,
            p_drop=cfg.p_drop,
            extra={"optimizer": {"name": "AdamW", "lr": cfg.lr, "weight_decay": cfg.weight_decay}},
        )
        return checkpoints.save_stage(out, trainer.model.cpu(), manifest)
