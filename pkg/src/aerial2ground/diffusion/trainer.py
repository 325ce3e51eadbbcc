"""
Denoiser training: the ε-prediction L2 objective with joint condition dropout.

The codec and semantic encoder are frozen; only the denoiser (including its
null tokens) receives gradients. Because the encoders are frozen, the
trainer encodes the training set once into an `EncodedSet` and draws
t, ε and the drop mask from its own seeded generator every step.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from aerial2ground.diffusion.conditioning import assemble, encode_conditions, predict_noise
from aerial2ground.diffusion.schedule import NoiseSchedule, q_sample
from aerial2ground.domain.config import DiffusionConfig
from aerial2ground.domain.samples import PairedSample
from aerial2ground.errors import ConfigError, DataError
from aerial2ground.models.codec import LatentCodec
from aerial2ground.models.layers import freeze
from aerial2ground.models.semantic import SemanticEncoder
from aerial2ground.models.tensors import heights_to_tensor, images_to_tensor
from aerial2ground.models.unet import ConditionalUNet

logger = logging.getLogger(__name__)


def diffusion_loss(
    model: ConditionalUNet,
    sched: NoiseSchedule,
    z0: torch.Tensor,
    t: torch.Tensor,
    eps: torch.Tensor,
    v_x: torch.Tensor | None,
    v_h: torch.Tensor | None,
    c_x: torch.Tensor | None,
    drop: torch.Tensor | bool,
) -> torch.Tensor:
    """Mean squared error between the true and predicted noise, for fixed draws of t, ε and the drop mask."""
    z_t = q_sample(z0, t, eps, sched)
    null = model.null_tokens.tokens if model.null_tokens is not None else None
    bundle = assemble(v_x, v_h, c_x, z_t, t, drop, drop, null_tokens=null)
    return F.mse_loss(predict_noise(model, bundle), eps)


@dataclass
class EncodedSet:
    """Frozen-encoder outputs for a list of samples, row-aligned."""

    ids: list[str]
    z_mean: torch.Tensor
    z_std: torch.Tensor
    v_x: torch.Tensor | None
    v_h: torch.Tensor | None
    c_x: torch.Tensor | None

    def __len__(self) -> int:
        return len(self.ids)

    def rows(self, index: torch.Tensor) -> "EncodedSet":
        def pick(v: torch.Tensor | None) -> torch.Tensor | None:
            return v[index] if v is not None else None

        return EncodedSet(
            [self.ids[i] for i in index.tolist()],
            self.z_mean[index],
            self.z_std[index],
            pick(self.v_x),
            pick(self.v_h),
            pick(self.c_x),
        )


@torch.no_grad()
def encode_samples(
    samples: list[PairedSample],
    codec: LatentCodec,
    semantic: SemanticEncoder | None,
    config: DiffusionConfig,
    *,
    batch_size: int = 128,
) -> EncodedSet:
    if not samples:
        raise DataError("cannot encode an empty batch")
    device = next(codec.parameters()).device
    parts: list[tuple[torch.Tensor, ...]] = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        ground = images_to_tensor([s.ground.pixels for s in chunk], device)
        dist = codec.encode(ground)
        v_x, v_h, c_x = encode_conditions(
            codec,
            semantic,
            images_to_tensor([s.aerial.pixels for s in chunk], device),
            heights_to_tensor([s.height for s in chunk], device),
            tuple(dist.mean.shape[-2:]),
            config.denoiser,
        )
        parts.append((dist.mean, torch.exp(0.5 * dist.log_variance), v_x, v_h, c_x))

    def cat(k: int) -> torch.Tensor | None:
        return torch.cat([p[k] for p in parts]) if parts[0][k] is not None else None

    return EncodedSet([s.id for s in samples], cat(0), cat(1), cat(2), cat(3), cat(4))


class DiffusionTrainer:
    """Owns the denoiser's optimizer and RNG; one trainer per checkpoint directory."""

    def __init__(
        self,
        model: ConditionalUNet,
        codec: LatentCodec,
        semantic: SemanticEncoder | None,
        sched: NoiseSchedule,
        config: DiffusionConfig,
    ) -> None:
        if not 0.0 <= config.p_drop < 1.0:
            raise ConfigError(f"p_drop must lie in [0, 1), got {config.p_drop}")
        self.model = model
        self.codec = freeze(codec)
        self.semantic = freeze(semantic) if semantic is not None else None
        self.sched = sched
        self.config = config
        self.latent_scale = codec.config.latent_scale
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.epoch = 0
        self.history: list[tuple[int, float, float | None]] = []

    @property
    def device(self) -> torch.device:
        return next(self.model.parameters()).device

    def _randn(self, like: torch.Tensor) -> torch.Tensor:
        return torch.randn(like.shape, generator=self.generator, dtype=like.dtype).to(like.device)

    def step_encoded(self, batch: EncodedSet, p_drop: float | None = None) -> float:
        if len(batch) == 0:
            raise DataError("training_step needs a non-empty batch")
        p = self.config.p_drop if p_drop is None else p_drop
        n = len(batch)
        z0 = (batch.z_mean + batch.z_std * self._randn(batch.z_mean)) * self.latent_scale
        t = torch.randint(0, self.sched.timesteps, (n,), generator=self.generator).to(self.device)
        eps = self._randn(z0)
        drop = (torch.rand(n, generator=self.generator) < p).to(self.device)

        self.model.train()
        loss = diffusion_loss(self.model, self.sched, z0, t, eps, batch.v_x, batch.v_h, batch.c_x, drop)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        return loss.item()

    def training_step(self, samples: list[PairedSample], p_drop: float | None = None) -> float:
        """One optimizer update on a batch of samples; returns the loss before the update."""
        if not samples:
            raise DataError("training_step needs a non-empty batch")
        return self.step_encoded(encode_samples(samples, self.codec, self.semantic, self.config), p_drop)

    @torch.no_grad()
    def validation_loss(self, data: EncodedSet) -> float:
        """Conditional loss on fixed draws, independent of the training RNG."""
        gen = torch.Generator().manual_seed(self.config.seed + 1)
        self.model.eval()
        total = 0.0
        for i in range(0, len(data), self.config.batch_size):
            batch = data.rows(torch.arange(i, min(i + self.config.batch_size, len(data))))
            n = len(batch)
            noise = torch.randn(batch.z_mean.shape, generator=gen).to(self.device)
            z0 = (batch.z_mean + batch.z_std * noise) * self.latent_scale
            t = torch.randint(0, self.sched.timesteps, (n,), generator=gen).to(self.device)
            eps = torch.randn(z0.shape, generator=gen).to(self.device)
            loss = diffusion_loss(self.model, self.sched, z0, t, eps, batch.v_x, batch.v_h, batch.c_x, False)
            total += loss.item() * n
        return total / len(data)

    def fit(
        self,
        train: EncodedSet,
        val: EncodedSet | None,
        epochs: int,
        on_epoch: Callable[["DiffusionTrainer"], None] | None = None,
    ) -> list[tuple[int, float, float | None]]:
        """Train until `self.epoch == epochs`, continuing from the current epoch."""
        if len(train) == 0:
            raise DataError("diffusion training needs a non-empty dataset")
        while self.epoch < epochs:
            order = torch.randperm(len(train), generator=self.generator)
            total, batches = 0.0, 0
            for i in range(0, len(train), self.config.batch_size):
                total += self.step_encoded(train.rows(order[i : i + self.config.batch_size]))
                batches += 1
            self.epoch += 1
            val_loss = self.validation_loss(val) if val is not None and len(val) else None
            self.history.append((self.epoch, total / batches, val_loss))
            logger.info(
                "diffusion epoch %d/%d train_loss=%.5f val_loss=%s",
                self.epoch,
                epochs,
                total / batches,
                f"{val_loss:.5f}" if val_loss is not None else "n/a",
            )
            if on_epoch is not None:
                on_epoch(self)
        self.model.eval()
        return self.history

    def state_dict(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "generator": self.generator.get_state(),
            "epoch": self.epoch,
            "history": list(self.history),
        }

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.generator.set_state(state["generator"])
        self.epoch = int(state["epoch"])
        self.history = [tuple(row) for row in state["history"]]
