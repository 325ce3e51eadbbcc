"""
Latent codec: a small VAE shared by every spatial condition.

The same frozen encoder embeds aerial RGB, replicated height maps and the
ground images that become diffusion targets. Conditioning uses posterior
means; diffusion targets use a reparameterized draw times `latent_scale`.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from aerial2ground.domain.config import CodecConfig
from aerial2ground.domain.samples import PairedSample
from aerial2ground.errors import ConfigError, DataError, ShapeError
from aerial2ground.models.layers import Downsample, ResBlock, Upsample, group_norm
from aerial2ground.models.tensors import heights_to_tensor, images_to_tensor

logger = logging.getLogger(__name__)

LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0

# B×C_l×h×w; h and w are the image size divided by the codec scale factor.
LatentGrid = torch.Tensor


@dataclass(frozen=True)
class LatentDistribution:
    mean: LatentGrid
    log_variance: LatentGrid

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_variance.shape:
            raise ShapeError(
                f"mean {tuple(self.mean.shape)} and log-variance {tuple(self.log_variance.shape)} differ"
            )
        object.__setattr__(self, "log_variance", self.log_variance.clamp(LOGVAR_MIN, LOGVAR_MAX))

    def kl(self) -> torch.Tensor:
        """Per-element mean KL divergence to the standard normal."""
        return 0.5 * torch.mean(self.mean.pow(2) + self.log_variance.exp() - 1.0 - self.log_variance)


class _Encoder(nn.Module):
    def __init__(self, config: CodecConfig, levels: int) -> None:
        super().__init__()
        ch = config.base_channels
        self.conv_in = nn.Conv2d(3, ch, kernel_size=3, padding=1)
        blocks: list[nn.Module] = []
        for i in range(levels):
            out = ch * 2 if i < levels - 1 else ch
            blocks += [ResBlock(ch, out), Downsample(out)]
            ch = out
        self.down = nn.Sequential(*blocks)
        self.mid = ResBlock(ch, ch)
        self.norm_out = group_norm(ch)
        self.conv_out = nn.Conv2d(ch, 2 * config.latent_channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.mid(self.down(self.conv_in(x)))
        return self.conv_out(F.silu(self.norm_out(h)))


class _Decoder(nn.Module):
    def __init__(self, config: CodecConfig, levels: int) -> None:
        super().__init__()
        ch = config.base_channels * (2 ** max(levels - 1, 0))
        self.conv_in = nn.Conv2d(config.latent_channels, ch, kernel_size=3, padding=1)
        self.mid = ResBlock(ch, ch)
        blocks: list[nn.Module] = []
        for _ in range(levels):
            out = max(ch // 2, config.base_channels)
            blocks += [Upsample(ch), ResBlock(ch, out)]
            ch = out
        self.up = nn.Sequential(*blocks)
        self.norm_out = group_norm(ch)
        self.conv_out = nn.Conv2d(ch, 3, kernel_size=3, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.up(self.mid(self.conv_in(z)))
        return self.conv_out(F.silu(self.norm_out(h)))


class LatentCodec(nn.Module):
    """Encoder/decoder pair operating on B×3×H×W tensors in [−1, 1]."""

    def __init__(self, config: CodecConfig) -> None:
        super().__init__()
        sf = config.scale_factor
        if sf < 1 or sf & (sf - 1):
            raise ConfigError(f"codec scale_factor must be a power of two, got {sf}")
        self.config = config
        self.levels = int(math.log2(sf))
        self.encoder = _Encoder(config, self.levels)
        self.decoder = _Decoder(config, self.levels)

    @property
    def latent_channels(self) -> int:
        return self.config.latent_channels

    def latent_shape(self, height: int, width: int) -> tuple[int, int]:
        sf = self.config.scale_factor
        if height % sf or width % sf:
            raise ShapeError(f"image size {height}×{width} is not divisible by scale factor {sf}")
        return height // sf, width // sf

    def encode(self, images: torch.Tensor) -> LatentDistribution:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected B×3×H×W images, got {tuple(images.shape)}")
        self.latent_shape(images.shape[2], images.shape[3])
        moments = self.encoder(images)
        mean, log_variance = moments.chunk(2, dim=1)
        return LatentDistribution(mean=mean, log_variance=log_variance)

    def encode_height(self, heights: torch.Tensor) -> LatentDistribution:
        """Encode B×1×H×W heights in [0, 1] with the RGB weights."""
        if heights.ndim == 3:
            heights = heights[:, None]
        if heights.ndim != 4 or heights.shape[1] != 1:
            raise ShapeError(f"expected B×1×H×W heights, got {tuple(heights.shape)}")
        return self.encode(heights.repeat(1, 3, 1, 1) * 2.0 - 1.0)

    @staticmethod
    def sample_latent(dist: LatentDistribution, seed: int) -> LatentGrid:
        gen = torch.Generator(device="cpu").manual_seed(seed)
        eps = torch.randn(dist.mean.shape, generator=gen, dtype=dist.mean.dtype).to(dist.mean.device)
        return dist.mean + torch.exp(0.5 * dist.log_variance) * eps

    def decode_raw(self, latent: LatentGrid) -> torch.Tensor:
        if latent.ndim != 4 or latent.shape[1] != self.latent_channels:
            raise ShapeError(
                f"expected B×{self.latent_channels}×h×w latent, got {tuple(latent.shape)}"
            )
        return self.decoder(latent)

    def decode(self, latent: LatentGrid) -> torch.Tensor:
        return self.decode_raw(latent).clamp(-1.0, 1.0)


def align_latent(latent: LatentGrid, size: tuple[int, int]) -> LatentGrid:
    """Resample a conditioning latent onto the target latent grid."""
    if tuple(latent.shape[-2:]) == tuple(size):
        return latent
    return F.interpolate(latent, size=size, mode="bilinear", align_corners=False)


# ── Training ─────────────────────────────────────────────────────────


def _pools(samples: list[PairedSample]) -> list[torch.Tensor]:
    ground = images_to_tensor([s.ground.pixels for s in samples])
    aerial = images_to_tensor([s.aerial.pixels for s in samples])
    height = heights_to_tensor([s.height for s in samples]).repeat(1, 3, 1, 1) * 2.0 - 1.0
    if ground.shape[-2:] == aerial.shape[-2:]:
        return [torch.cat([ground, aerial, height])]
    return [ground, torch.cat([aerial, height])]


def train_codec(
    samples: list[PairedSample],
    config: CodecConfig,
    *,
    device: torch.device | str = "cpu",
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[LatentCodec, list[float]]:
    """Fit the VAE with L1 reconstruction plus β·KL; returns the codec and per-epoch losses.

    Ground views, aerial views and replicated height maps are all trained on,
    so every input the frozen encoder later sees is in-distribution.
    """
    if not samples:
        raise DataError("codec training needs a non-empty dataset")
    if len(samples) < config.min_images:
        raise DataError(f"codec training needs ≥ {config.min_images} images, got {len(samples)}")

    torch.manual_seed(config.seed)
    codec = LatentCodec(config).to(device)
    optimizer = torch.optim.AdamW(codec.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    loaders = [
        DataLoader(TensorDataset(pool), batch_size=config.batch_size, shuffle=True, generator=gen)
        for pool in _pools(samples)
    ]
    logger.info("Training codec on %d samples for %d epochs", len(samples), config.epochs)

    history: list[float] = []
    for epoch in range(1, config.epochs + 1):
        codec.train()
        total, count = 0.0, 0
        for loader in loaders:
            for (batch,) in loader:
                batch = batch.to(device)
                dist = codec.encode(batch)
                z = dist.mean + torch.exp(0.5 * dist.log_variance) * torch.randn_like(dist.mean)
                loss = F.l1_loss(codec.decode_raw(z), batch) + config.kl_weight * dist.kl()
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                total += loss.item() * batch.shape[0]
                count += batch.shape[0]
        epoch_loss = total / max(count, 1)
        history.append(epoch_loss)
        logger.info("codec epoch %d/%d loss=%.5f", epoch, config.epochs, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    codec.eval()
    return codec, history


@torch.no_grad()
def reconstruction_error(codec: LatentCodec, pixels: list[np.ndarray], batch_size: int = 64) -> float:
    """Mean per-pixel L1 of decode(encode(x).mean) in [−1, 1] units."""
    if not pixels:
        raise DataError("no images to reconstruct")
    device = next(codec.parameters()).device
    total, count = 0.0, 0
    for i in range(0, len(pixels), batch_size):
        x = images_to_tensor(pixels[i : i + batch_size], device)
        recon = codec.decode(codec.encode(x).mean)
        total += (recon - x).abs().mean().item() * x.shape[0]
        count += x.shape[0]
    return total / count
