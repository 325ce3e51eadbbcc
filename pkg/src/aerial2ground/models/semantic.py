"""
Contrastive semantic encoder.

Two towers with the same architecture embed aerial and ground views into a
shared space. The aerial tower's token sequence (one global token plus a
patch grid) is the cross-attention context of the denoiser; the pooled
ground-tower embedding is the feature space of the CLIP-similarity metric.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from aerial2ground.domain.config import SemanticConfig
from aerial2ground.domain.samples import PairedSample
from aerial2ground.errors import DataError, ShapeError
from aerial2ground.models.tensors import images_to_tensor

logger = logging.getLogger(__name__)

View = Literal["aerial", "ground"]


@dataclass(frozen=True)
class TokenSequence:
    tokens: torch.Tensor  # B×L×d
    pooled: torch.Tensor  # B×d, unit norm


class _Tower(nn.Module):
    def __init__(self, config: SemanticConfig) -> None:
        super().__init__()
        d = config.width
        self.stem = nn.Sequential(
            nn.Conv2d(3, d // 4, kernel_size=3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(d // 4, d // 2, kernel_size=3, stride=2, padding=1),
            nn.GELU(),
            nn.AdaptiveAvgPool2d(config.patch_grid),
        )
        self.patch_proj = nn.Linear(d // 2, d)
        self.cls_token = nn.Parameter(torch.randn(1, 1, d) * 0.02)
        self.position = nn.Parameter(torch.randn(1, config.tokens, d) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=config.heads, dim_feedforward=2 * d, dropout=0.0, batch_first=True, norm_first=True
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers=config.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)
        self.pool_proj = nn.Linear(d, d, bias=False)

    def forward(self, x: torch.Tensor) -> TokenSequence:
        patches = self.patch_proj(self.stem(x).flatten(2).transpose(1, 2))
        tokens = torch.cat([self.cls_token.expand(x.shape[0], -1, -1), patches], dim=1) + self.position
        tokens = self.norm(self.transformer(tokens))
        pooled = F.normalize(self.pool_proj(tokens[:, 0]), dim=-1)
        return TokenSequence(tokens=tokens, pooled=pooled)


class SemanticEncoder(nn.Module):
    def __init__(self, config: SemanticConfig) -> None:
        super().__init__()
        self.config = config
        self.aerial = _Tower(config)
        self.ground = _Tower(config)

    @property
    def token_shape(self) -> tuple[int, int]:
        return self.config.tokens, self.config.width

    def embed(self, images: torch.Tensor, view: View = "aerial") -> TokenSequence:
        """Tokens for B×3×H×W images in [−1, 1]."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected B×3×H×W images, got {tuple(images.shape)}")
        tower = self.aerial if view == "aerial" else self.ground
        return tower(images)


class NullEmbedding(nn.Module):
    """Learned stand-in for the aerial tokens when the semantic condition is dropped; starts at zero."""

    def __init__(self, tokens: int, width: int) -> None:
        super().__init__()
        self.tokens = nn.Parameter(torch.zeros(tokens, width))

    def forward(self, batch: int) -> torch.Tensor:
        return self.tokens.unsqueeze(0).expand(batch, -1, -1)


def info_nce(a: torch.Tensor, g: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric InfoNCE over matched rows of two unit-norm embedding batches."""
    logits = a @ g.t() / temperature
    target = torch.arange(a.shape[0], device=a.device)
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.t(), target))


def train_semantic(
    samples: list[PairedSample],
    config: SemanticConfig,
    *,
    device: torch.device | str = "cpu",
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[SemanticEncoder, list[float]]:
    if not samples:
        raise DataError("semantic training needs a non-empty dataset")
    if len(samples) < config.min_pairs:
        raise DataError(f"semantic training needs ≥ {config.min_pairs} pairs, got {len(samples)}")

    torch.manual_seed(config.seed)
    encoder = SemanticEncoder(config).to(device)
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.lr)
    pairs = TensorDataset(
        images_to_tensor([s.aerial.pixels for s in samples]),
        images_to_tensor([s.ground.pixels for s in samples]),
    )
    loader = DataLoader(
        pairs,
        batch_size=config.batch_size,
        shuffle=True,
        drop_last=len(samples) > config.batch_size,
        generator=torch.Generator().manual_seed(config.seed),
    )
    logger.info("Training semantic encoder on %d pairs for %d epochs", len(samples), config.epochs)

    history: list[float] = []
    for epoch in range(1, config.epochs + 1):
        encoder.train()
        total, batches = 0.0, 0
        for aerial, ground in loader:
            a = encoder.embed(aerial.to(device), "aerial").pooled
            g = encoder.embed(ground.to(device), "ground").pooled
            loss = info_nce(a, g, config.temperature)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += loss.item()
            batches += 1
        epoch_loss = total / max(batches, 1)
        history.append(epoch_loss)
        logger.info("semantic epoch %d/%d loss=%.5f", epoch, config.epochs, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    encoder.eval()
    return encoder, history


@torch.no_grad()
def retrieval_accuracy(encoder: SemanticEncoder, aerial: torch.Tensor, ground: torch.Tensor) -> float:
    """Top-1 aerial→ground matching accuracy over aligned batches."""
    if aerial.shape[0] == 0 or aerial.shape[0] != ground.shape[0]:
        raise DataError("retrieval needs equally sized, non-empty aerial and ground sets")
    a = encoder.embed(aerial, "aerial").pooled
    g = encoder.embed(ground, "ground").pooled
    hits = (a @ g.t()).argmax(dim=1) == torch.arange(a.shape[0], device=a.device)
    return hits.float().mean().item()
