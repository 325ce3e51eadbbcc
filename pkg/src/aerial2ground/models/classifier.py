"""
Pinned metric classifier.

A small CNN trained once on ground views labelled with their scene class.
Its class probabilities feed the Inception Score, its pooled features feed
KID, and its per-block activations are the layer taps of the perceptual
distance. Every metric report records the weights hash.
"""

import logging
from collections.abc import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from aerial2ground.domain.config import ExtractorConfig
from aerial2ground.domain.models import SceneClass
from aerial2ground.domain.samples import PairedSample
from aerial2ground.errors import DataError, ShapeError
from aerial2ground.models.layers import group_norm
from aerial2ground.models.tensors import images_to_tensor

logger = logging.getLogger(__name__)

CLASSES = SceneClass.ordered()


class MetricClassifier(nn.Module):
    def __init__(self, config: ExtractorConfig, n_classes: int = len(CLASSES)) -> None:
        super().__init__()
        if len(config.channels) < 2:
            raise ShapeError("the metric classifier needs at least two layer taps")
        self.config = config
        blocks = []
        ch = 3
        for width in config.channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(ch, width, kernel_size=3, stride=2, padding=1),
                    group_norm(width),
                    nn.SiLU(),
                    nn.Conv2d(width, width, kernel_size=3, padding=1),
                    nn.SiLU(),
                )
            )
            ch = width
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(ch, n_classes)

    @property
    def feature_dim(self) -> int:
        return self.config.channels[-1]

    def taps(self, images: torch.Tensor) -> list[torch.Tensor]:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected B×3×H×W images, got {tuple(images.shape)}")
        out, h = [], images
        for block in self.blocks:
            h = block(h)
            out.append(h)
        return out

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return F.adaptive_avg_pool2d(self.taps(images)[-1], 1).flatten(1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))

    def probabilities(self, images: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self(images), dim=-1)


def train_extractor(
    samples: list[PairedSample],
    config: ExtractorConfig,
    *,
    device: torch.device | str = "cpu",
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[MetricClassifier, list[float]]:
    if not samples:
        raise DataError("extractor training needs a non-empty dataset")
    torch.manual_seed(config.seed)
    model = MetricClassifier(config).to(device)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr)
    labels = torch.tensor([CLASSES.index(s.scene_class) for s in samples], dtype=torch.long)
    loader = DataLoader(
        TensorDataset(images_to_tensor([s.ground.pixels for s in samples]), labels),
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(config.seed),
    )
    counts = torch.bincount(labels, minlength=len(CLASSES)).tolist()
    logger.info("Training metric classifier on %d views, class counts %s", len(samples), counts)

    history: list[float] = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for images, target in loader:
            loss = F.cross_entropy(model(images.to(device)), target.to(device))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += loss.item() * images.shape[0]
            count += images.shape[0]
        epoch_loss = total / max(count, 1)
        history.append(epoch_loss)
        logger.info("extractor epoch %d/%d loss=%.5f", epoch, config.epochs, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    model.eval()
    return model, history
