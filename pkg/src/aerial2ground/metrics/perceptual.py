"""Feature-space similarity: perceptual distance and CLIP-style similarity.

"CLIP similarity" here is cosine similarity in the ground tower of the
contrastive encoder trained on the synthetic pairs, not an external CLIP model.
"""

import torch
import torch.nn.functional as F

from aerial2ground.errors import ShapeError
from aerial2ground.models.classifier import MetricClassifier
from aerial2ground.models.semantic import SemanticEncoder

_EPS = 1e-10


def _unit_channels(f: torch.Tensor) -> torch.Tensor:
    return f / (f.pow(2).sum(dim=1, keepdim=True).sqrt() + _EPS)


@torch.no_grad()
def perceptual_distance(extractor: MetricClassifier, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-pair LPIPS-style distance for B×3×H×W batches in [−1, 1].

    Sum over layer taps of the channel-summed, spatially averaged squared
    difference of unit-normalized features.
    """
    if a.shape != b.shape:
        raise ShapeError(f"perceptual_distance needs equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    total = torch.zeros(a.shape[0], dtype=torch.float64, device=a.device)
    for fa, fb in zip(extractor.taps(a), extractor.taps(b)):
        diff = (_unit_channels(fa) - _unit_channels(fb)).pow(2).sum(dim=1)
        total += diff.mean(dim=(1, 2)).double()
    return total


@torch.no_grad()
def clip_similarity(encoder: SemanticEncoder, gen: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-pair cosine similarity of pooled ground-tower embeddings."""
    if gen.shape[0] != gt.shape[0]:
        raise ShapeError("clip_similarity needs equally sized batches")
    a = encoder.embed(gen, "ground").pooled
    b = encoder.embed(gt, "ground").pooled
    return F.cosine_similarity(a, b, dim=-1).double().clamp(-1.0, 1.0)
