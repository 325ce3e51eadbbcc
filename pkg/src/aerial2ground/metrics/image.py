"""Pixel-space image similarity."""

import numpy as np
from skimage.metrics import structural_similarity

from aerial2ground.errors import ShapeError

# Rec.601 luma weights.
LUMA = np.array([0.299, 0.587, 0.114])


def luma(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected H×W×3 or H×W image, got {image.shape}")
    return image.astype(np.float64) @ LUMA


def ssim(a: np.ndarray, b: np.ndarray, *, data_range: float = 1.0) -> float:
    """Mean local SSIM on luma with an 11×11 Gaussian window (σ = 1.5)."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim needs equal shapes, got {a.shape} and {b.shape}")
    value = structural_similarity(
        luma(a),
        luma(b),
        data_range=data_range,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
    )
    return float(np.clip(value, -1.0, 1.0))
