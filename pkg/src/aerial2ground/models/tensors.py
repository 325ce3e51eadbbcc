"""Conversions between the numpy domain records and model tensors.

Images enter the networks as B×3×H×W in [−1, 1]; height maps as B×1×H×W
in [0, 1]. Everything leaving a network goes back to H×W×3 float32 in [0, 1].
"""

from collections.abc import Sequence

import numpy as np
import torch

from aerial2ground.domain.models import HeightNormalization
from aerial2ground.domain.samples import HeightMap
from aerial2ground.errors import ShapeError

# Raw-metre height maps are divided by this before encoding (tallest generated building).
RAW_HEIGHT_SCALE_M = 30.0


def select_device(preferred: str | None = None) -> torch.device:
    if preferred:
        return torch.device(preferred)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def images_to_tensor(pixels: Sequence[np.ndarray] | np.ndarray, device: torch.device | str = "cpu") -> torch.Tensor:
    """Stack H×W×3 arrays in [0, 1] into B×3×H×W in [−1, 1]."""
    arr = np.stack(list(pixels)) if not isinstance(pixels, np.ndarray) else pixels
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeError(f"expected B×H×W×3 pixels, got {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(0, 3, 1, 2)
    return (t * 2.0 - 1.0).to(device)


def tensor_to_images(t: torch.Tensor) -> np.ndarray:
    """B×3×H×W in [−1, 1] to B×H×W×3 float32 in [0, 1]."""
    if t.ndim != 4 or t.shape[1] != 3:
        raise ShapeError(f"expected B×3×H×W tensor, got {tuple(t.shape)}")
    out = ((t.detach().float().clamp(-1.0, 1.0) + 1.0) * 0.5).permute(0, 2, 3, 1)
    return np.ascontiguousarray(out.cpu().numpy(), dtype=np.float32)


def height_values(h: HeightMap) -> np.ndarray:
    if h.normalization is HeightNormalization.UNIT_SCALED:
        return h.values
    return np.clip(h.values / RAW_HEIGHT_SCALE_M, 0.0, 1.0).astype(np.float32)


def heights_to_tensor(maps: Sequence[HeightMap], device: torch.device | str = "cpu") -> torch.Tensor:
    """Stack height maps into B×1×H×W in [0, 1]."""
    arr = np.stack([height_values(h) for h in maps])
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[:, None].to(device)
