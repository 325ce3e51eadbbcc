"""
Qualitative comparison sheet (compare).

One row per test id, columns: aerial | generated without height |
generated with height | ground truth. Both generated columns come from the
same checkpoint and seed; only the height conditioning differs.
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from aerial2ground.domain.requests import CompareRequest
from aerial2ground.errors import DataError, IoError
from aerial2ground.scene.dataset import read_dataset
from aerial2ground.services.sampling import SamplingService

logger = logging.getLogger(__name__)

COLUMNS = ("aerial", "no height", "with height", "ground truth")
_PAD = 4
_HEADER = 14


def _to_image(pixels: np.ndarray) -> Image.Image:
    return Image.fromarray(np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8))


def contact_sheet(rows: list[list[np.ndarray]], columns: tuple[str, ...] = COLUMNS) -> Image.Image:
    """Lay out rows of images on a white grid with a header line."""
    if not rows:
        raise DataError("contact sheet needs at least one row")
    cell_w = max(img.shape[1] for row in rows for img in row)
    cell_h = max(img.shape[0] for row in rows for img in row)
    width = len(columns) * (cell_w + _PAD) + _PAD
    height = _HEADER + len(rows) * (cell_h + _PAD) + _PAD
    sheet = Image.new("RGB", (width, height), "white")
    draw = ImageDraw.Draw(sheet)
    for c, title in enumerate(columns):
        draw.text((_PAD + c * (cell_w + _PAD), 1), title, fill="black")
    for r, row in enumerate(rows):
        for c, pixels in enumerate(row):
            x = _PAD + c * (cell_w + _PAD) + (cell_w - pixels.shape[1]) // 2
            y = _HEADER + r * (cell_h + _PAD) + (cell_h - pixels.shape[0]) // 2
            sheet.paste(_to_image(pixels), (x, y))
    return sheet


class CompareService:
    def __init__(self, sampling: SamplingService) -> None:
        self.sampling = sampling

    def compare(self, request: CompareRequest) -> Path:
        samples = read_dataset(Path(request.data_dir), "test")
        if request.ids:
            by_id = {s.id: s for s in samples}
            unknown = [i for i in request.ids if i not in by_id]
            if unknown:
                raise DataError(f"unknown test ids: {', '.join(unknown)}")
            samples = [by_id[i] for i in request.ids]
        else:
            samples = samples[: request.count]
        if not samples:
            raise DataError(f"no test samples in {request.data_dir}")

        sampler, _ = self.sampling.load(Path(request.ckpt_dir), samples[0].ground.pixels.shape[:2])
        options = {"scale": request.guidance_scale, "steps": request.steps, "seed": request.seed}
        without = sampler.generate(samples, no_height=True, **options)
        with_height = sampler.generate(samples, **options)

        rows = [
            [s.aerial.pixels, a.pixels, b.pixels, s.ground.pixels]
            for s, a, b in zip(samples, without, with_height)
        ]
        out = Path(request.out_path)
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            contact_sheet(rows).save(out)
        except OSError as exc:
            raise IoError(f"cannot write {out}: {exc}") from exc
        logger.info("Wrote comparison of %d samples to %s", len(rows), out)
        return out
