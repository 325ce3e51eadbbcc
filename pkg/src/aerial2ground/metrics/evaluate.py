"""
Evaluation of a directory of generated ground views against ground truth.

Both directories may be flat (`<id>.png`) or datasets (`<id>/ground.png`).
Outputs, next to each other in the report directory:

    report.json       MetricReport
    per_sample.csv    id, ssim, lpips, clip_sim
    table.txt         aligned plain-text metric table
    table.csv         the same table as CSV
"""

import json
import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from aerial2ground.domain.config import EvalConfig
from aerial2ground.domain.provenance import weights_hash
from aerial2ground.domain.reports import MetricReport, MetricValues
from aerial2ground.errors import DataError, FormatError, IoError
from aerial2ground.metrics.distribution import inception_score, kid
from aerial2ground.metrics.image import ssim
from aerial2ground.metrics.perceptual import clip_similarity, perceptual_distance
from aerial2ground.models.classifier import MetricClassifier
from aerial2ground.models.semantic import SemanticEncoder
from aerial2ground.models.tensors import images_to_tensor
from aerial2ground.scene.dataset import read_png

logger = logging.getLogger(__name__)

REPORT = "report.json"
PER_SAMPLE = "per_sample.csv"

_BATCH = 64


def list_images(root: Path) -> dict[str, Path]:
    """Map sample id to image path for a flat or dataset-layout directory."""
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"not a directory: {root}")
    found = {p.stem: p for p in root.glob("*.png")}
    for d in root.iterdir():
        if d.is_dir() and (d / "ground.png").exists():
            found.setdefault(d.name, d / "ground.png")
    return dict(sorted(found.items()))


def _load(paths: list[Path]) -> list[np.ndarray]:
    images = []
    for p in paths:
        try:
            images.append(read_png(p))
        except OSError as exc:
            raise FormatError(f"unreadable image {p}: {exc}", sample_id=p.stem, field="image") from exc
    return images


@torch.no_grad()
def _batched(
    fn: Callable[..., torch.Tensor], device: torch.device, *batches: list[np.ndarray]
) -> np.ndarray:
    out = []
    for i in range(0, len(batches[0]), _BATCH):
        tensors = (images_to_tensor(b[i : i + _BATCH], device) for b in batches)
        out.append(fn(*tensors).cpu().double().numpy())
    return np.concatenate(out)


def render_table(rows: list[dict[str, object]]) -> tuple[str, str]:
    """(aligned text, CSV) renderings of metric rows."""
    frame = pd.DataFrame(rows)
    floats = frame.select_dtypes("number").columns
    frame[floats] = frame[floats].round(4)
    return frame.to_string(index=False) + "\n", frame.to_csv(index=False)


def evaluate_images(
    ids: list[str],
    generated: list[np.ndarray],
    ground_truth: list[np.ndarray],
    config: EvalConfig,
    extractor: MetricClassifier,
    semantic: SemanticEncoder,
) -> tuple[MetricValues, pd.DataFrame]:
    if not ids:
        raise DataError("nothing to evaluate")
    extractor.eval()
    semantic.eval()
    device = next(extractor.parameters()).device
    for i, g, t in zip(ids, generated, ground_truth):
        if g.shape != t.shape:
            raise FormatError(f"generated {g.shape} vs ground truth {t.shape}", sample_id=i, field="shape")

    with ThreadPoolExecutor(max_workers=max(config.workers, 1)) as pool:
        ssims = np.array(list(pool.map(ssim, generated, ground_truth)))
    lpips = _batched(lambda a, b: perceptual_distance(extractor, a, b), device, generated, ground_truth)
    clip = _batched(lambda a, b: clip_similarity(semantic, a, b), device, generated, ground_truth)
    probs = _batched(extractor.probabilities, device, generated)
    feat_gen = _batched(extractor.features, device, generated)
    feat_real = _batched(extractor.features, device, ground_truth)

    kid_value = (
        kid(feat_gen, feat_real, subsets=config.kid_subsets, subset_size=config.kid_subset_size, seed=config.seed)
        if len(ids) >= 2
        else None
    )
    values = MetricValues(
        ssim=float(ssims.mean()),
        inception_score=inception_score(probs, splits=config.is_splits),
        kid=kid_value,
        lpips=float(lpips.mean()),
        clip_sim=float(clip.mean()),
    )
    per_sample = pd.DataFrame({"id": ids, "ssim": ssims, "lpips": lpips, "clip_sim": clip})
    return values, per_sample


def evaluate_run(
    gen_dir: Path,
    gt_dir: Path,
    out_dir: Path,
    config: EvalConfig,
    extractor: MetricClassifier,
    semantic: SemanticEncoder,
    *,
    config_hash: str = "",
) -> MetricReport:
    """Evaluate every generated id against its ground truth and write the report files."""
    gen = list_images(gen_dir)
    gt = list_images(gt_dir)
    missing = sorted(set(gen) - set(gt))
    if missing:
        raise FormatError(f"{len(missing)} generated ids have no ground truth", sample_id=missing[0], field="id")
    if not gen:
        raise FormatError(f"no generated images in {gen_dir}", field="id")
    ids = list(gen)
    logger.info("Evaluating %d generated views from %s", len(ids), gen_dir)

    values, per_sample = evaluate_images(
        ids, _load([gen[i] for i in ids]), _load([gt[i] for i in ids]), config, extractor, semantic
    )
    report = MetricReport(
        metrics=values,
        per_sample=PER_SAMPLE,
        n=len(ids),
        extractor_hash=weights_hash(extractor),
        semantic_hash=weights_hash(semantic),
        config_hash=config_hash,
        seed=config.seed,
    )
    write_report(report, per_sample, out_dir)
    logger.info(
        "ssim=%.4f is=%.4f kid=%s lpips=%.4f clip_sim=%.4f",
        values.ssim,
        values.inception_score,
        values.kid,
        values.lpips,
        values.clip_sim,
    )
    return report


def write_report(report: MetricReport, per_sample: pd.DataFrame, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / REPORT).write_text(
            json.dumps(report.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True)
        )
        per_sample.to_csv(out_dir / PER_SAMPLE, index=False, float_format="%.8f")
        text, csv = render_table([{"n": report.n, **report.metrics.model_dump(by_alias=True)}])
        (out_dir / "table.txt").write_text(text)
        (out_dir / "table.csv").write_text(csv)
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc


def read_report(path: Path) -> MetricReport:
    try:
        return MetricReport.model_validate_json(Path(path).read_text())
    except FileNotFoundError as exc:
        raise IoError(f"report not found: {path}") from exc
