"""
Ablation grid: which variants are trained, which sampling runs each gets,
and the ordering assertions over their per-sample SSIM.

Each variant is a separately trained denoiser (removing a condition family
changes the input channels), sharing one codec, semantic encoder and metric
extractor. Workdir layout:

    data/                 the paired dataset
    shared/               codec, semantic, extractor checkpoints
    variants/<variant>/   diffusion checkpoint per variant
    samples/<cell>/       generated views per cell
    reports/<cell>/       report.json + per_sample.csv per cell
    ablation.json         AblationReport

The same steps back both the in-process `run` and the Temporal activities,
so a workflow run and a local run produce the same files.
"""

import json
import logging
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pandas as pd

from aerial2ground import checkpoints
from aerial2ground.domain.config import ExperimentConfig, with_updates
from aerial2ground.domain.provenance import config_hash
from aerial2ground.domain.reports import AblationCell, AblationReport, OrderingAssertion
from aerial2ground.domain.requests import (
    AblationRequest,
    CellSpec,
    EvaluateRequest,
    SampleRequest,
    TrainRequest,
    TrainStage,
    VariantPlan,
    VariantSpec,
)
from aerial2ground.errors import ConfigError, DataError, IoError
from aerial2ground.metrics.evaluate import PER_SAMPLE
from aerial2ground.metrics.stats import wilcoxon_signed_rank
from aerial2ground.services.datagen import DatasetService
from aerial2ground.services.evaluation import EvaluationService
from aerial2ground.services.sampling import SamplingService
from aerial2ground.services.training import TrainingService

logger = logging.getLogger(__name__)

ABLATION = "ablation.json"

VARIANTS: dict[str, VariantSpec] = {
    "full": VariantSpec(name="full", use_clip=True, use_vae_cond=True, use_height=True),
    "no_height": VariantSpec(name="no_height", use_clip=True, use_vae_cond=True, use_height=False),
    "vae_only": VariantSpec(name="vae_only", use_clip=False, use_vae_cond=True, use_height=True),
    "clip_only": VariantSpec(name="clip_only", use_clip=True, use_vae_cond=False, use_height=False),
    "none": VariantSpec(name="none", use_clip=False, use_vae_cond=False, use_height=False),
}


def cell_name(variant: str, scale: float, sigma: float = 0.0, no_height: bool = False) -> str:
    name = f"{variant}/s={scale:g}/sigma={sigma:g}"
    return f"{name}/no_height" if no_height else name


def _cell(variant: str, scale: float, sigma: float = 0.0, no_height: bool = False) -> CellSpec:
    return CellSpec(
        name=cell_name(variant, scale, sigma, no_height),
        variant=variant,
        guidance_scale=scale,
        height_noise_sigma=sigma,
        no_height=no_height,
    )


def plan_ablation(config: ExperimentConfig) -> list[VariantPlan]:
    """Variants to train and the sampling cells of each.

    Compact plan: every variant at the configured guidance scale; the full
    model is also swept over the cfg scales and height-noise sigmas and gets
    an inference-time no-height run. `full_grid` takes the cartesian product
    for every variant (sigma and no-height only where heights are used).
    """
    unknown = [v for v in config.ablation.variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variants: {', '.join(unknown)} (known: {', '.join(VARIANTS)})")
    s = config.diffusion.guidance_scale
    scales = list(dict.fromkeys([s, *config.ablation.cfg_scales]))
    sigmas = list(dict.fromkeys([0.0, *config.ablation.height_noise_sigmas]))

    plans = []
    for name in config.ablation.variants:
        spec = VARIANTS[name]
        if config.ablation.full_grid:
            cells = [
                _cell(name, scale, sigma, no_height)
                for scale in scales
                for sigma in (sigmas if spec.use_height else [0.0])
                for no_height in ((False, True) if spec.use_height else (False,))
                if not (no_height and sigma)
            ]
        else:
            cells = [_cell(name, s)]
            if name == "full":
                cells += [_cell(name, scale) for scale in scales[1:]]
                cells += [_cell(name, s, sigma) for sigma in sigmas[1:]]
                cells.append(_cell(name, s, no_height=True))
        plans.append(VariantPlan(variant=spec, cells=cells))
    return plans


def variant_config(config: ExperimentConfig, variant: VariantSpec) -> ExperimentConfig:
    return with_updates(
        config,
        diffusion={
            "denoiser": {
                "use_clip": variant.use_clip,
                "use_vae_cond": variant.use_vae_cond,
                "use_height": variant.use_height,
            }
        },
    )


# ── Ordering assertions ──────────────────────────────────────────────


def compare_cells(
    claim: str,
    better: AblationCell,
    worse: AblationCell,
    *,
    alpha: float,
    require_significance: bool,
) -> OrderingAssertion:
    """Paired comparison on the ids both cells share (deltas = better − worse)."""
    ids = sorted(set(better.per_sample_ssim) & set(worse.per_sample_ssim))
    result = OrderingAssertion(
        claim=claim, better=better.name, worse=worse.name, require_significance=require_significance
    )
    if not ids:
        result.detail = "no shared samples"
        return result
    b = np.array([better.per_sample_ssim[i] for i in ids])
    w = np.array([worse.per_sample_ssim[i] for i in ids])
    result.better_ssim, result.worse_ssim = float(b.mean()), float(w.mean())
    try:
        result.p_value = wilcoxon_signed_rank(b - w).p_value
    except DataError as exc:
        result.detail = str(exc)

    if require_significance:
        result.passed = (
            result.better_ssim > result.worse_ssim and result.p_value is not None and result.p_value < alpha
        )
    else:
        result.passed = result.better_ssim >= result.worse_ssim
    return result


def ordering_assertions(config: ExperimentConfig, cells: list[AblationCell]) -> list[OrderingAssertion]:
    by_name = {c.name: c for c in cells}
    s = config.diffusion.guidance_scale
    alpha = config.ablation.alpha
    noisy = next((sigma for sigma in config.ablation.height_noise_sigmas if sigma > 0), None)
    claims = [
        ("height conditioning improves SSIM", cell_name("full", s), cell_name("no_height", s), True),
        ("dual conditioning beats VAE-only", cell_name("full", s), cell_name("vae_only", s), True),
        ("VAE conditioning beats none", cell_name("vae_only", s), cell_name("none", s), False),
        ("dual conditioning beats CLIP-only", cell_name("full", s), cell_name("clip_only", s), False),
    ]
    if noisy is not None:
        claims.append(
            ("clean heights beat perturbed heights", cell_name("full", s), cell_name("full", s, noisy), True)
        )
    out = []
    for claim, better, worse, significant in claims:
        if better in by_name and worse in by_name:
            out.append(
                compare_cells(claim, by_name[better], by_name[worse], alpha=alpha, require_significance=significant)
            )
        else:
            logger.info("Skipping assertion %r: %s or %s not in the grid", claim, better, worse)
    return out


def cfg_curve(config: ExperimentConfig, cells: list[AblationCell]) -> list[tuple[float, float]]:
    by_name = {c.name: c for c in cells}
    curve = []
    for scale in sorted(set(config.ablation.cfg_scales)):
        cell = by_name.get(cell_name("full", scale))
        if cell is not None and cell.report is not None:
            curve.append((scale, cell.report.metrics.ssim))
    return curve


# ── Service ──────────────────────────────────────────────────────────


class AblationService:
    def __init__(
        self,
        datasets: DatasetService,
        training: TrainingService,
        sampling: SamplingService,
        evaluation: EvaluationService,
    ) -> None:
        self.datasets = datasets
        self.training = training
        self.sampling = sampling
        self.evaluation = evaluation

    @staticmethod
    def with_plan(request: AblationRequest) -> AblationRequest:
        if request.plan:
            return request
        return request.model_copy(update={"plan": plan_ablation(request.config)})

    def prepare(self, request: AblationRequest) -> None:
        """Dataset plus the shared codec, semantic encoder and extractor."""
        root = Path(request.workdir)
        self.datasets.ensure(request.config, root / "data")
        for stage in (TrainStage.CODEC, TrainStage.SEMANTIC, TrainStage.EXTRACTOR):
            self.training.ensure(
                TrainRequest(
                    stage=stage, config=request.config, data_dir=str(root / "data"), out_dir=str(root / "shared")
                )
            )

    def train_variant(self, request: AblationRequest, plan: VariantPlan) -> str:
        root = Path(request.workdir)
        manifest = self.training.ensure(
            TrainRequest(
                stage=TrainStage.DIFFUSION,
                config=variant_config(request.config, plan.variant),
                data_dir=str(root / "data"),
                out_dir=str(root / "variants" / plan.variant.name),
                prerequisites_dir=str(root / "shared"),
            )
        )
        logger.info("Variant %s ready (weights %s)", plan.variant.name, manifest.weights_hash[:12])
        return plan.variant.name

    def run_cell(self, request: AblationRequest, cell: CellSpec) -> AblationCell:
        root = Path(request.workdir)
        config = request.config
        ckpt = root / "variants" / cell.variant
        samples = root / "samples" / cell.slug
        reports = root / "reports" / cell.slug
        self.sampling.sample(
            SampleRequest(
                ckpt_dir=str(ckpt),
                data_dir=str(root / "data"),
                out_dir=str(samples),
                guidance_scale=cell.guidance_scale,
                steps=config.diffusion.steps,
                seed=config.diffusion.seed,
                no_height=cell.no_height,
                height_noise_sigma=cell.height_noise_sigma,
            )
        )
        report = self.evaluation.evaluate(
            EvaluateRequest(
                gen_dir=str(samples),
                gt_dir=str(root / "data"),
                out_dir=str(reports),
                config=config,
                ckpt_dir=str(root / "shared"),
            )
        )
        per_sample = pd.read_csv(reports / PER_SAMPLE, dtype={"id": str})
        return AblationCell(
            name=cell.name,
            variant=cell.variant,
            guidance_scale=cell.guidance_scale,
            height_noise_sigma=cell.height_noise_sigma,
            no_height=cell.no_height,
            config_hash=config_hash(variant_config(config, VARIANTS[cell.variant])),
            checkpoint_hash=checkpoints.checkpoint_hash(ckpt),
            report=report,
            per_sample_ssim=dict(zip(per_sample["id"], per_sample["ssim"].astype(float))),
        )

    def summarize(
        self, request: AblationRequest, cells: list[AblationCell], cancelled: bool = False
    ) -> AblationReport:
        report = AblationReport(
            config_hash=config_hash(request.config),
            cells=cells,
            assertions=ordering_assertions(request.config, cells),
            cfg_curve=cfg_curve(request.config, cells),
            cancelled=cancelled,
        )
        path = Path(request.workdir) / ABLATION
        try:
            path.write_text(json.dumps(report.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True))
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        for a in report.assertions:
            logger.info(
                "%s %s: %s (%s) vs %s (%s), p=%s",
                "PASS" if a.passed else "FAIL",
                a.claim,
                a.better,
                a.better_ssim,
                a.worse,
                a.worse_ssim,
                a.p_value,
            )
        return report

    def run(self, request: AblationRequest, should_cancel: Callable[[], bool] = lambda: False) -> AblationReport:
        """Run the whole grid in this process, reusing finished stages."""
        request = self.with_plan(request)
        total = sum(len(p.cells) for p in request.plan)
        logger.info("Ablation: %d variants, %d cells in %s", len(request.plan), total, request.workdir)
        self.prepare(request)
        cells: list[AblationCell] = []
        for plan in request.plan:
            if should_cancel():
                break
            self.train_variant(request, plan)
            for cell in plan.cells:
                if should_cancel():
                    break
                cells.append(self.run_cell(request, cell))
                logger.info("Cell %d/%d done: %s", len(cells), total, cell.name)
        return self.summarize(request, cells, cancelled=len(cells) < total)
