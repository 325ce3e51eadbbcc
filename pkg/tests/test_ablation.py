import json

import pytest

from aerial2ground.domain.config import ExperimentConfig, with_updates
from aerial2ground.domain.reports import AblationCell, MetricReport, MetricValues
from aerial2ground.domain.requests import AblationRequest
from aerial2ground.errors import ConfigError
from aerial2ground.services.ablation import (
    ABLATION,
    VARIANTS,
    AblationService,
    cell_name,
    cfg_curve,
    compare_cells,
    ordering_assertions,
    plan_ablation,
    variant_config,
)

CONFIG = ExperimentConfig()


def make_cell(name, ssims, ssim=None):
    variant = name.split("/")[0]
    report = None
    if ssim is not None:
        report = MetricReport(
            metrics=MetricValues(ssim=ssim, inception_score=1.0, lpips=0.0, clip_sim=0.0),
            per_sample="per_sample.csv",
            n=1,
            extractor_hash="e",
            semantic_hash="s",
        )
    return AblationCell(
        name=name,
        variant=variant,
        guidance_scale=2.0,
        config_hash="c",
        checkpoint_hash="k",
        report=report,
        per_sample_ssim={f"{i:06d}": v for i, v in enumerate(ssims)},
    )


# ── plan ────────────────────────────────────────────────────────────


def test_cell_names_and_slugs():
    assert cell_name("full", 2.0) == "full/s=2/sigma=0"
    assert cell_name("full", 2.0, 0.2) == "full/s=2/sigma=0.2"
    assert cell_name("full", 4.0, no_height=True) == "full/s=4/sigma=0/no_height"
    plan = plan_ablation(CONFIG)
    slugs = [cell.slug for p in plan for cell in p.cells]
    assert "full__s2__sigma0__no_height" in slugs
    assert all("/" not in s and "=" not in s for s in slugs)


def test_compact_plan():
    plan = {p.variant.name: [c.name for c in p.cells] for p in plan_ablation(CONFIG)}
    assert list(plan) == ["full", "no_height", "vae_only", "clip_only", "none"]
    assert plan["full"] == [
        "full/s=2/sigma=0",
        "full/s=1/sigma=0",
        "full/s=4/sigma=0",
        "full/s=8/sigma=0",
        "full/s=2/sigma=0.2",
        "full/s=2/sigma=0/no_height",
    ]
    for name in ("no_height", "vae_only", "clip_only", "none"):
        assert plan[name] == [f"{name}/s=2/sigma=0"]


def test_full_grid_skips_height_cells_for_heightless_variants():
    config = with_updates(CONFIG, ablation={"full_grid": True})
    plan = {p.variant.name: p.cells for p in plan_ablation(config)}
    # Four scales times {clean, no_height, sigma 0.2}.
    assert len(plan["full"]) == len(plan["vae_only"]) == 12
    assert len(plan["none"]) == len(plan["clip_only"]) == len(plan["no_height"]) == 4
    assert not any(c.no_height and c.height_noise_sigma for c in plan["full"])
    assert all(c.height_noise_sigma == 0 and not c.no_height for c in plan["none"])


def test_unknown_variant_is_a_config_error():
    with pytest.raises(ConfigError):
        plan_ablation(with_updates(CONFIG, ablation={"variants": ["full", "bogus"]}))


def test_variant_config_sets_only_the_flags():
    config = variant_config(CONFIG, VARIANTS["vae_only"])
    denoiser = config.diffusion.denoiser
    assert (denoiser.use_clip, denoiser.use_vae_cond, denoiser.use_height) == (False, True, True)
    assert config.diffusion.model_copy(update={"denoiser": CONFIG.diffusion.denoiser}) == CONFIG.diffusion


# ── assertions ──────────────────────────────────────────────────────


def test_consistent_improvement_passes_with_significance():
    better = make_cell("full/s=2/sigma=0", [0.6, 0.7, 0.8, 0.65, 0.75, 0.9])
    worse = make_cell("no_height/s=2/sigma=0", [0.5, 0.6, 0.6, 0.6, 0.7, 0.8])
    result = compare_cells("claim", better, worse, alpha=0.05, require_significance=True)
    assert result.p_value == pytest.approx(0.03125)
    assert result.passed
    assert result.better_ssim > result.worse_ssim


def test_small_improvement_fails_significance_but_passes_ordering():
    better = make_cell("vae_only/s=2/sigma=0", [0.6, 0.7, 0.8, 0.65, 0.75])
    worse = make_cell("none/s=2/sigma=0", [0.5, 0.6, 0.6, 0.6, 0.7])
    strict = compare_cells("claim", better, worse, alpha=0.05, require_significance=True)
    assert strict.p_value == pytest.approx(0.0625)
    assert not strict.passed
    assert compare_cells("claim", better, worse, alpha=0.05, require_significance=False).passed


def test_comparison_uses_shared_ids_only():
    better = make_cell("a", [0.9, 0.9])
    worse = make_cell("b", [])
    result = compare_cells("claim", better, worse, alpha=0.05, require_significance=False)
    assert result.detail == "no shared samples"
    assert not result.passed
    tied = compare_cells("claim", make_cell("a", [0.5] * 4), make_cell("b", [0.5] * 4), alpha=0.05, require_significance=True)
    assert tied.p_value is None
    assert tied.detail
    assert not tied.passed


def test_assertions_skip_claims_outside_the_grid():
    cells = [
        make_cell(cell_name("full", 2.0), [0.6, 0.7, 0.8, 0.65, 0.75, 0.9]),
        make_cell(cell_name("no_height", 2.0), [0.5, 0.6, 0.6, 0.6, 0.7, 0.8]),
    ]
    assertions = ordering_assertions(CONFIG, cells)
    assert [a.claim for a in assertions] == ["height conditioning improves SSIM"]
    assert assertions[0].require_significance


def test_cfg_curve_follows_the_full_variant():
    cells = [
        make_cell(cell_name("full", 4.0), [], ssim=0.4),
        make_cell(cell_name("full", 1.0), [], ssim=0.3),
        make_cell(cell_name("none", 2.0), [], ssim=0.9),
        make_cell(cell_name("full", 8.0), []),
    ]
    assert cfg_curve(CONFIG, cells) == [(1.0, 0.3), (4.0, 0.4)]


# ── in-process run ──────────────────────────────────────────────────


class _Steps(AblationService):
    """Records the calls `run` makes instead of training anything."""

    def __init__(self) -> None:
        super().__init__(None, None, None, None)
        self.calls: list[str] = []

    def prepare(self, request):
        self.calls.append("prepare")

    def train_variant(self, request, plan):
        self.calls.append(f"train {plan.variant.name}")
        return plan.variant.name

    def run_cell(self, request, cell):
        self.calls.append(f"cell {cell.name}")
        return make_cell(cell.name, [0.5, 0.6])


def test_run_walks_the_plan_and_writes_the_report(tmp_path):
    config = with_updates(CONFIG, ablation={"variants": ["full", "none"]})
    service = _Steps()
    report = service.run(AblationRequest(config=config, workdir=str(tmp_path)))
    assert service.calls[:3] == ["prepare", "train full", "cell full/s=2/sigma=0"]
    assert service.calls[-2:] == ["train none", "cell none/s=2/sigma=0"]
    assert len(report.cells) == 7
    assert not report.cancelled
    saved = json.loads((tmp_path / ABLATION).read_text())
    assert saved["config_hash"] == report.config_hash
    assert len(saved["cells"]) == 7


def test_cancelled_run_keeps_finished_cells(tmp_path):
    service = _Steps()
    calls = iter(range(100))
    report = service.run(AblationRequest(config=CONFIG, workdir=str(tmp_path)), should_cancel=lambda: next(calls) >= 3)
    assert report.cancelled
    assert [c.name for c in report.cells] == ["full/s=2/sigma=0", "full/s=1/sigma=0"]
