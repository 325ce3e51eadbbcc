"""Versioned report documents: report.json and ablation.json."""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class MetricValues(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    ssim: float = Field(..., ge=-1.0, le=1.0)
    inception_score: float = Field(..., ge=1.0, alias="is")
    kid: float | None = None  # undefined for fewer than two samples
    lpips: float = Field(..., ge=0.0)
    clip_sim: float = Field(..., ge=-1.0, le=1.0)


class MetricReport(BaseModel):
    schema_version: Literal[1] = 1
    metrics: MetricValues
    per_sample: str  # CSV path, relative to the report
    n: int = Field(..., ge=1)
    extractor_hash: str
    semantic_hash: str
    config_hash: str = ""
    seed: int = 0


class AblationCell(BaseModel):
    """One sampling run of one trained variant."""

    name: str
    variant: str
    guidance_scale: float
    height_noise_sigma: float = 0.0
    no_height: bool = False
    config_hash: str
    checkpoint_hash: str
    report: MetricReport | None = None
    per_sample_ssim: dict[str, float] = Field(default_factory=dict)


class OrderingAssertion(BaseModel):
    """`better` is expected to score higher mean SSIM than `worse`."""

    claim: str
    better: str
    worse: str
    better_ssim: float | None = None
    worse_ssim: float | None = None
    p_value: float | None = None
    require_significance: bool = False
    passed: bool = False
    detail: str = ""


class AblationReport(BaseModel):
    schema_version: Literal[1] = 1
    config_hash: str
    cells: list[AblationCell] = Field(default_factory=list)
    assertions: list[OrderingAssertion] = Field(default_factory=list)
    cfg_curve: list[tuple[float, float]] = Field(default_factory=list)  # (scale, mean SSIM)
    cancelled: bool = False

    def cell(self, name: str) -> AblationCell | None:
        return next((c for c in self.cells if c.name == name), None)
