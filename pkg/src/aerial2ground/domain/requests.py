"""
Stage requests, ablation plans and run records.

These are the payloads that cross process boundaries: CLI → service, and
workflow → activity through Temporal's pydantic_data_converter. Paths
travel as strings so the JSON payloads stay plain.
"""

from enum import Enum

from pydantic import BaseModel, Field

from aerial2ground.domain.config import ExperimentConfig
from aerial2ground.domain.reports import AblationCell, AblationReport


class TrainStage(str, Enum):
    CODEC = "codec"
    SEMANTIC = "semantic"
    EXTRACTOR = "extractor"
    DIFFUSION = "diffusion"


class AblationStatus(str, Enum):
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CANCELLED = "CANCELLED"


# ── Stage requests ───────────────────────────────────────────────────


class GenerateDataRequest(BaseModel):
    config: ExperimentConfig
    out_dir: str


class TrainRequest(BaseModel):
    stage: TrainStage
    config: ExperimentConfig
    data_dir: str
    out_dir: str
    # Directory holding codec/semantic checkpoints for the diffusion stage;
    # defaults to out_dir.
    prerequisites_dir: str | None = None
    resume: bool = True


class SampleRequest(BaseModel):
    ckpt_dir: str
    data_dir: str
    out_dir: str
    guidance_scale: float = 2.0
    steps: int = Field(50, ge=1)
    seed: int = 0
    no_height: bool = False
    height_noise_sigma: float = Field(0.0, ge=0.0)
    split: str = "test"
    limit: int | None = None
    batch_size: int = Field(16, ge=1)


class SampleRun(BaseModel):
    """Provenance written as run.json next to the generated images."""

    schema_version: int = 1
    ids: list[str]
    checkpoint_hash: str
    config_hash: str
    data_hash: str
    guidance_scale: float
    steps: int
    seed: int
    no_height: bool
    height_noise_sigma: float
    mean_seconds_per_image: float


class EvaluateRequest(BaseModel):
    gen_dir: str
    gt_dir: str
    out_dir: str
    config: ExperimentConfig
    ckpt_dir: str  # holds the extractor and semantic checkpoints


class CompareRequest(BaseModel):
    ckpt_dir: str
    data_dir: str
    out_path: str
    ids: list[str] = Field(default_factory=list)
    count: int = Field(4, ge=1)
    guidance_scale: float = 2.0
    steps: int = Field(50, ge=1)
    seed: int = 0


# ── Ablation plan ────────────────────────────────────────────────────


class VariantSpec(BaseModel):
    """A separately trained denoiser: which condition families it consumes."""

    name: str
    use_clip: bool
    use_vae_cond: bool
    use_height: bool


class CellSpec(BaseModel):
    """One sampling + evaluation run of a trained variant."""

    name: str
    variant: str
    guidance_scale: float
    height_noise_sigma: float = 0.0
    no_height: bool = False

    @property
    def slug(self) -> str:
        return self.name.replace("/", "__").replace("=", "")


class VariantPlan(BaseModel):
    variant: VariantSpec
    cells: list[CellSpec]


class AblationRequest(BaseModel):
    config: ExperimentConfig
    workdir: str
    plan: list[VariantPlan] = Field(default_factory=list)


class AblationProgress(BaseModel):
    """Answer to the workflow's progress query."""

    status: AblationStatus = AblationStatus.RUNNING
    total_cells: int = 0
    completed_cells: list[str] = Field(default_factory=list)
    trained_variants: list[str] = Field(default_factory=list)
    cancelled: bool = False


# ── Activity payloads ────────────────────────────────────────────────


class VariantTask(BaseModel):
    request: AblationRequest
    plan: VariantPlan


class CellTask(BaseModel):
    request: AblationRequest
    cell: CellSpec


class SummaryTask(BaseModel):
    request: AblationRequest
    cells: list[AblationCell] = Field(default_factory=list)
    cancelled: bool = False


class AblationResult(BaseModel):
    """What AblationWorkflow returns; report is None when it failed."""

    status: AblationStatus
    report: AblationReport | None = None
    error: str = ""
