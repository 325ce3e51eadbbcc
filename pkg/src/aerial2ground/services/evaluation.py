"""Evaluation service (eval): read-only over images and checkpoints."""

import logging
from pathlib import Path

from aerial2ground import checkpoints
from aerial2ground.domain.provenance import config_hash
from aerial2ground.domain.reports import MetricReport
from aerial2ground.domain.requests import EvaluateRequest
from aerial2ground.metrics.evaluate import evaluate_run
from aerial2ground.models.tensors import select_device

logger = logging.getLogger(__name__)


class EvaluationService:
    def __init__(self, device: str | None = None) -> None:
        self.device = select_device(device)

    def evaluate(self, request: EvaluateRequest) -> MetricReport:
        ckpt = Path(request.ckpt_dir)
        extractor = checkpoints.load_extractor(ckpt).to(self.device)
        semantic = checkpoints.load_semantic(ckpt).to(self.device)
        return evaluate_run(
            Path(request.gen_dir),
            Path(request.gt_dir),
            Path(request.out_dir),
            request.config.eval,
            extractor,
            semantic,
            config_hash=config_hash(request.config.eval),
        )
