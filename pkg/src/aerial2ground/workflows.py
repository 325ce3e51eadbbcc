"""
Temporal workflow: AblationWorkflow.

Runs the ablation grid durably. The server persists progress at every
activity boundary, so a crashed worker resumes at the next unfinished
variant or cell; finished stages are additionally reused from disk by the
services' `ensure` methods.

Execution flow:
    1. prepare_ablation      dataset + shared codec / semantic / extractor
    2. per variant, up to `max_parallel_variants` at a time:
         train_variant, then run_cell for each of its cells
    3. summarize_ablation    assertions, cfg curve, ablation.json

Only `workflow.logger` is used in here; everything with side effects
happens in activities.
"""

import asyncio
from datetime import timedelta

from temporalio import workflow
from temporalio.common import RetryPolicy

with workflow.unsafe.imports_passed_through():
    from aerial2ground.activities import prepare_ablation, run_cell, summarize_ablation, train_variant
    from aerial2ground.domain.reports import AblationCell
    from aerial2ground.domain.requests import (
        AblationProgress,
        AblationRequest,
        AblationResult,
        AblationStatus,
        CellTask,
        SummaryTask,
        VariantPlan,
        VariantTask,
    )
    from aerial2ground.errors import NON_RETRYABLE


@workflow.defn
class AblationWorkflow:
    """Trains every variant of the plan and evaluates its cells.

    Supports:
        - **Signal** `cancel`: stops scheduling new variants and cells; the
          report is still written from the cells finished so far.
        - **Query** `progress`: status, finished cells and trained variants.
    """

    def __init__(self) -> None:
        self.state = AblationProgress()

    # ── Signal ────────────────────────────────────────────────────

    @workflow.signal
    async def cancel(self) -> None:
        self.state.cancelled = True

    # ── Query ─────────────────────────────────────────────────────

    @workflow.query
    def progress(self) -> AblationProgress:
        return self.state

    # ── Helpers ──────────────────────────────────────────────────

    def _options(self, req: AblationRequest) -> dict:
        orchestration = req.config.orchestration
        return {
            "start_to_close_timeout": timedelta(hours=orchestration.activity_timeout_hours),
            "retry_policy": RetryPolicy(
                maximum_attempts=orchestration.max_attempts,
                initial_interval=timedelta(seconds=5),
                backoff_coefficient=2.0,
                non_retryable_error_types=[cls.__name__ for cls in NON_RETRYABLE],
            ),
        }

    async def _run_variant(self, req: AblationRequest, plan: VariantPlan, options: dict) -> list[AblationCell]:
        cells: list[AblationCell] = []
        if self.state.cancelled:
            return cells
        await workflow.execute_activity(train_variant, VariantTask(request=req, plan=plan), **options)
        self.state.trained_variants.append(plan.variant.name)
        for spec in plan.cells:
            if self.state.cancelled:
                break
            cell = await workflow.execute_activity(run_cell, CellTask(request=req, cell=spec), **options)
            cells.append(cell)
            self.state.completed_cells.append(spec.name)
        return cells

    # ── Run ──────────────────────────────────────────────────────

    @workflow.run
    async def run(self, req: AblationRequest) -> AblationResult:
        if not req.plan:
            # The plan is computed by the client; an empty one is a bad request.
            return AblationResult(status=AblationStatus.FAILED, error="ablation request carries no plan")
        self.state.total_cells = sum(len(p.cells) for p in req.plan)
        options = self._options(req)
        workflow.logger.info(
            "Starting ablation in %s: %d variants, %d cells", req.workdir, len(req.plan), self.state.total_cells
        )

        try:
            await workflow.execute_activity(prepare_ablation, req, **options)

            width = max(req.config.orchestration.max_parallel_variants, 1)
            cells: list[AblationCell] = []
            for start in range(0, len(req.plan), width):
                if self.state.cancelled:
                    break
                chunk = req.plan[start : start + width]
                results = await asyncio.gather(*(self._run_variant(req, plan, options) for plan in chunk))
                for variant_cells in results:
                    cells.extend(variant_cells)

            cancelled = self.state.cancelled or len(cells) < self.state.total_cells
            report = await workflow.execute_activity(
                summarize_ablation,
                SummaryTask(request=req, cells=cells, cancelled=cancelled),
                **options,
            )
        except Exception as exc:
            workflow.logger.exception("Ablation in %s failed", req.workdir)
            self.state.status = AblationStatus.FAILED
            return AblationResult(status=AblationStatus.FAILED, error=str(exc))

        self.state.status = AblationStatus.CANCELLED if report.cancelled else AblationStatus.COMPLETED
        workflow.logger.info(
            "Ablation in %s finished: %s, %d/%d cells",
            req.workdir,
            self.state.status.value,
            len(cells),
            self.state.total_cells,
        )
        return AblationResult(status=self.state.status, report=report)
