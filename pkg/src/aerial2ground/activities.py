"""
Temporal activities: thin wrappers delegating to the service layer.

Each activity takes one pydantic payload (serialized by
pydantic_data_converter) and runs the blocking torch work in a thread via
`asyncio.to_thread`, so the worker's event loop keeps polling while a stage
trains. Exceptions propagate to the workflow's RetryPolicy; the ones in
`errors.NON_RETRYABLE` fail the activity at the first attempt.
"""

import asyncio
import logging

from temporalio import activity

from aerial2ground.domain.reports import AblationCell, AblationReport
from aerial2ground.domain.requests import AblationRequest, CellTask, SummaryTask, VariantTask
from aerial2ground.services.factory import ServiceFactory

logger = logging.getLogger(__name__)


@activity.defn
async def prepare_ablation(input: AblationRequest) -> None:
    """Generate the dataset and train the shared codec, semantic encoder and extractor."""
    logger.info("Activity prepare_ablation started in %s", input.workdir)
    await asyncio.to_thread(ServiceFactory.get_ablation_service().prepare, input)
    logger.info("Activity prepare_ablation completed in %s", input.workdir)


@activity.defn
async def train_variant(input: VariantTask) -> str:
    logger.info("Activity train_variant started for %s", input.plan.variant.name)
    name = await asyncio.to_thread(ServiceFactory.get_ablation_service().train_variant, input.request, input.plan)
    logger.info("Activity train_variant completed for %s", name)
    return name


@activity.defn
async def run_cell(input: CellTask) -> AblationCell:
    """Sample and evaluate one cell of the grid."""
    logger.info("Activity run_cell started for %s", input.cell.name)
    cell = await asyncio.to_thread(ServiceFactory.get_ablation_service().run_cell, input.request, input.cell)
    logger.info("Activity run_cell completed for %s", input.cell.name)
    return cell


@activity.defn
async def summarize_ablation(input: SummaryTask) -> AblationReport:
    logger.info("Activity summarize_ablation started with %d cells", len(input.cells))
    return await asyncio.to_thread(
        ServiceFactory.get_ablation_service().summarize, input.request, input.cells, input.cancelled
    )


ACTIVITIES = [prepare_ablation, train_variant, run_cell, summarize_ablation]
