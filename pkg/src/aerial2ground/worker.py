"""
Temporal worker: polls the experiments task queue (a2g-worker).

Registers AblationWorkflow and the ablation activities. Several workers can
poll the same queue; each activity owns its checkpoint or sample directory,
so variants trained in parallel never share files. The server address and
task queue come from the `orchestration` config section.

Run with:
    a2g-worker --config experiment.json --device cuda
"""

import argparse
import asyncio
import logging
from pathlib import Path

from temporalio.client import Client

# Must match the client in cli.py, otherwise payloads do not round-trip.
from temporalio.contrib.pydantic import pydantic_data_converter
from temporalio.worker import Worker

from aerial2ground.activities import ACTIVITIES
from aerial2ground.domain.config import OrchestrationConfig, load_config
from aerial2ground.errors import Aerial2GroundError
from aerial2ground.services.factory import ServiceFactory
from aerial2ground.workflows import AblationWorkflow

logger = logging.getLogger(__name__)


async def run_worker(orchestration: OrchestrationConfig) -> None:
    client = await Client.connect(orchestration.temporal_address, data_converter=pydantic_data_converter)
    logger.info(
        "Connected to Temporal at %s, starting worker on queue %r",
        orchestration.temporal_address,
        orchestration.task_queue,
    )
    # Activities are async and hand their torch work to asyncio.to_thread; each
    # holds its slot until that thread returns.
    worker = Worker(
        client,
        task_queue=orchestration.task_queue,
        workflows=[AblationWorkflow],
        activities=ACTIVITIES,
        max_concurrent_activities=max(orchestration.max_parallel_variants, 1),
    )
    await worker.run()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="a2g-worker", description="Run a Temporal worker for ablation grids")
    parser.add_argument("--config", type=Path, default=None, help="Experiment config JSON")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Config override")
    parser.add_argument("--device", default=None, help="torch device (default: cuda if available)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    args = parser.parse_args(argv)

    logging.basicConfig(level=args.log_level, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.set)
    except Aerial2GroundError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    ServiceFactory.configure(args.device)
    asyncio.run(run_worker(config.orchestration))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
