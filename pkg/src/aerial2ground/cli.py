"""
Command-line front end (a2g).

    a2g gen-data --config C --out data
    a2g train    --stage {codec,semantic,extractor,diffusion} --data data --out ckpt
    a2g sample   --ckpt ckpt --data data --out samples --scale 2 --steps 50 --seed 0
    a2g eval     --gen samples --gt data --ckpt ckpt --out report
    a2g ablate   --config C --out grid [--temporal]
    a2g compare  --ckpt ckpt --data data --out compare.png

Relative paths resolve against `--workdir`. Config values come from one JSON
file, then `--set section.field=value` overrides, then the dedicated flags
(`--seed`, `--epochs`, ...). Exit codes: 0 success, 2 validation error,
3 missing prerequisite stage.
"""

import argparse
import asyncio
import json
import logging
from pathlib import Path

from pydantic import ValidationError
from temporalio.client import Client
from temporalio.contrib.pydantic import pydantic_data_converter

from aerial2ground.diffusion.sampler import DEFAULT_GUIDANCE
from aerial2ground.domain.config import ExperimentConfig, load_config
from aerial2ground.domain.provenance import config_hash
from aerial2ground.domain.requests import (
    AblationRequest,
    AblationResult,
    CompareRequest,
    EvaluateRequest,
    SampleRequest,
    TrainRequest,
    TrainStage,
)
from aerial2ground.errors import Aerial2GroundError
from aerial2ground.services.factory import ServiceFactory
from aerial2ground.workflows import AblationWorkflow

logger = logging.getLogger(__name__)


# ── Argument parsing ─────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", type=Path, default=Path("."), help="Base for relative paths")
    common.add_argument("--config", type=Path, default=None, help="Experiment config JSON")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Config override")
    common.add_argument("--device", default=None, help="torch device (default: cuda if available)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="a2g", description="Aerial-to-ground latent diffusion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Render the paired synthetic dataset")
    p.add_argument("--out", type=Path, default=Path("data"))
    p.add_argument("--seed", type=int, default=None, help="Dataset seed")

    p = sub.add_parser("train", parents=[common], help="Train one stage")
    p.add_argument("--stage", required=True, choices=[s.value for s in TrainStage])
    p.add_argument("--data", type=Path, default=Path("data"))
    p.add_argument("--out", type=Path, default=Path("ckpt"))
    p.add_argument("--prerequisites", type=Path, default=None, help="Directory with codec/semantic checkpoints")
    p.add_argument("--no-resume", action="store_true", help="Ignore a saved diffusion resume state")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("sample", parents=[common], help="Generate ground views for a dataset split")
    p.add_argument("--ckpt", type=Path, default=Path("ckpt"))
    p.add_argument("--data", type=Path, default=Path("data"))
    p.add_argument("--out", type=Path, default=Path("samples"))
    p.add_argument("--scale", type=float, default=DEFAULT_GUIDANCE, help="Classifier-free guidance scale")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-height", action="store_true", help="Zero the height condition at inference")
    p.add_argument("--height-noise", type=float, default=0.0, metavar="SIGMA", help="Perturb heights before encoding")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=16)

    p = sub.add_parser("eval", parents=[common], help="Score generated views against ground truth")
    p.add_argument("--gen", type=Path, default=Path("samples"))
    p.add_argument("--gt", type=Path, default=Path("data"))
    p.add_argument("--ckpt", type=Path, default=Path("ckpt"), help="Directory with extractor/semantic checkpoints")
    p.add_argument("--out", type=Path, default=Path("report"), help="Report directory (or a path to report.json)")
    p.add_argument("--seed", type=int, default=None, help="KID subset seed")

    p = sub.add_parser("ablate", parents=[common], help="Run the ablation grid")
    p.add_argument("--out", type=Path, default=Path("ablation"))
    p.add_argument("--temporal", action="store_true", help="Submit to a Temporal worker instead of running here")
    p.add_argument("--workflow-id", default=None)
    p.add_argument("--cancel-after", type=float, default=None, help="Seconds before sending cancel (temporal)")
    p.add_argument("--seed", type=int, default=None, help="Diffusion training/sampling seed")
    p.add_argument("--epochs", type=int, default=None, help="Diffusion epochs per variant")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--scale", type=float, default=None, help="Guidance scale shared by all variants")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("compare", parents=[common], help="Contact sheet: aerial | no height | height | truth")
    p.add_argument("--ckpt", type=Path, default=Path("ckpt"))
    p.add_argument("--data", type=Path, default=Path("data"))
    p.add_argument("--out", type=Path, default=Path("compare.png"))
    p.add_argument("--ids", nargs="*", default=[])
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--scale", type=float, default=DEFAULT_GUIDANCE)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    """Dedicated flags as `--set` style overrides for the section they target."""
    section = {
        "gen-data": "dataset",
        "train": getattr(args, "stage", None),
        "eval": "eval",
        "ablate": "diffusion",
    }.get(args.command)
    if section is None:
        return []
    flags = {"seed": "seed", "epochs": "epochs", "batch_size": "batch_size"}
    if args.command == "ablate":
        flags.update(scale="guidance_scale", steps="steps")
    return [
        f"{section}.{field}={json.dumps(getattr(args, flag))}"
        for flag, field in flags.items()
        if getattr(args, flag, None) is not None
    ]


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(_path(args, args.config) if args.config else None, [*args.set, *_flag_overrides(args)])
    logger.info("Config %s", config_hash(config)[:12])
    return config


def _path(args: argparse.Namespace, path: Path) -> Path:
    return path if path.is_absolute() else args.workdir / path


def _emit(payload: object) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ── Commands ─────────────────────────────────────────────────────────


def cmd_gen_data(args: argparse.Namespace) -> None:
    config = _config(args)
    config.generator.check()
    service = ServiceFactory.get_dataset_service()
    manifest = service.generate(config, _path(args, args.out))
    _emit(service.summary(manifest))


def cmd_train(args: argparse.Namespace) -> None:
    manifest = ServiceFactory.get_training_service().train(
        TrainRequest(
            stage=TrainStage(args.stage),
            config=_config(args),
            data_dir=str(_path(args, args.data)),
            out_dir=str(_path(args, args.out)),
            prerequisites_dir=str(_path(args, args.prerequisites)) if args.prerequisites else None,
            resume=not args.no_resume,
        )
    )
    _emit({"stage": manifest.stage, "epochs": manifest.epochs, "weights_hash": manifest.weights_hash})


def cmd_sample(args: argparse.Namespace) -> None:
    run = ServiceFactory.get_sampling_service().sample(
        SampleRequest(
            ckpt_dir=str(_path(args, args.ckpt)),
            data_dir=str(_path(args, args.data)),
            out_dir=str(_path(args, args.out)),
            guidance_scale=args.scale,
            steps=args.steps,
            seed=args.seed,
            no_height=args.no_height,
            height_noise_sigma=args.height_noise,
            split=args.split,
            limit=args.limit,
            batch_size=args.batch_size,
        )
    )
    _emit(
        {
            "images": len(run.ids),
            "checkpoint_hash": run.checkpoint_hash,
            "seconds_per_image": run.mean_seconds_per_image,
        }
    )


def cmd_eval(args: argparse.Namespace) -> None:
    out = _path(args, args.out)
    report = ServiceFactory.get_evaluation_service().evaluate(
        EvaluateRequest(
            gen_dir=str(_path(args, args.gen)),
            gt_dir=str(_path(args, args.gt)),
            out_dir=str(out.parent if out.suffix == ".json" else out),
            config=_config(args),
            ckpt_dir=str(_path(args, args.ckpt)),
        )
    )
    _emit(report.model_dump(mode="json", by_alias=True))


async def submit_ablation(request: AblationRequest, workflow_id: str, cancel_after: float | None) -> AblationResult:
    orchestration = request.config.orchestration
    client = await Client.connect(orchestration.temporal_address, data_converter=pydantic_data_converter)
    logger.info("Starting workflow %s on queue %r", workflow_id, orchestration.task_queue)
    handle = await client.start_workflow(
        AblationWorkflow.run,
        request,
        id=workflow_id,
        task_queue=orchestration.task_queue,
    )
    if cancel_after is not None:
        await asyncio.sleep(cancel_after)
        logger.info("Sending cancel signal to %s", workflow_id)
        await handle.signal(AblationWorkflow.cancel)
    progress = await handle.query(AblationWorkflow.progress)
    logger.info("Progress: %d/%d cells", len(progress.completed_cells), progress.total_cells)
    return await handle.result()


def cmd_ablate(args: argparse.Namespace) -> None:
    config = _config(args)
    service = ServiceFactory.get_ablation_service()
    request = service.with_plan(AblationRequest(config=config, workdir=str(_path(args, args.out).resolve())))
    if args.temporal:
        workflow_id = args.workflow_id or f"ablation-{config_hash(config)[:12]}"
        result = asyncio.run(submit_ablation(request, workflow_id, args.cancel_after))
        print(result.model_dump_json(indent=2))
        return
    report = service.run(request)
    _emit(
        {
            "cells": len(report.cells),
            "cancelled": report.cancelled,
            "assertions": {a.claim: a.passed for a in report.assertions},
            "cfg_curve": report.cfg_curve,
        }
    )


def cmd_compare(args: argparse.Namespace) -> None:
    out = ServiceFactory.get_compare_service().compare(
        CompareRequest(
            ckpt_dir=str(_path(args, args.ckpt)),
            data_dir=str(_path(args, args.data)),
            out_path=str(_path(args, args.out)),
            ids=args.ids,
            count=args.count,
            guidance_scale=args.scale,
            steps=args.steps,
            seed=args.seed,
        )
    )
    _emit({"sheet": str(out)})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    ServiceFactory.configure(args.device)
    try:
        COMMANDS[args.command](args)
    except Aerial2GroundError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return exc.exit_code
    except ValidationError as exc:
        logger.error("%s failed: invalid request: %s", args.command, exc)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
