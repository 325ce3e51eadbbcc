import asyncio

from temporalio.testing import ActivityEnvironment

from aerial2ground import activities, worker
from aerial2ground.domain.config import ExperimentConfig, OrchestrationConfig
from aerial2ground.domain.reports import AblationCell, AblationReport
from aerial2ground.domain.requests import AblationRequest, CellTask, SummaryTask, VariantTask
from aerial2ground.services.ablation import plan_ablation
from aerial2ground.services.factory import ServiceFactory


class StubAblationService:
    def __init__(self) -> None:
        self.calls: list[tuple[str, object]] = []

    def prepare(self, request):
        self.calls.append(("prepare", request.workdir))

    def train_variant(self, request, plan):
        self.calls.append(("train", plan.variant.name))
        return plan.variant.name

    def run_cell(self, request, cell):
        self.calls.append(("cell", cell.name))
        return AblationCell(
            name=cell.name, variant=cell.variant, guidance_scale=cell.guidance_scale, config_hash="c", checkpoint_hash="k"
        )

    def summarize(self, request, cells, cancelled=False):
        self.calls.append(("summarize", len(cells)))
        return AblationReport(config_hash="c", cells=cells, cancelled=cancelled)


def request(tmp_path):
    config = ExperimentConfig()
    return AblationRequest(config=config, workdir=str(tmp_path), plan=plan_ablation(config))


async def _execute(fn, arg):
    return await ActivityEnvironment().run(fn, arg)


def run(fn, arg):
    return asyncio.run(_execute(fn, arg))


def test_activities_delegate_to_the_cached_service(tmp_path):
    stub = StubAblationService()
    ServiceFactory._ablation = stub
    req = request(tmp_path)
    plan = req.plan[0]

    assert run(activities.prepare_ablation, req) is None
    assert run(activities.train_variant, VariantTask(request=req, plan=plan)) == "full"
    cell = run(activities.run_cell, CellTask(request=req, cell=plan.cells[0]))
    report = run(activities.summarize_ablation, SummaryTask(request=req, cells=[cell], cancelled=True))

    assert cell.name == "full/s=2/sigma=0"
    assert report.cancelled
    assert stub.calls == [
        ("prepare", str(tmp_path)),
        ("train", "full"),
        ("cell", "full/s=2/sigma=0"),
        ("summarize", 1),
    ]


def test_factory_caches_and_resets():
    first = ServiceFactory.get_ablation_service()
    assert ServiceFactory.get_ablation_service() is first
    assert first.sampling is ServiceFactory.get_sampling_service()
    assert ServiceFactory.get_compare_service().sampling is first.sampling
    ServiceFactory.reset()
    assert ServiceFactory.get_ablation_service() is not first


def test_worker_caps_concurrent_activities(monkeypatch):
    built = {}

    class RecordingWorker:
        def __init__(self, client, **kwargs):
            built.update(kwargs)

        async def run(self):
            pass

    async def connect(address, **kwargs):
        built["address"] = address
        return object()

    monkeypatch.setattr(worker.Client, "connect", connect)
    monkeypatch.setattr(worker, "Worker", RecordingWorker)
    asyncio.run(worker.run_worker(OrchestrationConfig(max_parallel_variants=3)))

    assert built["address"] == "localhost:7233"
    assert built["max_concurrent_activities"] == 3
    assert built["activities"] == activities.ACTIVITIES
    assert "activity_executor" not in built
