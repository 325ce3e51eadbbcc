"""
Cached service singletons.

Activities and the CLI call `ServiceFactory.get_*()` instead of building
services themselves, so one process loads its torch device once and tests
can swap an implementation by setting the class-level cache.
"""

from aerial2ground.services.ablation import AblationService
from aerial2ground.services.compare import CompareService
from aerial2ground.services.datagen import DatasetService
from aerial2ground.services.evaluation import EvaluationService
from aerial2ground.services.sampling import SamplingService
from aerial2ground.services.training import TrainingService


class ServiceFactory:
    """Lazily creates and caches service instances (class-level singletons)."""

    device: str | None = None

    _datasets: DatasetService | None = None
    _training: TrainingService | None = None
    _sampling: SamplingService | None = None
    _evaluation: EvaluationService | None = None
    _compare: CompareService | None = None
    _ablation: AblationService | None = None

    @classmethod
    def configure(cls, device: str | None) -> None:
        """Select the torch device and drop any cached services."""
        cls.device = device
        cls.reset()

    @classmethod
    def reset(cls) -> None:
        cls._datasets = cls._training = cls._sampling = None
        cls._evaluation = cls._compare = cls._ablation = None

    @classmethod
    def get_dataset_service(cls) -> DatasetService:
        if cls._datasets is None:
            cls._datasets = DatasetService()
        return cls._datasets

    @classmethod
    def get_training_service(cls) -> TrainingService:
        if cls._training is None:
            cls._training = TrainingService(cls.device)
        return cls._training

    @classmethod
    def get_sampling_service(cls) -> SamplingService:
        if cls._sampling is None:
            cls._sampling = SamplingService(cls.device)
        return cls._sampling

    @classmethod
    def get_evaluation_service(cls) -> EvaluationService:
        if cls._evaluation is None:
            cls._evaluation = EvaluationService(cls.device)
        return cls._evaluation

    @classmethod
    def get_compare_service(cls) -> CompareService:
        if cls._compare is None:
            cls._compare = CompareService(cls.get_sampling_service())
        return cls._compare

    @classmethod
    def get_ablation_service(cls) -> AblationService:
        if cls._ablation is None:
            cls._ablation = AblationService(
                cls.get_dataset_service(),
                cls.get_training_service(),
                cls.get_sampling_service(),
                cls.get_evaluation_service(),
            )
        return cls._ablation
