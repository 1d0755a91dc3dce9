import json
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

from pydantic import BaseModel, BaseSettings, Extra, Field, root_validator, validator

from core.data import SyntheticKind


class Settings(BaseSettings):
    database_url: str = "sqlite:///./evolution.db"
    redis_url: str | None = None
    log_level: str = "INFO"

    class Config:
        env_prefix = 'EVOCNN_'
        case_sensitive = False
        env_file = '.env'

    @validator('redis_url', pre=True)
    def empty_strings_to_none(cls, v):
        return v or None

    @validator('database_url')
    def validate_url(cls, v: str) -> str:
        if not v:
            raise ValueError('database_url must be set')
        return v


@lru_cache()
def get_settings() -> Settings:
    return Settings()


class StrictModel(BaseModel):
    class Config:
        extra = Extra.forbid


class GeneBounds(StrictModel):
    min_filter_size: int = Field(1, ge=1)
    max_filter_size: int = Field(7, ge=1)
    min_kernel_size: int = Field(1, ge=1)
    max_kernel_size: int = Field(4, ge=1)
    min_feature_maps: int = Field(1, ge=1)
    max_feature_maps: int = Field(64, ge=1)
    min_neurons: int = Field(1, ge=1)
    max_neurons: int = Field(512, ge=1)
    mean_range: Tuple[float, float] = (-0.5, 0.5)
    std_range: Tuple[float, float] = (0.01, 0.5)
    n_cp: int = Field(5, ge=1)
    n_f: int = Field(5, ge=1)

    @validator('mean_range', 'std_range')
    def ordered_interval(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] > v[1]:
            raise ValueError(f'interval lower bound {v[0]} exceeds upper bound {v[1]}')
        return v

    @validator('std_range')
    def positive_std(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] <= 0:
            raise ValueError('std_range lower bound must be > 0')
        return v

    @root_validator(skip_on_failure=True)
    def ordered_integer_bounds(cls, values):
        for name in ('filter_size', 'kernel_size', 'feature_maps', 'neurons'):
            low, high = values[f'min_{name}'], values[f'max_{name}']
            if low > high:
                raise ValueError(f'min_{name}={low} exceeds max_{name}={high}')
        return values


class VariationConfig(StrictModel):
    crossover_prob: float = Field(0.9, ge=0.0, le=1.0)
    mutation_prob: float = Field(0.1, ge=0.0, le=1.0)
    sbx_eta: float = Field(20.0, gt=0.0)
    pm_eta: float = Field(20.0, gt=0.0)


class SelectionConfig(StrictModel):
    alpha: float = Field(0.01, ge=0.0)
    beta: float = Field(100_000, ge=0.0)
    gamma: float = Field(0.20, gt=0.0, le=1.0)
    # Returns the larger-mean entrant when the error gap exceeds alpha.
    literal_first_branch: bool = False


class TrainConfig(StrictModel):
    learning_rate: float = Field(0.01, ge=0.0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(1, ge=0)
    seed: int = 0


class SurrogateConfig(StrictModel):
    target_depth: int = Field(6, ge=2)
    target_std: float = Field(0.1, gt=0.0)
    target_mean: float = 0.0
    target_params: Optional[int] = Field(None, ge=1)


class FitnessConfig(StrictModel):
    k: int = Field(5, ge=1)
    train: TrainConfig = TrainConfig()
    fitness_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    evaluator: str = 'training'
    surrogate: SurrogateConfig = SurrogateConfig()

    @validator('evaluator')
    def known_evaluator(cls, v: str) -> str:
        if v not in ('training', 'surrogate'):
            raise ValueError(f"evaluator must be 'training' or 'surrogate', got {v!r}")
        return v


class SyntheticConfig(StrictModel):
    kind: SyntheticKind = SyntheticKind.RECTANGLE_TOY
    n: int = Field(1000, ge=2)
    size: int = Field(16, ge=4)
    seed: int = 0
    test_n: int = Field(0, ge=0)


class DatasetConfig(StrictModel):
    images: Optional[Path] = None
    labels: Optional[Path] = None
    test_images: Optional[Path] = None
    test_labels: Optional[Path] = None
    synthetic: Optional[SyntheticConfig] = None

    @root_validator(skip_on_failure=True)
    def one_source(cls, values):
        has_files = values.get('images') is not None or values.get('labels') is not None
        if has_files and values.get('synthetic') is not None:
            raise ValueError('dataset takes either IDX paths or a synthetic block, not both')
        if has_files and (values.get('images') is None or values.get('labels') is None):
            raise ValueError('dataset images and labels must be given together')
        if (values.get('test_images') is None) != (values.get('test_labels') is None):
            raise ValueError('test_images and test_labels must be given together')
        return values


class BestPickPolicy(str, Enum):
    MIN_ERROR = 'MIN_ERROR'
    MIN_PARAMS_WITHIN_TOLERANCE = 'MIN_PARAMS_WITHIN_TOLERANCE'


class BestPick(StrictModel):
    policy: BestPickPolicy = BestPickPolicy.MIN_ERROR
    tolerance: float = Field(0.0, ge=0.0)


class RunConfig(StrictModel):
    population_size: int = Field(100, ge=2)
    generations: int = Field(100, ge=0)
    bounds: GeneBounds = GeneBounds()
    variation: VariationConfig = VariationConfig()
    selection: SelectionConfig = SelectionConfig()
    fitness: FitnessConfig = FitnessConfig()
    final_train: TrainConfig = TrainConfig(epochs=100)
    seed: int = 0
    dataset: DatasetConfig = DatasetConfig(synthetic=SyntheticConfig())
    best_pick: BestPick = BestPick()
    workers: int = Field(1, ge=1)

    @validator('population_size')
    def even_population(cls, v: int) -> int:
        if v % 2:
            raise ValueError('population_size must be even so the mating pool pairs up')
        return v

    def to_dict(self) -> dict:
        return json.loads(self.json())


def load_run_config(path: Path | str) -> RunConfig:
    with open(path) as fp:
        payload = json.load(fp)
    return RunConfig.parse_obj(payload)


__all__ = [
    "BestPick",
    "BestPickPolicy",
    "DatasetConfig",
    "FitnessConfig",
    "GeneBounds",
    "RunConfig",
    "SelectionConfig",
    "Settings",
    "SurrogateConfig",
    "SyntheticConfig",
    "TrainConfig",
    "VariationConfig",
    "get_settings",
    "load_run_config",
]
