"""Fitness evaluation of individuals.

The training evaluator decodes a chromosome, trains it for ``k`` epochs from
its evolved Gaussian initialization, then scores every full batch of the
fitness split once. A record carries the mean and the population standard
deviation of those batch errors along with the parameter count. The surrogate
evaluator scores structure alone and is meant for fast GA experiments.
"""
from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import FitnessConfig, SurrogateConfig, TrainConfig
from core.data import Dataset
from core.genome import ConvGene, FcGene, Individual, decode
from core.models import FitnessRecord
from core.network import NonFiniteLoss, Shape, ShapeUnderflow, gaussian_init
from core.redis_client import FitnessCache
from core.trainer import Trainer, training_streams

logger = logging.getLogger(__name__)

OnEvaluated = Callable[[Individual, FitnessRecord, float], None]


def evaluate_individual(
    individual: Individual,
    train_set: Dataset,
    fitness_set: Dataset,
    k: int,
    cfg: TrainConfig,
) -> FitnessRecord:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(fitness_set) == 0:
        raise ValueError("fitness set is empty")
    try:
        spec = decode(individual.chromosome, train_set.input_shape, train_set.num_classes)
    except ShapeUnderflow as exc:
        logger.warning("Individual %s does not decode: %s", individual.id, exc)
        return FitnessRecord.worst(epochs_used=k)

    init_rng, order_rng = training_streams(cfg.seed, individual.rng_seed)
    trainer = Trainer(spec, gaussian_init(spec, init_rng), cfg, order_rng)
    try:
        trainer.fit(train_set, k)
    except NonFiniteLoss as exc:
        logger.warning("Individual %s diverged: %s", individual.id, exc)
        return FitnessRecord.worst(param_count=spec.param_count, epochs_used=k)
    errors = trainer.batch_errors(fitness_set)
    return FitnessRecord(
        mean_error=float(np.clip(errors.mean(), 0.0, 1.0)),
        std_error=float(min(errors.std(), 0.5)),
        param_count=spec.param_count,
        epochs_used=k,
    )


def surrogate_components(
    individual: Individual,
    cfg: SurrogateConfig,
    input_shape: Shape,
    num_classes: int,
) -> Dict[str, float]:
    chromosome = individual.chromosome
    components = {
        "depth": abs(chromosome.depth - cfg.target_depth) / (chromosome.depth + cfg.target_depth),
    }
    weighted = [gene for gene in chromosome.genes if isinstance(gene, (ConvGene, FcGene))]
    distance = np.mean([abs(g.weight_std - cfg.target_std) + abs(g.weight_mean - cfg.target_mean) for g in weighted])
    components["init"] = float(min(distance, 1.0))
    if cfg.target_params is not None:
        params = decode(chromosome, input_shape, num_classes).param_count
        gap = abs(np.log10(params) - np.log10(cfg.target_params))
        components["params"] = float(gap / (1.0 + gap))
    return components


def surrogate_evaluate(
    individual: Individual,
    cfg: Optional[SurrogateConfig] = None,
    input_shape: Shape = (16, 16, 1),
    num_classes: int = 2,
) -> FitnessRecord:
    """Closed-form stand-in for training: distance of the structure from configured targets."""
    cfg = cfg or SurrogateConfig()
    try:
        param_count = decode(individual.chromosome, input_shape, num_classes).param_count
        components = surrogate_components(individual, cfg, input_shape, num_classes)
    except ShapeUnderflow:
        return FitnessRecord.worst()
    values = np.asarray(list(components.values()))
    return FitnessRecord(
        mean_error=float(np.clip(values.mean(), 0.0, 1.0)),
        std_error=float(min(values.std(), 0.5)),
        param_count=param_count,
        epochs_used=1,
    )


class Evaluator(ABC):
    name: str = "evaluator"

    @abstractmethod
    def evaluate(self, individual: Individual) -> FitnessRecord:
        ...

    def describe(self) -> dict:
        return {"evaluator": self.name}


class TrainingEvaluator(Evaluator):
    name = "training"

    def __init__(self, train_set: Dataset, fitness_set: Dataset, k: int, cfg: TrainConfig) -> None:
        self.train_set = train_set
        self.fitness_set = fitness_set
        self.k = k
        self.cfg = cfg

    def evaluate(self, individual: Individual) -> FitnessRecord:
        return evaluate_individual(individual, self.train_set, self.fitness_set, self.k, self.cfg)

    def describe(self) -> dict:
        return {
            "evaluator": self.name,
            "k": self.k,
            "train": self.cfg.dict(),
            "train_set": self.train_set.fingerprint(),
            "fitness_set": self.fitness_set.fingerprint(),
        }


class SurrogateEvaluator(Evaluator):
    name = "surrogate"

    def __init__(self, cfg: SurrogateConfig, input_shape: Shape, num_classes: int) -> None:
        self.cfg = cfg
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes

    def evaluate(self, individual: Individual) -> FitnessRecord:
        return surrogate_evaluate(individual, self.cfg, self.input_shape, self.num_classes)

    def describe(self) -> dict:
        return {"evaluator": self.name, "surrogate": self.cfg.dict(), "input_shape": list(self.input_shape)}


def build_evaluator(cfg: FitnessConfig, train_set: Dataset, fitness_set: Dataset) -> Evaluator:
    if cfg.evaluator == "surrogate":
        return SurrogateEvaluator(cfg.surrogate, train_set.input_shape, train_set.num_classes)
    return TrainingEvaluator(train_set, fitness_set, cfg.k, cfg.train)


_WORKER_EVALUATOR: Optional[Evaluator] = None


def _install_evaluator(evaluator: Evaluator) -> None:
    # one evaluator copy per pool process
    global _WORKER_EVALUATOR
    _WORKER_EVALUATOR = evaluator


def _evaluate_in_worker(individual: Individual) -> Tuple[FitnessRecord, float]:
    return _safe_evaluate(_WORKER_EVALUATOR, individual)


def _safe_evaluate(evaluator: Evaluator, individual: Individual) -> Tuple[FitnessRecord, float]:
    started = time.perf_counter()
    try:
        record = evaluator.evaluate(individual)
    except Exception:
        logger.exception("Evaluation of %s failed; assigning worst fitness", individual.id)
        record = FitnessRecord.worst()
    return record, time.perf_counter() - started


def evaluate_population(
    population: Sequence[Individual],
    evaluator: Evaluator,
    worker_count: int = 1,
    cache: Optional[FitnessCache] = None,
    on_evaluated: Optional[OnEvaluated] = None,
) -> List[Individual]:
    """Attach a fitness record to every individual that lacks one.

    Individuals that already carry a record, or whose id is cached, are not
    retrained. Records depend only on the individual and the evaluator, so the
    result is the same for any ``worker_count``.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    pending: Dict[str, List[Individual]] = {}
    for individual in population:
        if individual.fitness is not None:
            continue
        cached = cache.get(individual.id) if cache is not None else None
        if cached is not None:
            individual.fitness = cached
            continue
        pending.setdefault(individual.id, []).append(individual)

    jobs = [group[0] for group in pending.values()]
    if worker_count == 1 or len(jobs) <= 1:
        results = [_safe_evaluate(evaluator, individual) for individual in jobs]
    else:
        workers = min(worker_count, len(jobs))
        with ProcessPoolExecutor(max_workers=workers, initializer=_install_evaluator, initargs=(evaluator,)) as pool:
            results = list(pool.map(_evaluate_in_worker, jobs))

    for group, (record, seconds) in zip(pending.values(), results):
        for individual in group:
            individual.fitness = record
        if cache is not None:
            cache.put(group[0].id, record)
        if on_evaluated is not None:
            on_evaluated(group[0], record, seconds)
    return list(population)


__all__ = [
    "Evaluator",
    "SurrogateEvaluator",
    "TrainingEvaluator",
    "build_evaluator",
    "evaluate_individual",
    "evaluate_population",
    "surrogate_components",
    "surrogate_evaluate",
]
