"""Evolution driver, best-individual pick, final training and initializer comparison.

A run is a pure function of its ``RunConfig`` and the dataset bytes: every
random draw of the genetic algorithm comes from one seeded generator whose
state is checkpointed after each generation, and each individual trains from
streams derived from its own ``rng_seed``.
"""
from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.checkpoint import RunState, checkpoint_load, checkpoint_save
from core.config import BestPick, BestPickPolicy, DatasetConfig, RunConfig, TrainConfig
from core.data import Dataset, load_idx, make_synthetic, split_train_fitness
from core.db import ResultsStore
from core.fitness import Evaluator, build_evaluator, evaluate_population
from core.genome import Individual, decode, init_population
from core.models import FitnessRecord, GenerationStats, InitializerComparison
from core.network import Initializer, NetworkSpec, NonFiniteLoss, WeightSet, initialize
from core.redis_client import LATEST_KEY, FitnessCache, cache_snapshot
from core.report import EvaluationLog, HistoryLog, generation_stats, tier_table, write_summary
from core.selection import UnevaluatedIndividual, elite_order, environmental_selection, fill_mating_pool
from core.trainer import Trainer, training_streams
from core.utils import canonical_json, sha256_hex, stopwatch
from core.variation import generate_offspring

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.json"
HISTORY_NAME = "history.jsonl"


def load_dataset(cfg: DatasetConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """Training images plus the held-out test split when one is configured."""
    if cfg.synthetic is not None:
        synth = cfg.synthetic
        train = make_synthetic(synth.kind, synth.n, synth.size, synth.seed)
        test = make_synthetic(synth.kind, synth.test_n, synth.size, synth.seed + 1) if synth.test_n >= 2 else None
        return train, test
    if cfg.images is None or cfg.labels is None:
        raise ValueError("dataset needs IDX image/label paths or a synthetic block")
    train = load_idx(cfg.images, cfg.labels)
    test = None
    if cfg.test_images is not None and cfg.test_labels is not None:
        test = load_idx(cfg.test_images, cfg.test_labels, num_classes=train.num_classes)
    return train, test


def run_namespace(cfg: RunConfig, dataset: Dataset) -> str:
    return sha256_hex(canonical_json({"config": cfg.to_dict(), "dataset": dataset.fingerprint()}))[:16]


def select_best(population: Sequence[Individual], policy: Optional[BestPick] = None) -> Individual:
    policy = policy or BestPick()
    if not population:
        raise ValueError("cannot pick from an empty population")
    for individual in population:
        if individual.fitness is None:
            raise UnevaluatedIndividual(f"individual {individual.id} has no fitness record")
    best = min(population, key=elite_order)
    if policy.policy is BestPickPolicy.MIN_ERROR:
        return best
    ceiling = best.fitness.mean_error + policy.tolerance + 1e-12
    within = [individual for individual in population if individual.fitness.mean_error <= ceiling]
    return min(within, key=lambda ind: (ind.fitness.param_count, ind.fitness.mean_error, ind.fitness.std_error, ind.id))


@dataclass
class TrainedNetwork:
    individual_id: str
    spec: NetworkSpec
    weights: WeightSet
    test_error: float
    epoch_losses: List[float] = field(default_factory=list)


def final_train(
    individual: Individual,
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    initializer: Initializer = Initializer.GAUSSIAN,
) -> TrainedNetwork:
    spec = decode(individual.chromosome, train_set.input_shape, train_set.num_classes)
    init_rng, order_rng = training_streams(cfg.seed, individual.rng_seed)
    trainer = Trainer(spec, initialize(spec, init_rng, initializer), cfg, order_rng)
    try:
        trainer.fit(train_set, cfg.epochs)
    except NonFiniteLoss:
        logger.error(
            "Final training of %s (%s init) diverged after %d epochs; losses so far: %s",
            individual.id,
            Initializer(initializer).value,
            len(trainer.epoch_losses),
            trainer.epoch_losses,
        )
        raise
    test_error = trainer.error_rate(test_set)
    logger.info(
        "Final training of %s: %d epochs, %s init, test error %.4f",
        individual.id,
        cfg.epochs,
        Initializer(initializer).value,
        test_error,
    )
    return TrainedNetwork(individual.id, spec, trainer.weights, test_error, list(trainer.epoch_losses))


def compare_initializers(
    individual: Individual,
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    baseline: Initializer = Initializer.XAVIER,
) -> InitializerComparison:
    """Train one architecture from its evolved statistics and from the baseline.

    Both arms share epochs and data order; ``baseline=GAUSSIAN`` gives the
    control case where both arms are identical.
    """
    evolved = final_train(individual, train_set, test_set, cfg, Initializer.GAUSSIAN)
    other = final_train(individual, train_set, test_set, cfg, baseline)
    return InitializerComparison(
        individual_id=individual.id,
        seed=cfg.seed,
        gaussian_error=evolved.test_error,
        xavier_error=other.test_error,
    )


def compare_over_seeds(
    individual: Individual,
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    seeds: int,
) -> List[InitializerComparison]:
    return [
        compare_initializers(individual, train_set, test_set, cfg.copy(update={"seed": cfg.seed + offset}))
        for offset in range(seeds)
    ]


class EvolutionEngine:
    def __init__(
        self,
        cfg: RunConfig,
        out_dir: Optional[Path] = None,
        dataset: Optional[Dataset] = None,
        evaluator: Optional[Evaluator] = None,
        cache: Optional[FitnessCache] = None,
        store: Optional[ResultsStore] = None,
        use_cache: bool = True,
    ) -> None:
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if dataset is None:
            dataset, self.test_set = load_dataset(cfg.dataset)
        else:
            self.test_set = None
        self.dataset = dataset
        self.train_set, self.fitness_set = split_train_fitness(dataset, cfg.fitness.fitness_fraction, cfg.seed)
        self.evaluator = evaluator or build_evaluator(cfg.fitness, self.train_set, self.fitness_set)
        self.namespace = run_namespace(cfg, dataset)
        if cache is None and use_cache:
            cache = FitnessCache(self.namespace)
        self.cache = cache
        self.store = store
        self.rng = np.random.default_rng(cfg.seed)
        self.population: List[Individual] = []
        self.history: List[GenerationStats] = []
        self.generation = -1

        self.history_log = HistoryLog(self.out_dir / HISTORY_NAME) if self.out_dir else None
        self.evaluation_log = EvaluationLog(self.out_dir / "evaluations.log") if self.out_dir else None

    @classmethod
    def resume(cls, checkpoint_path: Path, **kwargs) -> "EvolutionEngine":
        state = checkpoint_load(checkpoint_path)
        cfg = RunConfig.parse_obj(state.config)
        engine = cls(cfg, **kwargs)
        engine.population = state.population
        engine.history = list(state.history)
        engine.generation = state.generation
        engine.rng.bit_generator.state = state.rng_state
        if engine.history_log is not None:
            engine.history_log.rewrite(engine.history)
        logger.info("Resumed run %s at generation %d from %s", engine.namespace, state.generation, checkpoint_path)
        return engine

    # --- one run ------------------------------------------------------------------

    def _evaluate(self, individuals: Sequence[Individual]) -> int:
        pending = {individual.id for individual in individuals if individual.fitness is None}
        generation = self.generation + 1

        def on_evaluated(individual: Individual, record: FitnessRecord, seconds: float) -> None:
            if self.evaluation_log is not None:
                self.evaluation_log.append(generation, individual.id, record, seconds)
            if self.store is not None:
                self.store.add_evaluation(generation, individual.id, record, seconds)

        evaluate_population(individuals, self.evaluator, self.cfg.workers, self.cache, on_evaluated)
        return len(pending)

    def _record(self, evaluations: int, seconds: float) -> GenerationStats:
        self.generation += 1
        stats = generation_stats(self.generation, self.population, evaluations, seconds)
        self.history.append(stats)
        logger.info(
            "Generation %d: best %.4f (%s, %d params), mean %.4f, %d evaluations, %.1fs",
            stats.generation,
            stats.best_mean_error,
            stats.best_id,
            stats.best_param_count,
            stats.mean_mean_error,
            stats.evaluations,
            seconds,
        )
        if self.history_log is not None:
            if stats.generation == 0:
                self.history_log.rewrite([stats])
            else:
                self.history_log.append(stats)
        if self.store is not None:
            self.store.add_generation(stats)
        cache_snapshot(LATEST_KEY, {"run": self.namespace, **stats.dict()})
        self.checkpoint()
        return stats

    def checkpoint(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        state = RunState(
            generation=self.generation,
            population=self.population,
            rng_state=self.rng.bit_generator.state,
            history=self.history,
            config=self.cfg.to_dict(),
        )
        numbered = self.out_dir / "checkpoints" / f"generation-{self.generation:04d}.json"
        checkpoint_save(numbered, state)
        shutil.copyfile(numbered, self.out_dir / CHECKPOINT_NAME)
        return numbered

    def initialize(self) -> GenerationStats:
        with stopwatch() as timing:
            self.population = init_population(self.cfg.population_size, self.cfg.bounds, self.rng)
            evaluations = self._evaluate(self.population)
        return self._record(evaluations, timing["seconds"])

    def step(self) -> GenerationStats:
        n = self.cfg.population_size
        if len(self.population) != n:
            raise RuntimeError(f"population holds {len(self.population)} individuals, expected {n}")
        with stopwatch() as timing:
            pool = fill_mating_pool(self.population, self.cfg.selection, self.rng)
            offspring = generate_offspring(pool, self.cfg.variation, self.cfg.bounds, self.rng)
            evaluations = self._evaluate(offspring)
            self.population = environmental_selection(self.population + offspring, n, self.cfg.selection, self.rng)
        return self._record(evaluations, timing["seconds"])

    @property
    def finished(self) -> bool:
        return self.generation >= self.cfg.generations

    def run(self, stop_after: Optional[int] = None) -> Tuple[List[Individual], List[GenerationStats]]:
        """Run to the configured generation count, or stop once ``stop_after`` is reached."""
        if self.generation < 0:
            self.initialize()
        while not self.finished and (stop_after is None or self.generation < stop_after):
            self.step()
        if self.finished:
            self.write_report()
        return self.population, self.history

    def write_report(self) -> None:
        if self.out_dir is None:
            return
        table = tier_table(self.population)
        best = select_best(self.population, self.cfg.best_pick)
        if self.history_log is not None:
            self.history_log.append_tier_table(table)
        write_summary(self.out_dir / "summary.txt", self.history, best, table)
        (self.out_dir / "best_chromosome.txt").write_text(best.chromosome.to_text())

    def final_datasets(self) -> Tuple[Dataset, Dataset]:
        """(train, test) for final training.

        With a test split the whole training set is used; otherwise training
        stays on the training split and the fitness split is the test set.
        """
        if self.test_set is not None:
            return self.dataset, self.test_set
        logger.warning("No test split configured; reporting final errors on the fitness split")
        return self.train_set, self.fitness_set


def run_evolution(
    cfg: RunConfig,
    dataset: Optional[Dataset] = None,
    out_dir: Optional[Path] = None,
    **kwargs,
) -> Tuple[List[Individual], List[GenerationStats]]:
    return EvolutionEngine(cfg, out_dir=out_dir, dataset=dataset, **kwargs).run()


__all__ = [
    "EvolutionEngine",
    "TrainedNetwork",
    "compare_initializers",
    "compare_over_seeds",
    "final_train",
    "load_dataset",
    "run_evolution",
    "run_namespace",
    "select_best",
]
