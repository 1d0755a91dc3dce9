import json

import numpy as np
import pytest

from conftest import slow
from core.config import BestPick, BestPickPolicy, RunConfig, TrainConfig
from core.data import SyntheticKind, make_synthetic, split_train_fitness
from core.engine import (
    EvolutionEngine,
    compare_initializers,
    compare_over_seeds,
    final_train,
    load_dataset,
    run_evolution,
    select_best,
)
from core.genome import Chromosome, ConvGene, FcGene, Individual
from core.network import Initializer, initialize
from core.report import parameter_spread
from core.trainer import Trainer, training_streams


def surrogate_config(**overrides):
    payload = {
        "population_size": 10,
        "generations": 3,
        "fitness": {"evaluator": "surrogate"},
        "dataset": {"synthetic": {"kind": "RECTANGLE_TOY", "n": 40, "size": 16, "seed": 0}},
    }
    payload.update(overrides)
    return RunConfig.parse_obj(payload)


def test_zero_generations_returns_evaluated_initial_population():
    population, history = run_evolution(surrogate_config(generations=0), use_cache=False)
    assert len(population) == 10
    assert all(individual.fitness is not None for individual in population)
    assert [stats.generation for stats in history] == [0]
    assert history[0].evaluations == 10


def test_population_size_and_monotone_best():
    population, history = run_evolution(surrogate_config(generations=8), use_cache=False)
    assert len(population) == 10
    best = [stats.best_mean_error for stats in history]
    assert all(later <= earlier for earlier, later in zip(best, best[1:]))
    assert history[-1].best_id in {individual.id for individual in population}


def test_surrogate_evolution_improves_best_fitness():
    improved = 0
    for seed in range(10):
        cfg = surrogate_config(population_size=20, generations=30, seed=seed)
        _, history = run_evolution(cfg, use_cache=False)
        assert history[-1].best_mean_error <= history[0].best_mean_error
        improved += history[-1].best_mean_error < history[0].best_mean_error
    assert improved >= 9


def test_equal_runs_write_identical_history(tmp_path):
    cfg = surrogate_config(generations=4)
    run_evolution(cfg, out_dir=tmp_path / "a")
    run_evolution(cfg, out_dir=tmp_path / "b")
    first = (tmp_path / "a" / "history.jsonl").read_bytes()
    assert first == (tmp_path / "b" / "history.jsonl").read_bytes()
    records = [json.loads(line) for line in first.decode().splitlines()]
    assert [record["record"] for record in records] == ["generation"] * 5 + ["tier_table"]
    assert all("wall_seconds" not in record for record in records)


def test_resumed_run_matches_uninterrupted_run(tmp_path):
    cfg = surrogate_config(generations=6)
    full_population, _ = EvolutionEngine(cfg, out_dir=tmp_path / "full", use_cache=False).run()

    partial = EvolutionEngine(cfg, out_dir=tmp_path / "part", use_cache=False)
    partial.run(stop_after=3)
    assert not partial.finished
    resumed = EvolutionEngine.resume(tmp_path / "part" / "checkpoint.json", out_dir=tmp_path / "part", use_cache=False)
    assert resumed.generation == 3
    resumed_population, _ = resumed.run()

    assert [ind.id for ind in resumed_population] == [ind.id for ind in full_population]
    assert [ind.fitness for ind in resumed_population] == [ind.fitness for ind in full_population]
    expected = (tmp_path / "full" / "history.jsonl").read_bytes()
    assert (tmp_path / "part" / "history.jsonl").read_bytes() == expected

    early = tmp_path / "part" / "checkpoints" / "generation-0001.json"
    again, _ = EvolutionEngine.resume(early, out_dir=tmp_path / "early", use_cache=False).run()
    assert [ind.id for ind in again] == [ind.id for ind in full_population]
    assert (tmp_path / "early" / "history.jsonl").read_bytes() == expected


def test_run_writes_report_files(tmp_path):
    run_evolution(surrogate_config(), out_dir=tmp_path, use_cache=False)
    summary = (tmp_path / "summary.txt").read_text()
    assert "accuracy tiers:" in summary
    assert Chromosome.from_text((tmp_path / "best_chromosome.txt").read_text()).depth >= 2
    assert (tmp_path / "evaluations.log").read_text().startswith("generation=0 id=")


def test_dataset_errors_surface_before_training(tmp_path):
    cfg = RunConfig.parse_obj({"dataset": {"images": str(tmp_path / "missing"), "labels": str(tmp_path / "missing")}})
    with pytest.raises(OSError):
        EvolutionEngine(cfg, use_cache=False)


def test_synthetic_test_split_loaded():
    cfg = RunConfig.parse_obj({"dataset": {"synthetic": {"n": 20, "size": 8, "test_n": 10}}})
    train, test = load_dataset(cfg.dataset)
    assert (len(train), len(test)) == (20, 10)


def test_select_best_single_individual(make_individual):
    only = make_individual()
    for policy in BestPickPolicy:
        assert select_best([only], BestPick(policy=policy, tolerance=0.1)) is only


def test_select_best_policies(make_individual):
    accurate = make_individual(mean_error=0.100, param_count=1_000_000)
    compact = make_individual(mean_error=0.101, param_count=10_000)
    population = [accurate, compact]
    assert select_best(population, BestPick(policy=BestPickPolicy.MIN_ERROR)) is accurate
    picked = select_best(population, BestPick(policy=BestPickPolicy.MIN_PARAMS_WITHIN_TOLERANCE, tolerance=0.005))
    assert picked is compact
    strict = select_best(population, BestPick(policy=BestPickPolicy.MIN_PARAMS_WITHIN_TOLERANCE, tolerance=0.0))
    assert strict is accurate


def test_min_error_ties_go_to_fewer_params(make_individual):
    heavy = make_individual(mean_error=0.2, param_count=5000)
    light = make_individual(mean_error=0.2, param_count=50)
    assert select_best([heavy, light]) is light


@pytest.fixture
def blob_splits(blobs):
    return split_train_fitness(blobs, 0.2, seed=0)


@pytest.fixture
def blob_individual():
    chromosome = Chromosome(head=(ConvGene(1, 4, 0.1, 0.1),), tail=(FcGene(16, 0.0, 0.1),))
    return Individual(chromosome, "f" * 16, rng_seed=21)


def test_zero_epochs_reports_untrained_error(blob_splits, blob_individual):
    train_set, test_set = blob_splits
    cfg = TrainConfig(epochs=0)
    trained = final_train(blob_individual, train_set, test_set, cfg)
    spec = trained.spec
    init_rng, order_rng = training_streams(cfg.seed, blob_individual.rng_seed)
    baseline = Trainer(spec, initialize(spec, init_rng, Initializer.GAUSSIAN), cfg, order_rng)
    assert trained.test_error == baseline.error_rate(test_set)
    assert trained.epoch_losses == []


def test_final_training_is_deterministic(blob_splits, blob_individual):
    train_set, test_set = blob_splits
    cfg = TrainConfig(epochs=2, batch_size=16)
    first = final_train(blob_individual, train_set, test_set, cfg)
    second = final_train(blob_individual, train_set, test_set, cfg)
    for a, b in zip(first.weights, second.weights):
        if a is not None:
            assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_final_training_separates_blobs(blob_splits, blob_individual):
    train_set, test_set = blob_splits
    trained = final_train(blob_individual, train_set, test_set, TrainConfig(epochs=20, learning_rate=0.1, batch_size=8))
    assert trained.test_error <= 0.05


def test_identical_initializers_give_equal_errors(blob_splits, blob_individual):
    train_set, test_set = blob_splits
    cfg = TrainConfig(epochs=1, batch_size=16)
    control = compare_initializers(blob_individual, train_set, test_set, cfg, baseline=Initializer.GAUSSIAN)
    assert control.gaussian_error == control.xavier_error
    assert control.difference == 0.0


def test_comparison_over_seeds_uses_consecutive_seeds(blob_splits, blob_individual):
    train_set, test_set = blob_splits
    comparisons = compare_over_seeds(blob_individual, train_set, test_set, TrainConfig(epochs=1, seed=4), 3)
    assert [item.seed for item in comparisons] == [4, 5, 6]


# --- long acceptance runs -------------------------------------------------------


def _rectangle_config(seed, generations=15):
    return RunConfig.parse_obj(
        {
            "population_size": 20,
            "generations": generations,
            "seed": seed,
            "bounds": {"max_feature_maps": 16, "max_neurons": 64, "n_cp": 4, "n_f": 3},
            "fitness": {"k": 3, "train": {"learning_rate": 0.05, "batch_size": 32}},
            "final_train": {"epochs": 20, "learning_rate": 0.05, "batch_size": 32},
            "dataset": {"synthetic": {"kind": "RECTANGLE_TOY", "n": 1000, "size": 16, "seed": seed, "test_n": 400}},
        }
    )


@slow
def test_truncated_training_evolution_halves_error():
    ratios = []
    for seed in range(5):
        _, history = run_evolution(_rectangle_config(seed), use_cache=False)
        ratios.append(history[-1].best_mean_error / max(history[0].best_mean_error, 1e-9))
    assert np.median(ratios) <= 0.5


@slow
def test_evolved_statistics_beat_xavier_in_median():
    engine = EvolutionEngine(_rectangle_config(0, generations=10), use_cache=False)
    population, _ = engine.run()
    best = select_best(population)
    train_set, test_set = engine.final_datasets()
    comparisons = compare_over_seeds(best, train_set, test_set, engine.cfg.final_train, 10)
    assert np.median([item.difference for item in comparisons]) >= 0.0


@slow
def test_final_population_spans_parameter_magnitudes():
    population, _ = run_evolution(_rectangle_config(1, generations=10), use_cache=False)
    assert parameter_spread(population, tolerance=0.05) >= 10.0


@slow
def test_surrogate_error_halves_in_median():
    ratios = []
    for seed in range(10):
        _, history = run_evolution(surrogate_config(population_size=20, generations=30, seed=seed), use_cache=False)
        ratios.append(history[-1].best_mean_error / history[0].best_mean_error)
    assert np.median(ratios) <= 0.5


def test_blob_fixture_matches_generator(blobs):
    assert blobs.fingerprint() == make_synthetic(SyntheticKind.SEPARABLE_BLOBS, 200, 8, seed=3).fingerprint()
