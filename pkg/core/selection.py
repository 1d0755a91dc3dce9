"""Mating-pool tournaments and elitist environmental selection."""
from __future__ import annotations

import logging
import math
from typing import List, Sequence

import numpy as np

from core.config import SelectionConfig
from core.genome import Individual

logger = logging.getLogger(__name__)


class UnevaluatedIndividual(ValueError):
    """Raised when selection meets an individual without a fitness record."""


class InsufficientCandidates(ValueError):
    """Raised when fewer candidates than survivor slots are offered."""


def _require_fitness(*individuals: Individual) -> None:
    for individual in individuals:
        if individual.fitness is None:
            raise UnevaluatedIndividual(f"individual {individual.id} has no fitness record")


def slack_tournament(
    a: Individual,
    b: Individual,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> Individual:
    _require_fitness(a, b)
    # equal means fall back to parameter count for the ordering
    key_a = (a.fitness.mean_error, a.fitness.param_count)
    key_b = (b.fitness.mean_error, b.fitness.param_count)
    high, low = (a, b) if key_a >= key_b else (b, a)

    if high.fitness.mean_error - low.fitness.mean_error > cfg.alpha:
        return high if cfg.literal_first_branch else low
    if high.fitness.param_count - low.fitness.param_count > cfg.beta:
        return low
    if a.fitness.std_error < b.fitness.std_error:
        return a
    if b.fitness.std_error < a.fitness.std_error:
        return b
    return a if rng.integers(2) == 0 else b


def _tournament_round(candidates: Sequence[Individual], cfg: SelectionConfig, rng: np.random.Generator) -> Individual:
    i, j = rng.choice(len(candidates), size=2, replace=False)
    return slack_tournament(candidates[int(i)], candidates[int(j)], cfg, rng)


def fill_mating_pool(
    population: Sequence[Individual],
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> List[Individual]:
    if len(population) < 2:
        raise InsufficientCandidates("a mating pool needs at least two individuals")
    _require_fitness(*population)
    return [_tournament_round(population, cfg, rng) for _ in range(len(population))]


def elite_order(individual: Individual) -> tuple:
    fitness = individual.fitness
    return (fitness.mean_error, fitness.param_count, fitness.std_error, individual.id)


def elite_count(n: int, gamma: float) -> int:
    # halves round up
    return min(n, max(1, math.floor(gamma * n + 0.5)))


def environmental_selection(
    candidates: Sequence[Individual],
    n: int,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> List[Individual]:
    """Keep the best elite_count(n, gamma) by mean error, fill the rest by tournaments.

    Tournament winners stay in the residual set, so one candidate can fill
    several slots.
    """
    if len(candidates) < n:
        raise InsufficientCandidates(f"{len(candidates)} candidates for {n} survivor slots")
    _require_fitness(*candidates)
    elites = elite_count(n, cfg.gamma)
    ranked = sorted(candidates, key=elite_order)
    survivors = ranked[:elites]
    residual = ranked[elites:]
    slots = n - elites
    if slots and len(residual) == 1:
        survivors.extend(residual * slots)
    elif slots:
        survivors.extend(_tournament_round(residual, cfg, rng) for _ in range(slots))
    logger.debug("Environmental selection kept %d elites and %d tournament winners", elites, slots)
    return survivors


__all__ = [
    "InsufficientCandidates",
    "UnevaluatedIndividual",
    "elite_count",
    "elite_order",
    "environmental_selection",
    "fill_mating_pool",
    "slack_tournament",
]
