"""Offspring generation: unit-aligned crossover and structural mutation.

Every encoded gene field is treated as a real number while an operator runs.
Integer fields are rounded back into range afterwards and binary choices are
re-thresholded at 0.5. Fields pinned by the parameter settings (convolution
stride and padding mode) have a zero-width domain and are never varied.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import GeneBounds, VariationConfig
from core.genome import (
    Chromosome,
    ConvGene,
    FcGene,
    GeneKind,
    Individual,
    LayerGene,
    PoolGene,
    new_individual,
    random_gene,
)
from core.network import PoolType

logger = logging.getLogger(__name__)

_SAME_PARENTS_EPS = 1e-14


class OddPoolSize(ValueError):
    """Raised when the mating pool cannot be split into pairs."""


class MutationOp(str, Enum):
    ADD = "add"
    DELETE = "delete"
    MODIFY = "modify"


_OPS = (MutationOp.ADD, MutationOp.DELETE, MutationOp.MODIFY)
_KINDS = (GeneKind.CONV, GeneKind.POOL, GeneKind.FC)


@dataclass(frozen=True)
class MutationEvent:
    position: int
    proposed: MutationOp
    applied: Optional[MutationOp]


# --- real-coded operators ------------------------------------------------------


def sbx(
    x1: float,
    x2: float,
    eta: float,
    lower: float,
    upper: float,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """Simulated binary crossover of two real values, children clamped to [lower, upper]."""
    u = rng.random()
    if abs(x1 - x2) < _SAME_PARENTS_EPS:
        return x1, x2
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    child1 = 0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)
    child2 = 0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)
    return float(np.clip(child1, lower, upper)), float(np.clip(child2, lower, upper))


def polynomial_mutate(
    x: float,
    eta: float,
    lower: float,
    upper: float,
    rng: np.random.Generator,
) -> float:
    """Bounded polynomial mutation of one real value."""
    span = upper - lower
    if span <= 0:
        return x
    x = float(np.clip(x, lower, upper))
    u = rng.random()
    power = 1.0 / (eta + 1.0)
    if u < 0.5:
        delta = (x - lower) / span
        value = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - delta) ** (eta + 1.0)
        shift = value ** power - 1.0
    else:
        delta = (upper - x) / span
        value = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - delta) ** (eta + 1.0)
        shift = 1.0 - value ** power
    return float(np.clip(x + shift * span, lower, upper))


# --- gene <-> real vector --------------------------------------------------------


@dataclass(frozen=True)
class _Field:
    name: str
    lower: float
    upper: float
    integer: bool = False
    binary: bool = False


def _fields(gene: LayerGene, bounds: GeneBounds) -> List[_Field]:
    if isinstance(gene, ConvGene):
        return [
            _Field("filter_size", bounds.min_filter_size, bounds.max_filter_size, integer=True),
            _Field("num_feature_maps", bounds.min_feature_maps, bounds.max_feature_maps, integer=True),
            _Field("weight_std", *bounds.std_range),
            _Field("weight_mean", *bounds.mean_range),
        ]
    if isinstance(gene, PoolGene):
        return [
            _Field("kernel_size", bounds.min_kernel_size, bounds.max_kernel_size, integer=True),
            _Field("pool_type", 0.0, 1.0, binary=True),
        ]
    return [
        _Field("num_neurons", bounds.min_neurons, bounds.max_neurons, integer=True),
        _Field("weight_std", *bounds.std_range),
        _Field("weight_mean", *bounds.mean_range),
    ]


def _encode(gene: LayerGene, field: _Field) -> float:
    value = getattr(gene, field.name)
    if field.binary:
        return 0.0 if PoolType(value) is PoolType.MAX else 1.0
    return float(value)


def _rebuild(gene: LayerGene, values: Dict[str, float], bounds: GeneBounds) -> LayerGene:
    changes = {}
    for field in _fields(gene, bounds):
        value = values[field.name]
        if field.binary:
            changes[field.name] = PoolType.MAX if value < 0.5 else PoolType.AVG
        elif field.integer:
            changes[field.name] = int(np.clip(np.rint(value), field.lower, field.upper))
        else:
            changes[field.name] = float(np.clip(value, field.lower, field.upper))
    return replace(gene, **changes)


def cross_genes(
    first: LayerGene,
    second: LayerGene,
    eta: float,
    bounds: GeneBounds,
    rng: np.random.Generator,
) -> Tuple[LayerGene, LayerGene]:
    """SBX on every encoded field of two same-kind genes, one uniform draw per field."""
    if first.kind is not second.kind:
        raise ValueError(f"cannot cross a {first.kind.value} unit with a {second.kind.value} unit")
    values1: Dict[str, float] = {}
    values2: Dict[str, float] = {}
    for field in _fields(first, bounds):
        values1[field.name], values2[field.name] = sbx(
            _encode(first, field), _encode(second, field), eta, field.lower, field.upper, rng
        )
    return _rebuild(first, values1, bounds), _rebuild(second, values2, bounds)


def modify_gene(gene: LayerGene, eta: float, bounds: GeneBounds, rng: np.random.Generator) -> LayerGene:
    values = {
        field.name: polynomial_mutate(_encode(gene, field), eta, field.lower, field.upper, rng)
        for field in _fields(gene, bounds)
    }
    return _rebuild(gene, values, bounds)


# --- crossover -------------------------------------------------------------------

Unit = Tuple[LayerGene, int]


@dataclass(frozen=True)
class UnitLists:
    conv: Tuple[Unit, ...]
    pool: Tuple[Unit, ...]
    fc: Tuple[Unit, ...]

    def by_kind(self, kind: GeneKind) -> Tuple[Unit, ...]:
        return getattr(self, kind.value)

    def with_kind(self, kind: GeneKind, units: Sequence[Unit]) -> "UnitLists":
        return replace(self, **{kind.value: tuple(units)})

    def restore(self) -> Chromosome:
        genes = [gene for gene, _ in sorted(self.conv + self.pool + self.fc, key=lambda unit: unit[1])]
        head = tuple(gene for gene in genes if not isinstance(gene, FcGene))
        tail = tuple(gene for gene in genes if isinstance(gene, FcGene))
        return Chromosome(head=head, tail=tail)


def collect_units(chromosome: Chromosome) -> UnitLists:
    lists: Dict[GeneKind, List[Unit]] = {kind: [] for kind in _KINDS}
    for position, gene in enumerate(chromosome.genes):
        lists[gene.kind].append((gene, position))
    return UnitLists(conv=tuple(lists[GeneKind.CONV]), pool=tuple(lists[GeneKind.POOL]), fc=tuple(lists[GeneKind.FC]))


def crossover(
    first: Chromosome,
    second: Chromosome,
    cfg: VariationConfig,
    bounds: GeneBounds,
    rng: np.random.Generator,
) -> Tuple[Chromosome, Chromosome]:
    units1, units2 = collect_units(first), collect_units(second)
    for kind in _KINDS:
        list1, list2 = list(units1.by_kind(kind)), list(units2.by_kind(kind))
        # top-aligned pairs; surplus units keep their place
        for index in range(min(len(list1), len(list2))):
            (gene1, pos1), (gene2, pos2) = list1[index], list2[index]
            child1, child2 = cross_genes(gene1, gene2, cfg.sbx_eta, bounds, rng)
            list1[index], list2[index] = (child1, pos1), (child2, pos2)
        units1, units2 = units1.with_kind(kind, list1), units2.with_kind(kind, list2)
    return units1.restore(), units2.restore()


# --- mutation --------------------------------------------------------------------


def mutate_with_trace(
    chromosome: Chromosome,
    cfg: VariationConfig,
    bounds: GeneBounds,
    rng: np.random.Generator,
) -> Tuple[Chromosome, List[MutationEvent]]:
    events: List[MutationEvent] = []
    head_out: List[LayerGene] = []
    head_back: List[LayerGene] = []
    tail_front: List[LayerGene] = []
    n_head, n_tail = len(chromosome.head), len(chromosome.tail)

    for index, gene in enumerate(chromosome.head):
        if rng.random() >= cfg.mutation_prob:
            head_out.append(gene)
            continue
        proposed = _OPS[int(rng.integers(3))]
        applied: Optional[MutationOp] = proposed
        remaining = n_head - index - 1
        if proposed is MutationOp.ADD:
            kind = _KINDS[int(rng.integers(3))]
            added = random_gene(kind, bounds, rng)
            if kind is GeneKind.FC:
                if n_tail + len(tail_front) < bounds.n_f:
                    tail_front.append(added)
                else:
                    applied = None
            elif len(head_out) + remaining + 2 > bounds.n_cp or (kind is GeneKind.POOL and not head_out):
                applied = None
            else:
                head_out.append(added)
            head_out.append(gene)
        elif proposed is MutationOp.DELETE and head_out:
            # never the leading conv gene
            pass
        else:
            applied = MutationOp.MODIFY
            head_out.append(modify_gene(gene, cfg.pm_eta, bounds, rng))
        events.append(MutationEvent(index, proposed, applied))

    tail_out: List[LayerGene] = list(tail_front)
    for index, gene in enumerate(chromosome.tail):
        if rng.random() >= cfg.mutation_prob:
            tail_out.append(gene)
            continue
        proposed = _OPS[int(rng.integers(3))]
        applied = proposed
        remaining = n_tail - index - 1
        if proposed is MutationOp.ADD:
            kind = _KINDS[int(rng.integers(3))]
            added = random_gene(kind, bounds, rng)
            if kind is not GeneKind.FC:
                if len(head_out) + len(head_back) < bounds.n_cp:
                    head_back.append(added)
                else:
                    applied = None
            elif len(tail_out) + remaining + 2 > bounds.n_f:
                applied = None
            else:
                tail_out.append(added)
            tail_out.append(gene)
        elif proposed is MutationOp.DELETE and len(tail_out) + remaining > 0:
            pass
        else:
            applied = MutationOp.MODIFY
            tail_out.append(modify_gene(gene, cfg.pm_eta, bounds, rng))
        events.append(MutationEvent(n_head + index, proposed, applied))

    mutated = Chromosome(head=tuple(head_out + head_back), tail=tuple(tail_out))
    mutated.validate(bounds)
    if events:
        logger.debug("Mutation points: %s", [(e.position, e.proposed.value, e.applied and e.applied.value) for e in events])
    return mutated, events


def mutate(
    chromosome: Chromosome,
    cfg: VariationConfig,
    bounds: GeneBounds,
    rng: np.random.Generator,
) -> Chromosome:
    mutated, _ = mutate_with_trace(chromosome, cfg, bounds, rng)
    return mutated


def generate_offspring(
    pool: Sequence[Individual],
    cfg: VariationConfig,
    bounds: GeneBounds,
    rng: np.random.Generator,
) -> List[Individual]:
    if len(pool) % 2:
        raise OddPoolSize(f"mating pool of {len(pool)} cannot be paired")
    remaining = list(pool)
    offspring: List[Individual] = []
    while remaining:
        i, j = (int(k) for k in rng.choice(len(remaining), size=2, replace=False))
        first, second = remaining[i], remaining[j]
        for index in sorted((i, j), reverse=True):
            remaining.pop(index)
        if rng.random() < cfg.crossover_prob:
            child1, child2 = crossover(first.chromosome, second.chromosome, cfg, bounds, rng)
        else:
            child1, child2 = first.chromosome, second.chromosome
        for child in (child1, child2):
            offspring.append(new_individual(mutate(child, cfg, bounds, rng), rng))
    return offspring


__all__ = [
    "MutationEvent",
    "MutationOp",
    "OddPoolSize",
    "UnitLists",
    "collect_units",
    "cross_genes",
    "crossover",
    "generate_offspring",
    "modify_gene",
    "mutate",
    "mutate_with_trace",
    "polynomial_mutate",
    "sbx",
]
