"""Variable-length chromosome encoding of CNN architectures.

A chromosome is a head of convolution/pooling genes followed by a tail of
fully connected genes. Convolution and fully connected genes also carry the
mean and standard deviation used to sample that layer's initial weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import GeneBounds
from core.models import FitnessRecord
from core.network import (
    DenseLayer,
    FlattenLayer,
    NetworkSpec,
    Padding,
    PoolType,
    Shape,
    build_conv,
    build_pool,
)

logger = logging.getLogger(__name__)


class GeneKind(str, Enum):
    CONV = "conv"
    POOL = "pool"
    FC = "fc"


class InvalidChromosome(ValueError):
    """Raised when a chromosome breaks the head/tail grammar or its gene bounds."""


def _in_range(value: float, interval: Tuple[float, float]) -> bool:
    return interval[0] <= value <= interval[1]


@dataclass(frozen=True)
class ConvGene:
    filter_size: int
    num_feature_maps: int
    weight_mean: float
    weight_std: float
    stride: int = 1
    conv_type: Padding = Padding.SAME

    kind: ClassVar[GeneKind] = GeneKind.CONV

    def problems(self, bounds: GeneBounds) -> List[str]:
        found = []
        if not bounds.min_filter_size <= self.filter_size <= bounds.max_filter_size:
            found.append(f"filter_size {self.filter_size} outside [{bounds.min_filter_size}, {bounds.max_filter_size}]")
        if not bounds.min_feature_maps <= self.num_feature_maps <= bounds.max_feature_maps:
            found.append(f"num_feature_maps {self.num_feature_maps} outside bounds")
        if self.stride < 1:
            found.append("stride must be positive")
        if self.weight_std <= 0 or not _in_range(self.weight_std, bounds.std_range):
            found.append(f"weight_std {self.weight_std} outside {bounds.std_range}")
        if not _in_range(self.weight_mean, bounds.mean_range):
            found.append(f"weight_mean {self.weight_mean} outside {bounds.mean_range}")
        return found

    def to_line(self) -> str:
        return (
            f"conv filter_width={self.filter_size} filter_height={self.filter_size} "
            f"feature_maps={self.num_feature_maps} stride_width={self.stride} stride_height={self.stride} "
            f"conv_type={Padding(self.conv_type).value} weight_std={self.weight_std!r} weight_mean={self.weight_mean!r}"
        )


@dataclass(frozen=True)
class PoolGene:
    kernel_size: int
    pool_type: PoolType = PoolType.MAX

    kind: ClassVar[GeneKind] = GeneKind.POOL

    @property
    def stride(self) -> int:
        return self.kernel_size

    def problems(self, bounds: GeneBounds) -> List[str]:
        if not bounds.min_kernel_size <= self.kernel_size <= bounds.max_kernel_size:
            return [f"kernel_size {self.kernel_size} outside [{bounds.min_kernel_size}, {bounds.max_kernel_size}]"]
        return []

    def to_line(self) -> str:
        return (
            f"pool kernel_width={self.kernel_size} kernel_height={self.kernel_size} "
            f"stride_width={self.stride} stride_height={self.stride} pool_type={PoolType(self.pool_type).value}"
        )


@dataclass(frozen=True)
class FcGene:
    num_neurons: int
    weight_mean: float
    weight_std: float

    kind: ClassVar[GeneKind] = GeneKind.FC

    def problems(self, bounds: GeneBounds) -> List[str]:
        found = []
        if not bounds.min_neurons <= self.num_neurons <= bounds.max_neurons:
            found.append(f"num_neurons {self.num_neurons} outside [{bounds.min_neurons}, {bounds.max_neurons}]")
        if self.weight_std <= 0 or not _in_range(self.weight_std, bounds.std_range):
            found.append(f"weight_std {self.weight_std} outside {bounds.std_range}")
        if not _in_range(self.weight_mean, bounds.mean_range):
            found.append(f"weight_mean {self.weight_mean} outside {bounds.mean_range}")
        return found

    def to_line(self) -> str:
        return f"fc neurons={self.num_neurons} weight_std={self.weight_std!r} weight_mean={self.weight_mean!r}"


HeadGene = Union[ConvGene, PoolGene]
LayerGene = Union[ConvGene, PoolGene, FcGene]


def _square(fields: Dict[str, str], width: str, height: str) -> int:
    if fields[width] != fields[height]:
        raise InvalidChromosome(f"{width}={fields[width]} and {height}={fields[height]} differ; only square sizes are encoded")
    return int(fields[width])


def parse_gene(line: str) -> LayerGene:
    kind, *tokens = line.split()
    try:
        fields = dict(token.split("=", 1) for token in tokens)
        if kind == GeneKind.CONV.value:
            stride = _square(fields, "stride_width", "stride_height")
            return ConvGene(
                filter_size=_square(fields, "filter_width", "filter_height"),
                num_feature_maps=int(fields["feature_maps"]),
                weight_mean=float(fields["weight_mean"]),
                weight_std=float(fields["weight_std"]),
                stride=stride,
                conv_type=Padding(fields["conv_type"]),
            )
        if kind == GeneKind.POOL.value:
            kernel = _square(fields, "kernel_width", "kernel_height")
            if _square(fields, "stride_width", "stride_height") != kernel:
                raise InvalidChromosome("pooling stride must equal its kernel size")
            return PoolGene(kernel_size=kernel, pool_type=PoolType(fields["pool_type"]))
        if kind == GeneKind.FC.value:
            return FcGene(
                num_neurons=int(fields["neurons"]),
                weight_mean=float(fields["weight_mean"]),
                weight_std=float(fields["weight_std"]),
            )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, InvalidChromosome):
            raise
        raise InvalidChromosome(f"cannot parse gene line {line!r}: {exc}") from exc
    raise InvalidChromosome(f"unknown gene kind {kind!r}")


@dataclass(frozen=True)
class Chromosome:
    head: Tuple[HeadGene, ...]
    tail: Tuple[FcGene, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "head", tuple(self.head))
        object.__setattr__(self, "tail", tuple(self.tail))

    @property
    def genes(self) -> Tuple[LayerGene, ...]:
        return self.head + self.tail

    @property
    def depth(self) -> int:
        return len(self.head) + len(self.tail)

    def kind_sequence(self) -> Tuple[GeneKind, ...]:
        return tuple(gene.kind for gene in self.genes)

    def structural_problems(self) -> List[str]:
        found = []
        if not self.head:
            found.append("head is empty")
        elif not isinstance(self.head[0], ConvGene):
            found.append("head must start with a convolution gene")
        if any(not isinstance(gene, (ConvGene, PoolGene)) for gene in self.head):
            found.append("head holds a non conv/pool gene")
        if not self.tail:
            found.append("tail is empty")
        if any(not isinstance(gene, FcGene) for gene in self.tail):
            found.append("tail holds a non fc gene")
        return found

    def problems(self, bounds: GeneBounds) -> List[str]:
        found = self.structural_problems()
        if len(self.head) > bounds.n_cp:
            found.append(f"head length {len(self.head)} exceeds n_cp={bounds.n_cp}")
        if len(self.tail) > bounds.n_f:
            found.append(f"tail length {len(self.tail)} exceeds n_f={bounds.n_f}")
        for position, gene in enumerate(self.genes):
            found.extend(f"gene {position}: {problem}" for problem in gene.problems(bounds))
        return found

    def validate(self, bounds: Optional[GeneBounds] = None) -> None:
        found = self.problems(bounds) if bounds is not None else self.structural_problems()
        if found:
            raise InvalidChromosome("; ".join(found))

    def is_valid(self, bounds: GeneBounds) -> bool:
        return not self.problems(bounds)

    def to_text(self) -> str:
        return "\n".join(gene.to_line() for gene in self.genes) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Chromosome":
        genes = [parse_gene(line) for line in text.splitlines() if line.strip()]
        split = next((i for i, gene in enumerate(genes) if isinstance(gene, FcGene)), len(genes))
        chromosome = cls(head=tuple(genes[:split]), tail=tuple(genes[split:]))
        chromosome.validate()
        return chromosome


@dataclass
class Individual:
    chromosome: Chromosome
    id: str
    rng_seed: int
    fitness: Optional[FitnessRecord] = None

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


def new_individual(chromosome: Chromosome, rng: np.random.Generator) -> Individual:
    return Individual(
        chromosome=chromosome,
        id=rng.bytes(8).hex(),
        rng_seed=int(rng.integers(0, 2**31 - 1)),
    )


def random_gene(kind: GeneKind, bounds: GeneBounds, rng: np.random.Generator) -> LayerGene:
    kind = GeneKind(kind)
    if kind is GeneKind.CONV:
        return ConvGene(
            filter_size=int(rng.integers(bounds.min_filter_size, bounds.max_filter_size + 1)),
            num_feature_maps=int(rng.integers(bounds.min_feature_maps, bounds.max_feature_maps + 1)),
            weight_mean=float(rng.uniform(*bounds.mean_range)),
            weight_std=float(rng.uniform(*bounds.std_range)),
        )
    if kind is GeneKind.POOL:
        return PoolGene(
            kernel_size=int(rng.integers(bounds.min_kernel_size, bounds.max_kernel_size + 1)),
            pool_type=PoolType.MAX if rng.integers(2) == 0 else PoolType.AVG,
        )
    return FcGene(
        num_neurons=int(rng.integers(bounds.min_neurons, bounds.max_neurons + 1)),
        weight_mean=float(rng.uniform(*bounds.mean_range)),
        weight_std=float(rng.uniform(*bounds.std_range)),
    )


def random_chromosome(bounds: GeneBounds, rng: np.random.Generator) -> Chromosome:
    head_length = int(rng.integers(1, bounds.n_cp + 1))
    head: List[HeadGene] = [random_gene(GeneKind.CONV, bounds, rng)]
    while len(head) < head_length:
        kind = GeneKind.CONV if rng.random() <= 0.5 else GeneKind.POOL
        head.append(random_gene(kind, bounds, rng))
    tail_length = int(rng.integers(1, bounds.n_f + 1))
    tail = [random_gene(GeneKind.FC, bounds, rng) for _ in range(tail_length)]
    return Chromosome(head=tuple(head), tail=tuple(tail))


def init_population(n: int, bounds: GeneBounds, rng: np.random.Generator) -> List[Individual]:
    if n < 1:
        raise ValueError("population size must be >= 1")
    population = [new_individual(random_chromosome(bounds, rng), rng) for _ in range(n)]
    logger.debug("Initialized %d individuals", len(population))
    return population


def decode(chromosome: Chromosome, input_shape: Sequence[int], num_classes: int) -> NetworkSpec:
    """Resolve every layer's shapes and append the flatten step and classifier."""
    chromosome.validate()
    input_dims: Shape = tuple(int(dim) for dim in input_shape)
    shape = input_dims
    layers = []
    for gene in chromosome.head:
        if isinstance(gene, ConvGene):
            layer = build_conv(
                shape,
                gene.filter_size,
                gene.num_feature_maps,
                gene.stride,
                Padding(gene.conv_type),
                gene.weight_mean,
                gene.weight_std,
            )
        else:
            layer = build_pool(shape, gene.kernel_size, gene.stride, PoolType(gene.pool_type))
        layers.append(layer)
        shape = layer.out_shape
    width = int(np.prod(shape))
    layers.append(FlattenLayer(in_shape=shape, out_dim=width))
    for gene in chromosome.tail:
        layers.append(DenseLayer(width, gene.num_neurons, gene.weight_mean, gene.weight_std, relu=True))
        width = gene.num_neurons
    last = chromosome.tail[-1]
    layers.append(DenseLayer(width, num_classes, last.weight_mean, last.weight_std, relu=False))
    return NetworkSpec(input_shape=input_dims, num_classes=int(num_classes), layers=tuple(layers))


def count_parameters(chromosome: Chromosome, input_shape: Sequence[int], num_classes: int) -> int:
    return decode(chromosome, input_shape, num_classes).param_count


__all__ = [
    "Chromosome",
    "ConvGene",
    "FcGene",
    "GeneKind",
    "Individual",
    "InvalidChromosome",
    "LayerGene",
    "PoolGene",
    "count_parameters",
    "decode",
    "init_population",
    "new_individual",
    "parse_gene",
    "random_chromosome",
    "random_gene",
]
