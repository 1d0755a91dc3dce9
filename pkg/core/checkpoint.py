"""Run-state checkpoints as checksummed JSON documents."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.genome import Chromosome, Individual
from core.models import FitnessRecord, GenerationStats
from core.utils import atomic_write_text, canonical_json, sha256_hex

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be read back."""


class VersionMismatch(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class RunState:
    generation: int
    population: List[Individual]
    rng_state: Dict[str, Any]
    history: List[GenerationStats] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)


def individual_to_dict(individual: Individual) -> Dict[str, Any]:
    return {
        "id": individual.id,
        "rng_seed": individual.rng_seed,
        "chromosome": individual.chromosome.to_text(),
        "fitness": individual.fitness.dict() if individual.fitness is not None else None,
    }


def individual_from_dict(payload: Dict[str, Any]) -> Individual:
    fitness: Optional[FitnessRecord] = None
    if payload.get("fitness") is not None:
        fitness = FitnessRecord(**payload["fitness"])
    return Individual(
        chromosome=Chromosome.from_text(payload["chromosome"]),
        id=payload["id"],
        rng_seed=int(payload["rng_seed"]),
        fitness=fitness,
    )


def checkpoint_save(path: Path | str, state: RunState) -> Path:
    body = {
        "generation": state.generation,
        "population": [individual_to_dict(individual) for individual in state.population],
        "rng_state": state.rng_state,
        "history": [stats.dict() for stats in state.history],
        "config": state.config,
    }
    encoded_body = canonical_json(body)
    document = {"version": CHECKPOINT_VERSION, "checksum": sha256_hex(encoded_body), "body": body}
    path = Path(path)
    atomic_write_text(path, canonical_json(document))
    logger.info("Checkpoint for generation %d written to %s", state.generation, path)
    return path


def checkpoint_load(path: Path | str) -> RunState:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path} is not a readable checkpoint: {exc}") from exc
    if not isinstance(document, dict) or not {"version", "checksum", "body"} <= document.keys():
        raise ChecksumError(f"{path} is missing checkpoint fields")
    if document["version"] != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path} has format version {document['version']}, expected {CHECKPOINT_VERSION}")
    body = document["body"]
    if sha256_hex(canonical_json(body)) != document["checksum"]:
        raise ChecksumError(f"{path} failed checksum verification")
    try:
        return RunState(
            generation=int(body["generation"]),
            population=[individual_from_dict(item) for item in body["population"]],
            rng_state=body["rng_state"],
            history=[GenerationStats(**item) for item in body["history"]],
            config=body["config"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path} holds an invalid run state: {exc}") from exc


__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "ChecksumError",
    "RunState",
    "VersionMismatch",
    "checkpoint_load",
    "checkpoint_save",
    "individual_from_dict",
    "individual_to_dict",
]
