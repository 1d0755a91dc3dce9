"""Run reporting: generation statistics, history record, tier table, summary."""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.genome import Individual
from core.models import FitnessRecord, GenerationStats, InitializerComparison
from core.selection import elite_order
from core.utils import atomic_write_text, canonical_json

logger = logging.getLogger(__name__)

TIER_COLUMNS = ["accuracy_tier", "param_count", "mean_error", "individual_id"]


def generation_stats(
    generation: int,
    population: Sequence[Individual],
    evaluations: int = 0,
    wall_seconds: float = 0.0,
) -> GenerationStats:
    errors = np.array([individual.fitness.mean_error for individual in population])
    best = min(population, key=elite_order)
    return GenerationStats(
        generation=generation,
        best_mean_error=best.fitness.mean_error,
        mean_mean_error=float(errors.mean()),
        worst_mean_error=float(errors.max()),
        best_param_count=best.fitness.param_count,
        best_id=best.id,
        evaluations=evaluations,
        wall_seconds=wall_seconds,
    )


def _unique_viable(population: Iterable[Individual]) -> List[Individual]:
    seen = {}
    for individual in population:
        if individual.fitness is not None and not individual.fitness.diverged:
            seen.setdefault(individual.id, individual)
    return list(seen.values())


def tier_table(population: Sequence[Individual]) -> pd.DataFrame:
    """Fewest-parameter individual reaching each whole-percent accuracy tier present."""
    viable = _unique_viable(population)
    if not viable:
        return pd.DataFrame(columns=TIER_COLUMNS)
    frame = pd.DataFrame(
        {
            "individual_id": [individual.id for individual in viable],
            "mean_error": [individual.fitness.mean_error for individual in viable],
            "param_count": [individual.fitness.param_count for individual in viable],
        }
    )
    # accuracy 0.97 must land in tier 97, not 96
    frame["accuracy_tier"] = np.floor((1.0 - frame["mean_error"]) * 100.0 + 1e-9).astype(int)
    rows = []
    for tier in sorted(frame["accuracy_tier"].unique(), reverse=True):
        reaching = frame[frame["accuracy_tier"] >= tier].sort_values(
            ["param_count", "mean_error", "individual_id"], kind="mergesort"
        )
        top = reaching.iloc[0]
        rows.append(
            {
                "accuracy_tier": int(tier),
                "param_count": int(top["param_count"]),
                "mean_error": float(top["mean_error"]),
                "individual_id": str(top["individual_id"]),
            }
        )
    return pd.DataFrame(rows, columns=TIER_COLUMNS)


def parameter_spread(population: Sequence[Individual], tolerance: float) -> float:
    """Largest over smallest parameter count among individuals within tolerance of the best error."""
    viable = _unique_viable(population)
    if not viable:
        return 1.0
    best = min(individual.fitness.mean_error for individual in viable)
    counts = [ind.fitness.param_count for ind in viable if ind.fitness.mean_error <= best + tolerance]
    return max(counts) / max(min(counts), 1)


def format_tier_table(table: pd.DataFrame) -> str:
    if table.empty:
        return "(no viable individuals)"
    shown = table.assign(
        accuracy_tier=table["accuracy_tier"].map(lambda tier: f"{tier}%"),
        param_count=table["param_count"].map(lambda count: f"{count:,}"),
    )
    return shown.to_string(index=False)


class HistoryLog:
    """Line-delimited run record; no timing fields so equal runs give equal bytes."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)

    @staticmethod
    def _generation_line(stats: GenerationStats) -> str:
        return canonical_json({"record": "generation", **stats.to_record()}) + "\n"

    def rewrite(self, history: Sequence[GenerationStats]) -> None:
        atomic_write_text(self.path, "".join(self._generation_line(stats) for stats in history))

    def append(self, stats: GenerationStats) -> None:
        with open(self.path, "a") as fp:
            fp.write(self._generation_line(stats))

    def append_tier_table(self, table: pd.DataFrame) -> None:
        with open(self.path, "a") as fp:
            fp.write(canonical_json({"record": "tier_table", "rows": table.to_dict(orient="records")}) + "\n")


class EvaluationLog:
    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, generation: int, individual_id: str, record: FitnessRecord, wall_seconds: float) -> None:
        line = (
            f"generation={generation} id={individual_id} mean_error={record.mean_error:.6f} "
            f"std_error={record.std_error:.6f} param_count={record.param_count} wall_seconds={wall_seconds:.3f}"
        )
        with open(self.path, "a") as fp:
            fp.write(line + "\n")


def history_frame(history: Sequence[GenerationStats]) -> pd.DataFrame:
    return pd.DataFrame([stats.dict() for stats in history])


def format_comparisons(comparisons: Sequence[InitializerComparison]) -> str:
    if not comparisons:
        return "(no initializer comparisons)"
    frame = pd.DataFrame(
        {
            "seed": [item.seed for item in comparisons],
            "gaussian_error": [item.gaussian_error for item in comparisons],
            "xavier_error": [item.xavier_error for item in comparisons],
            "difference": [item.difference for item in comparisons],
        }
    )
    median = float(frame["difference"].median())
    return f"{frame.to_string(index=False)}\nmedian difference (xavier - gaussian): {median:+.4f}"


def write_summary(
    path: Path,
    history: Sequence[GenerationStats],
    best: Individual,
    table: pd.DataFrame,
    comparisons: Optional[Sequence[InitializerComparison]] = None,
) -> Path:
    total_seconds = sum(stats.wall_seconds for stats in history)
    last = history[-1]
    lines = [
        f"generations run: {last.generation}",
        f"best individual: {best.id}",
        f"best mean error: {best.fitness.mean_error:.4f} (std {best.fitness.std_error:.4f})",
        f"best parameter count: {best.fitness.param_count:,}",
        f"wall time: {total_seconds:.1f}s",
        "",
        "best error per generation:",
        history_frame(history)[["generation", "best_mean_error", "mean_mean_error", "best_param_count"]].to_string(
            index=False
        ),
        "",
        "accuracy tiers:",
        format_tier_table(table),
        "",
        "best chromosome:",
        best.chromosome.to_text().rstrip(),
    ]
    if comparisons:
        lines += ["", "initializer comparison:", format_comparisons(comparisons)]
    path = Path(path)
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info("Summary written to %s", path)
    return path


def median_difference(comparisons: Sequence[InitializerComparison]) -> float:
    if not comparisons:
        return math.nan
    return float(np.median([item.difference for item in comparisons]))


__all__ = [
    "EvaluationLog",
    "HistoryLog",
    "format_comparisons",
    "format_tier_table",
    "generation_stats",
    "history_frame",
    "median_difference",
    "parameter_spread",
    "tier_table",
    "write_summary",
]
