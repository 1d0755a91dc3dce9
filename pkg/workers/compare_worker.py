import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.append(str(ROOT))

import argparse
import logging

from core.checkpoint import CheckpointError
from core.config import BestPick, BestPickPolicy
from core.db import ResultsStore, create_tables
from core.engine import EvolutionEngine, compare_over_seeds, select_best
from core.network import NonFiniteLoss
from core.report import format_comparisons, median_difference, tier_table, write_summary
from core.utils import canonical_json

logger = logging.getLogger(__name__)


class CompareWorker:
    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args

    def run_once(self) -> int:
        args = self.args
        checkpoint = Path(args.checkpoint)
        try:
            engine = EvolutionEngine.resume(checkpoint, use_cache=False)
        except (CheckpointError, OSError, ValueError) as exc:
            logger.error("Cannot load %s: %s", checkpoint, exc)
            return 2
        best = select_best(engine.population, BestPick(policy=BestPickPolicy(args.policy), tolerance=args.tolerance))
        cfg = engine.cfg.final_train
        if args.epochs is not None:
            cfg = cfg.copy(update={"epochs": args.epochs})
        train_set, test_set = engine.final_datasets()
        try:
            comparisons = compare_over_seeds(best, train_set, test_set, cfg, args.seeds)
        except NonFiniteLoss as exc:
            logger.error("Initializer comparison aborted: %s", exc)
            return 3

        out_dir = checkpoint.parent
        report = format_comparisons(comparisons)
        (out_dir / "initializer_comparison.txt").write_text(report + "\n")
        write_summary(out_dir / "summary.txt", engine.history, best, tier_table(engine.population), comparisons)

        create_tables()
        store = ResultsStore(run_id=engine.namespace)
        for item in comparisons:
            store.add_final_result(
                "compare_init",
                best.id,
                best.fitness.param_count,
                cfg.epochs,
                item.gaussian_error,
                xavier_error=item.xavier_error,
                details=canonical_json({"seed": item.seed, "difference": item.difference}),
            )
        print(report)
        logger.info("Median initializer gap over %d seeds: %+.4f", len(comparisons), median_difference(comparisons))
        return 0


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True, help="Checkpoint holding the evolved population")
    parser.add_argument("--seeds", type=int, default=1, help="Number of training seeds to compare over")
    parser.add_argument(
        "--policy",
        default=BestPickPolicy.MIN_ERROR.value,
        choices=[policy.value for policy in BestPickPolicy],
    )
    parser.add_argument("--tolerance", type=float, default=0.0)
    parser.add_argument("--epochs", type=int, help="Override the configured final-training epochs")


def run(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        logger.error("--seeds must be >= 1")
        return 2
    return CompareWorker(args).run_once()


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Compare evolved Gaussian and Xavier initialization")
    add_arguments(parser)
    return parser.parse_args()


def main() -> None:
    sys.exit(run(parse_args()))


if __name__ == "__main__":
    main()
