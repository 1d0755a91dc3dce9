import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.append(str(ROOT))

import argparse
import logging

from pydantic import ValidationError

from core.checkpoint import CheckpointError
from core.config import RunConfig, load_run_config
from core.data import CountMismatch, FormatError
from core.db import ResultsStore, create_tables
from core.engine import EvolutionEngine

logger = logging.getLogger(__name__)


class EvolveWorker:
    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args

    def build_config(self) -> RunConfig:
        args = self.args
        cfg = load_run_config(args.config) if args.config else RunConfig()
        payload = cfg.to_dict()
        if args.dataset_images or args.dataset_labels:
            payload["dataset"] = {
                "images": args.dataset_images,
                "labels": args.dataset_labels,
                "test_images": args.test_images,
                "test_labels": args.test_labels,
            }
        if args.seed is not None:
            payload["seed"] = args.seed
        if args.workers is not None:
            payload["workers"] = args.workers
        return RunConfig.parse_obj(payload)

    def build_engine(self) -> EvolutionEngine:
        out_dir = Path(self.args.out)
        if self.args.resume:
            return EvolutionEngine.resume(Path(self.args.resume), out_dir=out_dir)
        return EvolutionEngine(self.build_config(), out_dir=out_dir)

    def run_once(self) -> int:
        try:
            engine = self.build_engine()
        except (ValidationError, FormatError, CountMismatch, CheckpointError, OSError, ValueError) as exc:
            logger.error("Cannot start evolution: %s", exc)
            return 2
        create_tables()
        engine.store = ResultsStore(run_id=engine.namespace)
        engine.run()
        best = engine.history[-1]
        logger.info("Run %s finished: best %s at %.4f", engine.namespace, best.best_id, best.best_mean_error)
        return 0


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="RunConfig JSON document")
    parser.add_argument("--dataset-images", help="IDX image file for training")
    parser.add_argument("--dataset-labels", help="IDX label file for training")
    parser.add_argument("--test-images", help="IDX image file of the held-out test split")
    parser.add_argument("--test-labels", help="IDX label file of the held-out test split")
    parser.add_argument("--out", default="runs/latest", help="Output directory")
    parser.add_argument("--seed", type=int, help="Override the configured seed")
    parser.add_argument("--workers", type=int, help="Parallel evaluation processes")
    parser.add_argument("--resume", help="Checkpoint to resume from")


def run(args: argparse.Namespace) -> int:
    return EvolveWorker(args).run_once()


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Evolve CNN architectures")
    add_arguments(parser)
    return parser.parse_args()


def main() -> None:
    sys.exit(run(parse_args()))


if __name__ == "__main__":
    main()
