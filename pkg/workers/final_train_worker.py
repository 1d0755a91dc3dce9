import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.append(str(ROOT))

import argparse
import logging

import numpy as np

from core.checkpoint import CheckpointError
from core.config import BestPick, BestPickPolicy
from core.db import ResultsStore, create_tables
from core.engine import EvolutionEngine, final_train, select_best
from core.models import FinalTrainResult
from core.network import NonFiniteLoss

logger = logging.getLogger(__name__)


class FinalTrainWorker:
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
        policy = BestPick(policy=BestPickPolicy(args.policy), tolerance=args.tolerance)
        best = select_best(engine.population, policy)
        cfg = engine.cfg.final_train
        if args.epochs is not None:
            cfg = cfg.copy(update={"epochs": args.epochs})
        train_set, test_set = engine.final_datasets()
        try:
            trained = final_train(best, train_set, test_set, cfg)
        except NonFiniteLoss as exc:
            logger.error("Final training aborted: %s", exc)
            return 3

        out_dir = Path(args.out) if args.out else checkpoint.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        result = FinalTrainResult(
            individual_id=best.id,
            param_count=trained.spec.param_count,
            epochs=cfg.epochs,
            test_error=trained.test_error,
            final_loss=trained.epoch_losses[-1] if trained.epoch_losses else None,
        )
        (out_dir / "final_train.json").write_text(result.json(indent=2))
        arrays = {}
        for index, params in enumerate(trained.weights):
            if params is not None:
                arrays[f"layer{index}_weights"] = params.weights
                arrays[f"layer{index}_bias"] = params.bias
        np.savez(out_dir / "final_weights.npz", **arrays)

        create_tables()
        ResultsStore(run_id=engine.namespace).add_final_result(
            "final_train", best.id, result.param_count, result.epochs, result.test_error
        )
        print(f"{best.id}: test error {trained.test_error:.4f} after {cfg.epochs} epochs ({result.param_count:,} params)")
        return 0


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True, help="Checkpoint holding the evolved population")
    parser.add_argument(
        "--policy",
        default=BestPickPolicy.MIN_ERROR.value,
        choices=[policy.value for policy in BestPickPolicy],
        help="How the best individual is picked",
    )
    parser.add_argument("--tolerance", type=float, default=0.0, help="Error tolerance for the parameter policy")
    parser.add_argument("--epochs", type=int, help="Override the configured final-training epochs")
    parser.add_argument("--out", help="Output directory (defaults to the checkpoint's directory)")


def run(args: argparse.Namespace) -> int:
    return FinalTrainWorker(args).run_once()


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Deep-train the best evolved individual")
    add_arguments(parser)
    return parser.parse_args()


def main() -> None:
    sys.exit(run(parse_args()))


if __name__ == "__main__":
    main()
