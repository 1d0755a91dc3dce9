import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.append(str(ROOT))

import argparse
import logging

from core.data import SyntheticKind, make_synthetic, write_idx
from core.utils import stopwatch

logger = logging.getLogger(__name__)


class DataWorker:
    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args

    def run_once(self) -> int:
        args = self.args
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            with stopwatch() as timing:
                train = make_synthetic(SyntheticKind(args.kind), args.n, args.size, args.seed)
                write_idx(train, out_dir / "train-images-idx3-ubyte", out_dir / "train-labels-idx1-ubyte")
                if args.test_n:
                    test = make_synthetic(SyntheticKind(args.kind), args.test_n, args.size, args.seed + 1)
                    write_idx(test, out_dir / "t10k-images-idx3-ubyte", out_dir / "t10k-labels-idx1-ubyte")
        except ValueError as exc:
            logger.error("Cannot generate dataset: %s", exc)
            return 2
        logger.info(
            "Wrote %s dataset (%d images of %dx%d) to %s in %.2fs",
            args.kind,
            args.n,
            args.size,
            args.size,
            out_dir,
            timing["seconds"],
        )
        return 0


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kind", default=SyntheticKind.RECTANGLE_TOY.value, choices=[kind.value for kind in SyntheticKind])
    parser.add_argument("--n", type=int, default=1000, help="Number of training images")
    parser.add_argument("--size", type=int, default=16, help="Image side length in pixels")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--test-n", type=int, default=0, help="Number of held-out test images")
    parser.add_argument("--out", required=True, help="Output directory for the IDX files")


def run(args: argparse.Namespace) -> int:
    return DataWorker(args).run_once()


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Generate a synthetic IDX dataset")
    add_arguments(parser)
    return parser.parse_args()


def main() -> None:
    sys.exit(run(parse_args()))


if __name__ == "__main__":
    main()
