import argparse
import sys

from workers import compare_worker, data_worker, evolve_worker, final_train_worker

COMMANDS = {
    "evolve": (evolve_worker, "Evolve CNN architectures"),
    "final-train": (final_train_worker, "Deep-train the best evolved individual"),
    "compare-init": (compare_worker, "Compare evolved Gaussian and Xavier initialization"),
    "gen-data": (data_worker, "Generate a synthetic IDX dataset"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Desk-scale CNN architecture evolution")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (module, help_text) in COMMANDS.items():
        module.add_arguments(subparsers.add_parser(name, help=help_text, description=help_text))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    module, _ = COMMANDS[args.command]
    return module.run(args)


if __name__ == "__main__":
    sys.exit(main())
