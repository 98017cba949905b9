"""
SCKD-Discovery: Desk-scale Novel Class Discovery
Self-cooperation knowledge distillation on small synthetic or CSV datasets.

Command-line entry point: train a single experiment, run an imbalance sweep,
dump embeddings from a checkpoint, or run the oracle/invariant checks.
"""

import argparse
import importlib.util
import logging
import os
import sys
from typing import List, Optional

# Add src to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.checks import run_checks
from src.config import apply_preset, experiment_from_dict, load_experiment, load_sweep
from src.errors import ConfigurationError, SckdError
from src.experiment import emit_embeddings, prepare_data, run_experiment, run_sweep
from src.model import load_checkpoint

logger = logging.getLogger("sckd")


def check_module_available(module_name: str) -> bool:
    """Check if a module is available without importing it."""
    return importlib.util.find_spec(module_name) is not None


TQDM_AVAILABLE = check_module_available("tqdm")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class ProgressReporter:
    """progress_callback that drives a tqdm bar when available, log lines otherwise."""

    def __init__(self, description: str):
        self.bar = None
        self.last_logged = -1
        if TQDM_AVAILABLE:
            from tqdm import tqdm
            self.bar = tqdm(total=1000, desc=description, leave=False)

    def __call__(self, fraction: float, message: str):
        if self.bar is not None:
            self.bar.n = int(fraction * 1000)
            self.bar.set_postfix_str(message, refresh=False)
            self.bar.refresh()
            return
        decile = int(fraction * 10)
        if decile > self.last_logged:
            self.last_logged = decile
            logger.info("%3d%% %s", int(fraction * 100), message)

    def close(self):
        if self.bar is not None:
            self.bar.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sckd", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(sub: argparse.ArgumentParser, required: bool = False):
        sub.add_argument("--config", required=required, help="TOML config file")
        sub.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config field by dotted path, e.g. train.sckd.beta=0",
        )

    train = commands.add_parser("train", help="run one experiment over its seeds")
    add_config_flags(train)
    train.add_argument("--preset", help="ablation preset applied to the config (e.g. baseline, only_k_to_n)")

    sweep = commands.add_parser("sweep", help="run the class-imbalance sweep")
    add_config_flags(sweep, required=True)

    embed = commands.add_parser("embed", help="write per-sample features from a checkpoint")
    embed.add_argument("--checkpoint", required=True, help="model.npz written by train")
    embed.add_argument("--output", required=True, help="destination CSV")
    embed.add_argument("--split", choices=("test", "train"), default="test")

    check = commands.add_parser("check", help="run the oracle and invariant checks")
    check.add_argument("--directional", action="store_true", help="also run the slow desk-scale checks")
    check.add_argument("--workdir", help="directory for check artefacts (default: a temp dir)")
    return parser


def cmd_train(args) -> int:
    config = load_experiment(args.config, args.set)
    if args.preset:
        config = apply_preset(config, args.preset)
    progress = ProgressReporter(config.name)
    try:
        result = run_experiment(config, progress_callback=progress)
    finally:
        progress.close()

    for key, stats in sorted(result.aggregate.items()):
        if stats["mean"] is not None:
            logger.info("%-40s %.4f ± %.4f", key, stats["mean"], stats["std"])
    if result.failed:
        logger.error("Run marked failed; partial results in %s", result.output_dir)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.config, args.set)
    progress = ProgressReporter("sweep")
    try:
        table = run_sweep(spec, progress_callback=progress)
    finally:
        progress.close()
    print(table.to_string(index=False))
    return EXIT_RUNTIME if (table["status"] != "completed").any() else EXIT_OK


def cmd_embed(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    if not meta:
        raise ConfigurationError("checkpoint carries no run config", field="checkpoint")
    seed = meta.pop("run_seed", 0)
    config = experiment_from_dict(meta)
    train_set, test_set = prepare_data(config, seed)
    frame = emit_embeddings(model, test_set if args.split == "test" else train_set, args.output)
    logger.info("Embedded %d samples into %s", len(frame), args.output)
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks(directional=args.directional, workdir=args.workdir)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<22} {r.seconds:7.2f}s  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "embed": cmd_embed, "check": cmd_check}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except (SckdError, OSError) as e:
        logger.error("Run failed: %s", e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
