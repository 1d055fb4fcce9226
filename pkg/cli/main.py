"""
Command-Line Entry Point for Bilevel Restoration Learning

Coordinates the subcommands (train-foe, train-tvdisc, restore, eval,
crossover), logging setup, configuration loading and exit codes:
0 on success, 2 for configuration/input errors, 1 for runtime failures.

Usage:
    python -m cli.main train-tvdisc --config configs/smoke_tvdisc.json --out results
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import colorlog
from pydantic import ValidationError

from cli.commands.evaluation import cmd_crossover, cmd_eval, cmd_restore
from cli.commands.training import cmd_train_foe, cmd_train_tvdisc
from cli.schemas.run_config import KNOWN_BLURS, RunConfig
from src.exceptions import FormatError, ParameterError, RestorationError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "train-foe": cmd_train_foe,
    "train-tvdisc": cmd_train_tvdisc,
    "restore": cmd_restore,
    "eval": cmd_eval,
    "crossover": cmd_crossover,
}

# flag destination -> config key
FLAG_KEYS = {
    "seed": "seed",
    "out": "out",
    "preset": "preset",
    "task": "task",
    "blur": "blur",
    "noise": "noise",
    "L": "L",
    "symmetry": "symmetry",
    "models": "models",
    "n_jobs": "n_jobs",
}


def configure_logging(verbose: bool = False) -> None:
    """Install a coloured console handler on the root logger."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter("%(log_color)s" + LOG_FORMAT))
    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevel-restore",
        description="Bilevel learning of FoE regularizers and TV discretization filters",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, help="JSON run configuration")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--out", type=str, help="Output directory")
        cmd.add_argument("--preset", choices=["fd", "cd3", "cd4"])
        cmd.add_argument("--task", choices=["deblur", "sr"])
        cmd.add_argument("--blur", choices=KNOWN_BLURS)
        cmd.add_argument("--noise", type=float, help="Noise standard deviation")
        cmd.add_argument("--L", dest="L", type=int, help="Number of filters")
        cmd.add_argument("--symmetry", choices=["none", "transpose", "rot90"])
        cmd.add_argument("--model", dest="models", action="append", help="Filter-bank file (repeatable)")
        cmd.add_argument("--n-jobs", dest="n_jobs", type=int)
        cmd.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def load_config(path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
    """
    Read the JSON configuration and apply command-line overrides.

    Raises:
        FileNotFoundError: The configuration file is missing
        FormatError: The file is not valid JSON
        ValidationError: Schema violations or unknown keys
    """
    data: Dict[str, Any] = {}
    if path is not None:
        if not path.exists():
            raise FileNotFoundError(f"configuration file not found: {path}")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})")
        if not isinstance(data, dict):
            raise FormatError(f"{path}: top level must be a JSON object")
    data.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig.model_validate(data)


def _describe_validation(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(x) for x in item["loc"]) or "<root>"
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items()}

    try:
        config = load_config(args.config, overrides)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {_describe_validation(e)}")
        return 2
    except (FileNotFoundError, FormatError) as e:
        logger.error(str(e))
        return 2

    logger.info("=" * 80)
    logger.info(f"RUNNING {args.command.upper()}")
    logger.info("=" * 80)
    try:
        COMMANDS[args.command](config)
    except (FileNotFoundError, FormatError, ParameterError, ValueError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 2
    except RestorationError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 1
    except Exception as e:
        logger.error(f"Unhandled exception: {str(e)}", exc_info=True)
        return 1
    logger.info(f"{args.command} finished; outputs in {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
