#!/usr/bin/env python3
import argparse
import sys
from dataclasses import fields
from typing import Callable, Dict, List, Optional

from chameleon.core.config import PRESET_ALIASES, PRESETS
from chameleon.core.errors import ChameleonError
from chameleon.core.experiment import PRIVATE_KEYS, SUB_CONFIGS, build_config, load_config_file
from chameleon.core.logger import set_log_level, setup_logger
from chameleon.core.orchestrator import cmd_curve, cmd_eval, cmd_heatmap, cmd_metatrain, cmd_pretrain, cmd_run
from chameleon.core.schemas import StageResult

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Command Line
# =================================================================================================
#
# USAGE:
#   python -m chameleon run --dataset data/banknote.csv --mode nosplit --variants random,yhat,full --seeds 0
#   python -m chameleon pretrain --dataset data/wine.csv --preset desk
#   python -m chameleon heatmap --dataset data/wine.csv --preset desk
#
# Registry Pattern: @register_command maps a subcommand name to the orchestrator function that
# runs it, so adding a stage means one decorated function and no parser changes.
#
# Every protocol field (inner_lr, meta_epochs, ...) is also a flag. Flags left unset stay None
# and fall through to the config file, then the preset.
#
# =================================================================================================

COMMAND_REGISTRY: Dict[str, Callable] = {}


def register_command(name: str, help_text: str = ""):
    """Decorator to register a pipeline command."""
    def decorator(func):
        COMMAND_REGISTRY[name] = func
        func.help_text = help_text
        return func
    return decorator


@register_command('run', "full pipeline: pretrain, meta-train, evaluate, compare")
def run_command(config) -> StageResult:
    return cmd_run(config)


@register_command('pretrain', "reordering pretraining of the encoder")
def pretrain_command(config) -> StageResult:
    return cmd_pretrain(config)


@register_command('metatrain', "Reptile meta-training per variant")
def metatrain_command(config) -> StageResult:
    return cmd_metatrain(config)


@register_command('eval', "few-shot evaluation of meta-trained checkpoints")
def eval_command(config) -> StageResult:
    return cmd_eval(config)


@register_command('heatmap', "feature-shift heat map of the pretrained encoder")
def heatmap_command(config) -> StageResult:
    return cmd_heatmap(config)


@register_command('curve', "test loss over adaptation steps, learned vs untrained init")
def curve_command(config) -> StageResult:
    return cmd_curve(config)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="KEY=VALUE experiment config file")
    parser.add_argument("--dataset", dest="datasets", nargs="+", default=None,
                        help="dataset CSV file(s); last column is the label")
    parser.add_argument("--mode", choices=["split", "nosplit"], default=None)
    parser.add_argument("--variants", default=None, help="comma separated, e.g. random,yhat,full")
    parser.add_argument("--seeds", default=None, help="comma separated seeds, e.g. 0,1,2")
    parser.add_argument("--n-seeds", dest="n_seeds", type=int, default=None, help="seeds 0..n-1")
    parser.add_argument("--preset", choices=sorted(PRESETS) + sorted(PRESET_ALIASES), default=None)
    parser.add_argument("--out", default=None, help="output directory (default: runs)")
    parser.add_argument("--log-level", dest="log_level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="overrides CHM_LOG_LEVEL")
    parser.add_argument("--cache", action=argparse.BooleanOptionalAction, default=None,
                        help="reuse the evaluation-task cache")
    for name in ("eval_tasks", "heatmap_tasks", "curve_steps", "threads"):
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int, default=None)

    added = set(PRIVATE_KEYS)
    for sub in SUB_CONFIGS.values():
        for f in fields(sub):
            if f.name in added:
                continue
            added.add(f.name)
            parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=f.type, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chameleon",
        description="Meta-learning across tabular datasets with differing feature spaces.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMAND_REGISTRY.items():
        _add_common_flags(commands.add_parser(name, help=func.help_text))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level")}
    try:
        config = build_config(load_config_file(args.config), overrides)
        result = COMMAND_REGISTRY[args.command](config)
    except ChameleonError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code

    if result['failures']:
        logger.error(f"{len(result['failures'])} failure(s); see the manifest for details")
    logger.info(f"'{args.command}' wrote {len(result['artifacts'])} artifact(s) under {config.out}")
    return result['status']


if __name__ == "__main__":
    sys.exit(main())
