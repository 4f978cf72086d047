"""
Statistical JKO Lab - command-line entry point.

    wgf <subcommand> [--config PATH] [--out DIR] [--seed U64] [--threads N]

Subcommands run a single module (jko-run, fp-run, spde-run, bw-run, estimate)
or a named experiment (experiment --preset NAME, or an experiment config).
Without --config the reference OU setup is used.

Exit codes: 0 on success, 2 on invalid configuration, 3 on numerical failure.
"""

import argparse
import asyncio
import sys
from typing import Dict, List, Optional

import structlog
from pydantic import ValidationError

from . import __version__
from .config.logging import configure_logging
from .config.presets import get_preset, preset_names
from .config.settings import validate_settings
from .core.exceptions import ConfigError, NumericalError, WgfError
from .core.experiment_engine import ExperimentEngine
from .models.run_config import ExperimentConfig, RunKind, load_config
from .services.artifacts import write_error_report

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SUBCOMMANDS: Dict[str, Optional[RunKind]] = {
    "jko-run": RunKind.JKO_RUN,
    "fp-run": RunKind.FP_RUN,
    "spde-run": RunKind.SPDE_RUN,
    "bw-run": RunKind.BW_RUN,
    "estimate": RunKind.ESTIMATE,
    "experiment": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgf", description="Statistical JKO numerical lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override WGF_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["console", "json"], default=None, help="Override WGF_LOG_FORMAT")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML or JSON run configuration")
        p.add_argument("--out", help="Output directory")
        p.add_argument("--seed", type=int, help="64-bit seed, overrides run.seed")
        p.add_argument("--threads", type=int, help="Worker threads")
        if name == "experiment":
            p.add_argument("--preset", choices=preset_names(), help="Named preset used when no config is given")
            p.add_argument("--replications", type=int, help="Override run.replications")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Turn parsed arguments into a run configuration.

    Raises:
        ConfigError: If the file or preset is invalid, or the command lacks a source
    """
    kind = SUBCOMMANDS[args.command]
    preset = getattr(args, "preset", None)
    if args.config:
        cfg = load_config(args.config)
    elif preset:
        cfg = get_preset(preset)
    else:
        if kind is None:
            raise ConfigError("experiment needs --config or --preset")
        cfg = get_preset("reference_ou")

    run_updates = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {args.seed}")
        run_updates["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be at least 1")
        run_updates["threads"] = args.threads
    replications = getattr(args, "replications", None)
    if replications is not None:
        if replications < 1:
            raise ConfigError("replications must be at least 1")
        run_updates["replications"] = replications
    if args.out:
        run_updates["output_dir"] = args.out

    updates = {"run": cfg.run.model_copy(update=run_updates)}
    if kind is not None:
        updates["experiment"] = kind
    return cfg.model_copy(update=updates)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        settings = validate_settings()
        configure_logging(args.log_level or settings.log_level, args.log_format or settings.log_format)
        cfg = resolve_config(args)
        engine = ExperimentEngine(threads=cfg.run.threads)
        out_dir = cfg.run.output_dir or engine.default_output_dir(cfg)
        manifest = asyncio.run(engine.run(cfg, out_dir))
    except NumericalError as e:
        logger.error("numerical_failure", error_type=type(e).__name__, message=e.message, context=e.context)
        write_error_report(out_dir, e)
        return EXIT_NUMERICAL
    except (ConfigError, ValidationError, ValueError) as e:
        logger.error("invalid_configuration", error_type=type(e).__name__, message=str(e))
        write_error_report(out_dir, e)
        return EXIT_CONFIG
    except WgfError as e:
        logger.error("run_failed", error_type=type(e).__name__, message=e.message)
        write_error_report(out_dir, e)
        return EXIT_NUMERICAL

    logger.info("artifacts_written", output_dir=str(out_dir), files=len(manifest.files), summary=manifest.summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
