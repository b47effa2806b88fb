"""
Command-line interface.

    python -m onebit ber-sweep   --config cfg.json --snr 0:20:5 --out ber.csv
    python -m onebit node-count  --nt 8 --k-values 2,3,4 --trials 50
    python -m onebit convergence --mod 16qam --trials 10
    python -m onebit prop1-audit --nt 16 --k 4 --trials 100
    python -m onebit serve       --port 8000

Experiment subcommands take a JSON config mirroring SimConfig plus
overrides; overrides win over the file. Configuration errors exit with 2.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from onebit.config import get_settings
from onebit.logging_config import configure_logging
from onebit.models import RunKind, SimConfig
from onebit.services.precoders import UnknownPrecoderError
from onebit.services.simulation import RECORD_TYPES, ExportError, export_csv, run_experiment

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2


def parse_snr(text: str) -> List[float]:
    """'0,5,10' or 'start:stop:step' (stop inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"SNR range must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [float(v) for v in np.round(start + step * np.arange(count), 10)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR list {text!r}") from None


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from None


def parse_name_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with SimConfig fields")
    parser.add_argument("--nt", type=int, help="transmit antennas")
    parser.add_argument("--k", type=int, help="users")
    parser.add_argument("--mod", dest="modulation", help="qpsk, 8psk, 16psk, 16qam, 64qam")
    parser.add_argument("--snr", dest="snr_db", type=parse_snr, help="'0,5,10' or '0:20:2'")
    parser.add_argument("--trials", type=int, help="frames per SNR point or seeds per experiment")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--precoders", type=parse_name_list, help="comma list, e.g. zf-1bit,ci-1bit,opsu,pbb")
    parser.add_argument("--epsilon0", type=float, help="alternating-optimisation threshold")
    parser.add_argument("--k-values", dest="k_values", type=parse_int_list, help="comma list of user counts")
    parser.add_argument("--duplicate-users", dest="duplicate_users", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--no-timing", dest="record_timing", action="store_const", const=False,
                        help="write wall_ms = 0 so output files are byte-identical across runs")
    parser.add_argument("--out", help="CSV output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onebit", description="1-bit CI precoding experiments")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in RunKind:
        _add_experiment_arguments(sub.add_parser(kind.value, help=f"run the {kind.value} experiment"))

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def load_config(args: argparse.Namespace) -> SimConfig:
    """Merge the JSON file (if any) with command-line overrides and validate."""
    data: Dict[str, Any] = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    for field in SimConfig.model_fields:
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value
    return SimConfig.model_validate(data)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level or get_settings().log_level)

    if args.command == "serve":
        import uvicorn

        uvicorn.run("onebit.main:app", host=args.host, port=args.port)
        return 0

    kind = RunKind(args.command)
    try:
        cfg = load_config(args)
    except (OSError, ValueError, ValidationError) as e:
        print(f"onebit: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        records = run_experiment(kind, cfg)
    except UnknownPrecoderError as e:
        print(f"onebit: configuration error: {e.args[0]}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        export_csv(records, cfg.out if cfg.out else sys.stdout, RECORD_TYPES[kind])
    except ExportError as e:
        print(f"onebit: {e}", file=sys.stderr)
        return 1

    logger.info("%s finished: %d rows%s", kind.value, len(records), f" -> {cfg.out}" if cfg.out else "")
    return 0


if __name__ == "__main__":
    sys.exit(main())
