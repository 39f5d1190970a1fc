"""``fredino`` command-line entry point.

Exit codes: 0 success, 2 config error, 3 diverged or not contractive, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONTRACTIVE = 3
EXIT_IO = 4

COMMANDS = ("generate", "train", "evaluate", "contraction", "solve-pde")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("fredino")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fredino", description="Learn and check Fredholm integral operators.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="config JSON path or a preset name (ex5_1 ... ex5_5)")
    p.add_argument("--out", default=None, help="output directory (default: runs/<config name>)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    p.add_argument("--paper-scale", action="store_true", help="apply the config's full-scale overrides")
    p.add_argument("--model", default=None, help="model directory (default: <out>/model)")
    p.add_argument("--data", default=None, help="dataset directory (default: <out>/data)")
    p.add_argument("--true-model", action="store_true",
                   help="evaluate the ground-truth kernel or potential instead of a trained model")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        # must happen before numpy loads its BLAS
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from . import runner
    from .errors import ConfigError, FormatVersionMismatch, NonFiniteValue, NotConverged

    try:
        cfg = runner.resolve_config(runner.load_config(args.config), args.paper_scale, args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO

    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    try:
        result = runner.run_command(args.command, cfg, out,
                                    Path(args.model) if args.model else None,
                                    Path(args.data) if args.data else None,
                                    args.true_model)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (runner.NotContractive, NonFiniteValue, NotConverged) as err:
        print(f"not contractive: {err}", file=sys.stderr)
        return EXIT_NOT_CONTRACTIVE
    except (OSError, FormatVersionMismatch) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
