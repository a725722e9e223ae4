"""Command-line entry point: ``smcda run|sweep|validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ConfigError, load_config
from .experiment import run_experiment

log = logging.getLogger("smcda")


def _seed_output(template: str, seed: int) -> str:
    if "{seed}" in template:
        return template.format(seed=seed)
    p = Path(template)
    return str(p.with_name(f"{p.stem}_seed{seed}{p.suffix}"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcda", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--output", help="trace path (sweep: may contain '{seed}')")
        p.add_argument("--threads", type=int, default=None, help="BLAS threads")

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="run the same config over several seeds")
    common(p_sweep)
    p_sweep.add_argument("--seeds", type=int, nargs="+", required=True)

    p_val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    p_val.add_argument("config")
    p_val.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = cfg.with_overrides(seed=args.seed)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        sys.stdout.write(cfg.dump())
        return 0

    threads = threadpool_limits(limits=args.threads, user_api="blas") if args.threads else nullcontext()
    status = 0
    with threads:
        seeds = [cfg.seed] if args.command == "run" else args.seeds
        for seed in seeds:
            c = cfg.with_overrides(seed=seed)
            out = args.output or c.output
            if args.command == "sweep":
                out = _seed_output(out, seed)
            try:
                path, ok = run_experiment(c, out)
            except (ConfigError, OSError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 2
            print(f"{'wrote' if ok else 'INCOMPLETE'} {path}")
            if not ok:
                status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
