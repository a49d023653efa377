"""Command line: train, eval, sweep, plotdata."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import POLICIES, ConfigError, load_config
from .harness import MetricFileError, emit_plot_data, run, sweep
from .training import TrainingDiverged


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgoffload", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "sweep", "plotdata"):
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        if name == "plotdata":
            continue
        p.add_argument("--policy", choices=POLICIES)
        p.add_argument("--servers", type=int)
        p.add_argument("--devices", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--audit", action="store_true", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "plotdata":
            cfg = load_config(args.config, {"out": args.out})
            for path in emit_plot_data(cfg.out, cfg.final_window):
                print(path)
            return 0
        cfg = load_config(args.config, {
            "policy": args.policy, "n_servers": args.servers, "n_devices": args.devices,
            "episodes": args.episodes, "seed": args.seed, "out": args.out, "audit": args.audit,
        })
        if args.command == "sweep":
            results = sweep(cfg)
        else:
            results = [run(cfg, args.command)]
        for paths in results:
            print(paths["metrics"])
        return 0
    except (ConfigError, MetricFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
