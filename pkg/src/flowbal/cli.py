"""Command line entry point: ``flowbal simulate|sweep|analytic``."""
from __future__ import annotations

import argparse
import sys
from contextlib import nullcontext
from dataclasses import replace

from flowbal import analysis
from flowbal.config import load_spec
from flowbal.experiments import (BCF_CURVE_HEADER, HEADER, OVERLAY, any_unstable, bcf_loss_curve,
                                 run_rows, write_csv)
from flowbal.model import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 2, 3


def _open_out(path):
    return open(path, "w", newline="") if path else nullcontext(sys.stdout)


def _load(args):
    spec = load_spec(args.config)
    if args.guard is not None:
        spec = replace(spec, run=replace(spec.run, guard=args.guard))
    return spec


def cmd_simulate(args) -> int:
    spec = _load(args)
    if spec.mode != "single":
        raise ConfigError(f"mode: simulate runs 'single' configs; use 'sweep' for {spec.mode!r}")
    rows = run_rows(spec, workers=args.workers, with_overlay=False)
    with _open_out(args.out) as fh:
        write_csv(rows, HEADER, fh)
    return EXIT_UNSTABLE if spec.fatal_instability and any_unstable(rows) else EXIT_OK


def cmd_sweep(args) -> int:
    spec = _load(args)
    if spec.mode == "bcf-loss-curve":
        rows, cols = bcf_loss_curve(spec), BCF_CURVE_HEADER
    else:
        rows, cols = run_rows(spec, workers=args.workers), HEADER + OVERLAY
    with _open_out(args.out) as fh:
        write_csv(rows, cols, fh)
    return EXIT_UNSTABLE if spec.fatal_instability and any_unstable(rows) else EXIT_OK


def cmd_analytic(args) -> int:
    q = args.query
    try:
        if q == "capacity":
            val = analysis.capacity_threshold(args.m)
        elif q == "bcf-join":
            val = analysis.bcf_join_prob(args.p1, args.p2)
        elif q == "bcf-loss":
            val = analysis.bcf_throughput_loss(args.p1, args.p2)
        elif q == "flow-variance":
            val = analysis.flow_size_variance(args.w, args.beta)
        elif q == "arrival-variance":
            val = analysis.arrival_workload_variance(args.lam, args.w, args.beta)
        elif q == "jlw-limit":
            val = analysis.jlw_limit(args.sigma2)
        elif q == "rlb-limit":
            lim = analysis.rlb_limit(args.sigma2, args.m)
            print(f"total\t{lim.total:.6g}")
            print(f"per_ap\t{lim.per_ap:.6g}")
            print(f"total_system_eps\t{analysis.rlb_limit_system_eps(args.sigma2, args.m):.6g}")
            return EXIT_OK
        else:  # argparse restricts choices
            raise AssertionError(q)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    print(f"{q}\t{val:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowbal", description="Load balancing of dynamic flows across fading APs.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("simulate", cmd_simulate, "run one configuration"),
                            ("sweep", cmd_sweep, "run a parameter sweep")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", help="CSV output path (default stdout)")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--guard", type=int, help="total-workload instability guard")
        s.set_defaults(func=fn)

    a = sub.add_parser("analytic", help="closed-form predictions")
    a.add_argument("query", choices=["capacity", "bcf-join", "bcf-loss", "flow-variance", "arrival-variance",
                                     "jlw-limit", "rlb-limit"])
    a.add_argument("--m", type=int)
    a.add_argument("--p1", type=float)
    a.add_argument("--p2", type=float)
    a.add_argument("--w", type=float)
    a.add_argument("--beta", type=float)
    a.add_argument("--lam", type=float)
    a.add_argument("--sigma2", type=float)
    a.set_defaults(func=cmd_analytic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"flowbal: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"flowbal: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
