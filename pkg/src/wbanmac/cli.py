"""Command line entry point: ``wbanmac simulate | plotdata | trace``."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import PROTOCOLS, ConfigError, parse_config
from .harness import DEFAULT_INTERVALS, SweepSpec, emit_plot_data, run_sweep
from .simulation import Simulation


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _protocols(text: str) -> tuple:
    if text == "all":
        return PROTOCOLS
    out = tuple(p.strip() for p in text.split(","))
    for p in out:
        if p not in PROTOCOLS:
            raise argparse.ArgumentTypeError(f"unknown protocol {p!r}")
    return out


def _cmd_simulate(args) -> int:
    base = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(base.echo())
    if args.point:
        spec = SweepSpec((base.mean_interval_urgent_s,), (base.mean_interval_normal_s,),
                         (base.protocol,), args.seeds)
    else:
        spec = SweepSpec(args.intervals, args.intervals_normal, args.protocols, args.seeds)

    started = time.monotonic()

    def progress(row):
        if not args.quiet:
            print(f"{row.protocol:5s} u={row.mean_interval_urgent:g}s n={row.mean_interval_normal:g}s "
                  f"seed={row.seed} {row.status} delivered={row.delivered}", file=sys.stderr)

    rows = run_sweep(spec, base, out / "results.csv", parallel=args.parallel,
                     resume=args.resume, progress=progress)
    emit_plot_data(out / "results.csv", out / "series")
    failed = sum(1 for r in rows if r.status == "failed")
    print(f"{len(rows)} runs ({failed} failed) in {time.monotonic() - started:.1f} s -> {out}")
    return 1 if failed else 0


def _cmd_plotdata(args) -> int:
    paths = emit_plot_data(args.csv, args.out)
    print(f"wrote {len(paths)} series files to {args.out}")
    return 0


def _cmd_trace(args) -> int:
    cfg = parse_config(args.config)
    if args.stop is not None:
        cfg = cfg.replace(stop_delivered=args.stop)
    sim = Simulation(cfg, trace_frames=True, trace_events=args.events)
    sim.run()
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.frames or not args.events:
            out.write("# start_us\tkind\tsrc\tdst\tpriority\toutcome\tduration_us\n")
            for line in sim.channel.trace_lines():
                out.write(line + "\n")
        if args.events:
            out.write("# time_us\tseq\tkind\ttarget\n")
            for line in sim.engine.trace_lines():
                out.write(line + "\n")
        if args.mac:
            out.write("# time_us\tnode\tevent\tdetail\n")
            for line in sim.mac_log_lines():
                out.write(line + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wbanmac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an interval sweep and write results.csv")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seeds", type=int, default=10, help="seeds per sweep point")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.add_argument("--resume", action="store_true", help="skip runs already in results.csv")
    p.add_argument("--intervals", type=_floats, default=DEFAULT_INTERVALS,
                   help="mean generation intervals in seconds (default 1,2,5,10)")
    p.add_argument("--intervals-normal", type=_floats, default=None,
                   help="separate normal-traffic intervals (default: same as --intervals)")
    p.add_argument("--protocols", type=_protocols, default=PROTOCOLS,
                   help="comma-separated protocols or 'all'")
    p.add_argument("--point", action="store_true",
                   help="only the protocol and intervals named in the config")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("plotdata", help="write per-series TSV files from a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plotdata)

    p = sub.add_parser("trace", help="frame-level trace of a single run")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", action="store_true", help="frame trace (the default)")
    p.add_argument("--events", action="store_true", help="engine event trace")
    p.add_argument("--mac", action="store_true", help="MAC decision log")
    p.add_argument("--stop", type=int, default=None, help="override stop_delivered")
    p.add_argument("--out", default=None, help="write to a file instead of stdout")
    p.set_defaults(func=_cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
