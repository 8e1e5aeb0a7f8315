"""Command-line interface: run simulations, compute overlap, browse history, serve MCP."""

import argparse
import logging
import sys
from pathlib import Path

from . import metrics, results_db
from .config import PRESETS, ConfigError, load_config, settings
from .scenario import SCHEMES, run_batch
from .sim_engine import SimulationFault

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAULT = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handoff-sim",
        description="Dual-radio make-before-break handoff simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
EXAMPLES:
  # Ten indoor-analog runs (seeds 0..9), CSV report + plot series in ./out
  %(prog)s run --config fig1 --runs 10 --out out

  # Outdoor analog with lossy broadcasts, JSON report and per-run message traces
  %(prog)s run --config fig1_outdoor --runs 10 --format json --trace --out out

  # Single-radio break-before-make baseline on the same seeds
  %(prog)s run --config fig1 --runs 10 --scheme baseline --out out-baseline

  # Your own scenario file at highway speed, four worker processes, saved to history
  %(prog)s run --config my_scenario.json --speed-kmph 100 --runs 20 --jobs 4 --store

  # Coverage overlap needed at 100 km/h for an 80 ms handoff
  %(prog)s overlap --speed-kmph 100 --latency-ms 80

  # Stored runs, newest first
  %(prog)s history --limit 10

  # Run the MCP server (stdio)
  %(prog)s serve

NOTES:
  - Exit codes: 0 ok, 1 configuration error, 2 simulation fault.
  - Run history is stored at $HANDOFF_SIM_DB, else
    $XDG_CONFIG_HOME/dual-radio-handoff/runs.sqlite3.
  - Log level: -v (INFO), -vv (DEBUG), else $HANDOFF_SIM_LOG_LEVEL (default WARNING).
        """,
    )
    sub = parser.add_subparsers(dest="command", help="Available commands")

    p_run = sub.add_parser("run", help="Run one or more simulations")
    p_run.add_argument(
        "--config", default="fig1", help=f"Preset ({', '.join(PRESETS)}) or scenario JSON path"
    )
    p_run.add_argument("--seed", type=int, help="Base seed (default: the config's seed)")
    p_run.add_argument("--runs", type=int, default=1, help="Number of runs, seeds seed..seed+runs-1")
    p_run.add_argument("--scheme", choices=SCHEMES, default="dual", help="Handoff scheme")
    p_run.add_argument("--speed-kmph", dest="speed_kmph", type=float, help="Override vehicle speed")
    p_run.add_argument("--out", default=".", help="Output directory (default: current)")
    p_run.add_argument("--format", choices=["csv", "json"], default="csv", help="Report format")
    p_run.add_argument("--trace", action="store_true", help="Write trace-<run>.log per run")
    p_run.add_argument("--jobs", type=int, default=1, help="Worker processes (default 1)")
    p_run.add_argument("--store", action="store_true", help="Save the batch to the run history")
    p_run.add_argument("-v", "--verbose", action="count", default=0, help="More logging")

    p_ov = sub.add_parser("overlap", help="AP coverage overlap needed for a handoff")
    p_ov.add_argument("--speed-kmph", dest="speed_kmph", type=float, required=True)
    p_ov.add_argument("--latency-ms", dest="latency_ms", type=float, required=True)

    p_hist = sub.add_parser("history", help="List stored runs")
    p_hist.add_argument("--limit", type=int, default=20, help="Max rows (default 20)")
    p_hist.add_argument("--delete", metavar="BATCH", help="Delete a stored batch instead")

    sub.add_parser("presets", help="List bundled scenario presets")
    sub.add_parser("serve", help="Run the MCP server (stdio)")
    return parser


def _configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, settings()["log_level"], logging.WARNING)
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def _cmd_run(args: argparse.Namespace) -> int:
    if args.seed is not None and args.seed < 0:
        raise ConfigError("seed must be >= 0", field="seed")
    if args.jobs < 1:
        raise ConfigError("jobs must be >= 1", field="jobs")
    cfg = load_config(args.config)
    if args.speed_kmph is not None:
        cfg = cfg.with_overrides(mobility={"speed_kmph": args.speed_kmph})

    reports = run_batch(cfg, runs=args.runs, scheme=args.scheme, seed=args.seed, jobs=args.jobs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.emit_report(reports, args.format, out / f"report.{args.format}")
    metrics.emit_series(reports, out)
    if args.trace:
        for r in reports:
            (out / f"trace-{r.run_id}.log").write_text(
                "".join(line + "\n" for line in r.trace), encoding="utf-8"
            )

    summary = metrics.summarize(reports)
    latency = "n/a" if summary.mean_latency_ms is None else f"{summary.mean_latency_ms:.3f} ms"
    per_10k = "n/a" if summary.mean_per_10k is None else f"{summary.mean_per_10k:.3f}"
    print(
        f"{summary.runs} run(s), {args.scheme}: {summary.handoffs} handoffs, "
        f"mean latency {latency}, lost {summary.lost}/{summary.sent} ({per_10k} per 10k)"
    )
    if args.store:
        print(f"stored as batch {results_db.save_batch(reports, cfg.name)}")
    return EXIT_OK


def _cmd_history(args: argparse.Namespace) -> int:
    if args.delete:
        removed = results_db.delete_batch(args.delete)
        print(f"Batch '{args.delete}' deleted." if removed else f"No batch '{args.delete}'.")
        return EXIT_OK
    rows = results_db.list_runs(args.limit)
    if not rows:
        print("No stored runs.")
        return EXIT_OK
    for row in rows:
        print(
            f"  {row['batch']} run {row['run']} [{row['config_name']}/{row['scheme']}] "
            f"seed={row['seed']} handoffs={row['handoffs']} "
            f"mean={row['mean_latency_ms']} ms lost={row['lost']}/{row['sent']}"
        )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _configure_logging(getattr(args, "verbose", 0))

    try:
        if args.command == "run":
            return _cmd_run(args)

        if args.command == "overlap":
            value = metrics.overlap_required(args.speed_kmph, args.latency_ms)
            print(f"{value:.3f}")
            return EXIT_OK

        if args.command == "history":
            return _cmd_history(args)

        if args.command == "presets":
            for name in PRESETS:
                cfg = load_config(name)
                print(f"  {name}: {cfg.name} ({len(cfg.topology.edge_aps())} edge APs)")
            return EXIT_OK

        if args.command == "serve":
            from .server import run as run_server

            run_server()
            return EXIT_OK

        parser.print_help()
        return EXIT_OK
    except (ConfigError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationFault as e:
        print(f"Simulation fault: {e}", file=sys.stderr)
        return EXIT_FAULT
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
