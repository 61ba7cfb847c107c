"""Command-line entry point: ``psdmix simulate|run|summarize|plot``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 input/output error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, NumericalFailure, ParameterError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("psdmix")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psdmix", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="write a synthetic series with its truth")
    s.add_argument("scenario", choices=("d1", "d2", "event"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("run", help="fit a configured run")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--csv-only", action="store_true", help="skip plots")

    m = sub.add_parser("summarize", help="summarize a directory of trace_t*.csv files")
    m.add_argument("--traces", type=Path, required=True)
    m.add_argument("--out", type=Path, help="summary CSV (default: TRACES/summary.csv)")

    p = sub.add_parser("plot", help="draw SVG figures from a summary CSV")
    p.add_argument("--summary", type=Path, required=True)
    p.add_argument("--truth", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: next to summary)")
    return ap


def _simulate(args):
    from .simulate import SCENARIOS, write_simulation

    series, truth = SCENARIOS[args.scenario](args.seed)
    for path in write_simulation(series, truth, args.out):
        print(path)


def _run(args):
    from .pipeline import RunConfig, run_pipeline

    cfg = RunConfig.from_file(args.config)
    arts = run_pipeline(cfg, csv_only=args.csv_only)
    print(arts["summary"])


def _summarize(args):
    from .pipeline import load_traces
    from .summary import summarize, write_summary

    traces = load_traces(args.traces)
    out = args.out or args.traces / "summary.csv"
    print(write_summary(summarize(traces), out))


def _plot(args):
    from .plots import emit_plots
    from .simulate import read_truth
    from .summary import read_summary

    summary = read_summary(args.summary)
    truth = read_truth(args.truth) if args.truth else None
    out = args.out or args.summary.parent / "plots"
    for path in emit_plots(summary, out, truth):
        print(path)


def _exit_code(exc) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (ConfigError, ParameterError)):
        return EXIT_CONFIG
    if isinstance(cause, NumericalFailure):
        return EXIT_NUMERIC
    if isinstance(cause, OSError):
        return EXIT_IO
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": _simulate, "run": _run, "summarize": _summarize, "plot": _plot}
    try:
        handler[args.cmd](args)
    except (ConfigError, ParameterError, NumericalFailure, StageError, OSError) as exc:
        print(f"psdmix: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
