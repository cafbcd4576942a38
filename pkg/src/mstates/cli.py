"""Command line interface: ``mstates <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from mstates import io
from mstates.empirical_copula import state_asymmetry
from mstates.kcopula import fit_N
from mstates.pipeline import PipelineConfig, PipelineError, emit_figure_grids, run_pipeline
from mstates.simulator import RegimeSchedule, Segment, SimulationError, simulate_market
from mstates.timeseries import compute_returns, local_normalize

log = logging.getLogger("mstates")


def _segment(text: str) -> Segment:
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("segment must be LENGTH:C:N or LENGTH:C:N:VOLATILITY")
    try:
        return Segment(int(parts[0]), float(parts[1]), float(parts[2]),
                       *(float(p) for p in parts[3:]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _pair(text: str):
    try:
        c, N = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected C,N") from None
    return c, N


def _add_config_flags(p):
    for f in fields(PipelineConfig):
        if f.name in ("input",):
            continue
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mstates", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="validate a price CSV and print diagnostics")
    p.add_argument("input")
    p.add_argument("--strict-missing", action="store_true")

    p = sub.add_parser("simulate", help="write a synthetic price panel and true labels")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--stocks", type=int, default=20)
    p.add_argument("--segment", type=_segment, action="append", required=True,
                   help="LENGTH:C:N[:VOLATILITY], repeatable, in time order")
    p.add_argument("--window-length", type=int, default=42)
    p.add_argument("--lead-in", type=int, default=13)
    p.add_argument("--out", required=True, help="price CSV path")
    p.add_argument("--labels", help="sidecar CSV with (window_index, regime_id)")

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("input", nargs="?")
    p.add_argument("--config", help="key = value file with a [pipeline] section")
    _add_config_flags(p)

    p = sub.add_parser("figure-grids", help="analytic K-copula grids for plotting")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--params", type=_pair, action="append", default=[], help="extra C,N pair")

    p = sub.add_parser("fit", help="fit N to one empirical grid CSV")
    p.add_argument("grid")
    p.add_argument("--c", type=float, required=True, help="average correlation")
    p.add_argument("--fit-min", type=float, default=1.0)
    p.add_argument("--fit-max", type=float, default=500.0)

    p = sub.add_parser("asymmetry", help="corner tail statistics of a whole price panel")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="per-pair tail CSV")
    p.add_argument("--local-n", type=int, default=None,
                   help="locally normalize with this window before ranking")
    p.add_argument("--bins", type=int, default=20)
    return parser


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_env()
    flags = {f.name: getattr(args, f.name) for f in fields(PipelineConfig) if f.name != "input"}
    cfg = cfg.updated(input=args.input, **flags)
    if not cfg.input:
        raise ValueError("no input file given (positional argument, config or MSTATES_INPUT)")
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "ingest-check":
            _, diag = io.read_prices(args.input, args.strict_missing)
            print(json.dumps(diag, indent=2, sort_keys=True))
        elif args.command == "simulate":
            schedule = RegimeSchedule(tuple(args.segment), args.stocks, args.seed)
            prices, _, window_labels = simulate_market(schedule, args.window_length, args.lead_in)
            io.write_prices(args.out, prices)
            if args.labels:
                io.write_rows(args.labels, ["window_index", "regime_id"],
                              [(i, int(r)) for i, r in enumerate(window_labels)])
        elif args.command == "run":
            report = run_pipeline(_resolve_config(args))
            print(json.dumps({"k": report["k"], "n_windows": report["n_windows"],
                              "branches": report["branches"]}, indent=2, sort_keys=True))
        elif args.command == "figure-grids":
            for path in emit_figure_grids(args.out, args.params, args.bins):
                print(path)
        elif args.command == "fit":
            res = fit_N(io.read_grid(args.grid), args.c, bounds=(args.fit_min, args.fit_max))
            print(json.dumps({"c": args.c, "N": res.N, "msd": res.msd,
                              "at_boundary": res.at_boundary}, indent=2))
        elif args.command == "asymmetry":
            prices, _ = io.read_prices(args.input)
            returns = compute_returns(prices)
            if args.local_n:
                returns = local_normalize(returns, args.local_n)
            asym = state_asymmetry(returns, args.bins)
            io.write_tails(args.out, asym, returns.tickers)
            print(json.dumps(asym.summary(), indent=2, sort_keys=True))
    except PipelineError as exc:
        print(f"mstates: error {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, SimulationError) as exc:
        print(f"mstates: error [{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
