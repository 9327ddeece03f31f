"""Command-line front end.

Subcommands
-----------
simulate   write one simulated log-price panel as CSV
test       one-shot multiple test on a simulated panel, scored against truth
mc-fwer    Monte Carlo family-wise error table over the scenario grid
mc-power   Monte Carlo average-power table over the scenario grid
analyze    residual-sparsity analysis of a real price panel
selftest   fast invariant checks, no Monte Carlo tables

Settings resolve as flag > config file > default; every run echoes the
resolved configuration next to its outputs.  Exit codes: 0 success, 1 usage
error, 2 runtime error.  HICOV_SEED provides the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio, harness
from .config import ConfigError, apply_overrides, dump_flat_config, load_flat_config
from .estimators import IncrementMatrix, compute_factor_stats
from .multitest import (
    HolmProvider,
    RomanoWolfProvider,
    group_statistics,
    pairwise_partition,
    stepdown,
    stepdown_records,
)
from .bootstrap import bootstrap_group_maxima
from .simulate import (
    make_scenario,
    scenario_from_config,
    scenario_to_config,
    simulate_paths,
    write_price_csv,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _default_seed():
    return int(os.environ.get("HICOV_SEED", "0"))


def _load_config(args):
    cfg = load_flat_config(args.config) if getattr(args, "config", None) else {}
    return apply_overrides(cfg, getattr(args, "set", None))


def _scenario_from_args(args):
    cfg = _load_config(args)
    for flag, key in (
        ("n", "n"),
        ("d", "d"),
        ("num_blocks", "num_blocks"),
        ("rho_gamma", "rho_gamma"),
        ("fine_factor", "fine_factor"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    cfg.setdefault("seed", _default_seed())
    return scenario_from_config(cfg)


def _echo_config(mapping, path):
    dump_flat_config({k: mapping[k] for k in mapping}, path)


def _add_scenario_flags(p):
    p.add_argument("--n", type=int, help="observations per path")
    p.add_argument("--d", type=int, help="total assets including the factor")
    p.add_argument("--num-blocks", dest="num_blocks", type=int,
                   help="residual covariance blocks")
    p.add_argument("--rho-gamma", dest="rho_gamma", type=float,
                   help="within-block residual correlation")
    p.add_argument("--fine-factor", dest="fine_factor", type=int,
                   help="Euler sub-steps per observation")


def _add_common(p, out_required=True):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override (repeatable)")
    p.add_argument("--seed", type=int, help="RNG seed (default: HICOV_SEED or 0)")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser():
    parser = _Parser(prog="hicov", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one simulated panel as CSV")
    _add_scenario_flags(p)
    p.add_argument("--config", help="flat key=value scenario file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--truth-out", help="optional JSON path for the simulation truth")

    p = sub.add_parser("test", help="one-shot multiple test on a simulated panel")
    _add_scenario_flags(p)
    _add_common(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B", type=int, default=199, help="bootstrap resamples")
    p.add_argument("--method", choices=("holm", "rw", "both"), default="both")

    for name, help_text in (
        ("mc-fwer", "Monte Carlo family-wise error table"),
        ("mc-power", "Monte Carlo average-power table"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--paper-scale", action="store_true",
                       help="full-scale design (expect hours of runtime)")

    p = sub.add_parser("analyze", help="residual-sparsity analysis of a price panel")
    p.add_argument("--prices", required=True, help="log-price CSV")
    p.add_argument("--factor", help="factor column name")
    p.add_argument("--no-factor", action="store_true",
                   help="test the covariance entries directly")
    p.add_argument("--sectors", help="asset,sector CSV for the partitioned test")
    p.add_argument("--session-col", dest="session_col",
                   help="session id column; overnight increments are dropped")
    p.add_argument("--keep-overnight", action="store_true",
                   help="keep increments across session boundaries")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B", type=int, default=999)
    p.add_argument("--method", choices=("holm", "rw", "both"), default="rw")
    p.add_argument("--seed", type=int)
    p.add_argument("--formats", default="csv,json,png",
                   help="comma-separated subset of csv,json,png")
    p.add_argument("--out", required=True)

    sub.add_parser("selftest", help="fast invariant checks")
    return parser


def _methods(choice):
    return ("holm", "rw") if choice == "both" else (choice,)


def cmd_simulate(args):
    scenario = _scenario_from_args(args)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((scenario.seed, 0))
    ))
    grid = simulate_paths(scenario, rng)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_price_csv(grid, out)
    _echo_config(scenario_to_config(scenario), out.with_suffix(out.suffix + ".config.txt"))
    if args.truth_out:
        truth = grid.truth
        with open(args.truth_out, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "integrated_variance": truth.integrated_variance,
                    "tau": truth.tau.tolist(),
                    "null_truth": truth.null_truth.tolist(),
                },
                fh,
                indent=2,
            )
            fh.write("\n")
    print(f"wrote {out} ({grid.d} assets, n={grid.n})")
    return 0


def cmd_test(args):
    scenario = _scenario_from_args(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence((scenario.seed, 0))
    ))
    grid = simulate_paths(scenario, rng)
    inc = IncrementMatrix.from_prices(grid.prices)
    stats = compute_factor_stats(inc)
    part = pairwise_partition(scenario.d_under)
    gstats = group_statistics(stats.t, part)
    pi, pj = part.pairs[:, 0], part.pairs[:, 1]
    nulls = grid.truth.null_truth[pi, pj]
    methods = _methods(args.method)
    records, summary = {}, {}
    for method in methods:
        if method == "holm":
            provider = HolmProvider(part)
        else:
            draws = bootstrap_group_maxima(
                inc, part, stats.vhat, args.B,
                np.random.SeedSequence((scenario.seed, 1)),
            )
            provider = RomanoWolfProvider(draws)
        res = stepdown(gstats, provider, args.alpha)
        records[method] = stepdown_records(res, part, gstats, stats.clamped)
        n_alt = int((~nulls).sum())
        summary[method] = {
            "rejected": int(res.n_rejected),
            "false_rejections": int(np.sum(res.rejected & nulls)),
            "true_nulls": int(nulls.sum()),
            "alternatives": n_alt,
            "power": (float(np.sum(res.rejected & ~nulls) / n_alt) if n_alt else None),
        }
    with open(outdir / "groups.json", "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cfg = scenario_to_config(scenario)
    cfg.update({"alpha": args.alpha, "B": args.B, "method": args.method})
    _echo_config(cfg, outdir / "resolved_config.txt")
    for method in methods:
        s = summary[method]
        power = "n/a" if s["power"] is None else f"{s['power']:.3f}"
        print(f"{method}: rejected {s['rejected']} groups "
              f"({s['false_rejections']} false), power={power}")
    return 0


def _run_table(args, metric):
    cfg = _load_config(args)
    base = harness.PAPER_SCALE if args.paper_scale else harness.DESK_DEFAULTS
    spec = harness.experiment_from_config(cfg, base=base)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    elif "seed" not in cfg:
        spec = replace(spec, seed=_default_seed())
    if args.jobs is not None:
        spec = replace(spec, jobs=args.jobs)
    if args.paper_scale:
        print("warning: paper-scale run requested; expect hours of runtime",
              file=sys.stderr)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _echo_config(harness.experiment_to_config(spec), outdir / "resolved_config.txt")
    csv_path = outdir / f"{metric}.csv"

    def flush(table):
        csv_path.write_text(
            table.to_csv("fwer" if metric == "fwer" else "avg_power"),
            encoding="utf-8",
        )

    table = harness.run_experiment(spec, on_cell_done=flush)
    flush(table)
    with open(outdir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(table.sidecar(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    try:
        from .figures import rate_curves

        series = {}
        for rho in spec.rho_gamma_grid:
            for method in spec.methods:
                key = "fwer" if metric == "fwer" else "avg_power"
                series[f"rho={rho:g} {method}"] = [
                    getattr(table.cell(n, rho, method), key) for n in spec.n_grid
                ]
        rate_curves(
            spec.n_grid, series,
            ylabel="FWER" if metric == "fwer" else "average power",
            path=outdir / f"{metric}.png",
            alpha=spec.alpha if metric == "fwer" else None,
        )
    except Exception as exc:  # noqa: BLE001 - figures are best-effort
        print(f"warning: figure rendering failed: {exc}", file=sys.stderr)
    print(f"wrote {csv_path}")
    return 0


def cmd_analyze(args):
    if args.no_factor and args.factor:
        raise _UsageError("--factor and --no-factor are mutually exclusive")
    if not args.no_factor and not args.factor:
        raise _UsageError("specify --factor NAME or --no-factor")
    panel = dataio.load_price_csv(
        args.prices,
        factor_col=None if args.no_factor else args.factor,
        session_col=args.session_col,
        drop_overnight=not args.keep_overnight,
    )
    sectors = dataio.load_sector_csv(args.sectors) if args.sectors else None
    seed = args.seed if args.seed is not None else _default_seed()
    report = dataio.analyze(
        panel,
        sectors=sectors,
        alpha=args.alpha,
        B=args.B,
        methods=_methods(args.method),
        seed=seed,
    )
    formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    written = dataio.write_report(report, args.out, formats=formats)
    _echo_config(
        {
            "prices": args.prices,
            "factor": args.factor or "",
            "no_factor": args.no_factor,
            "sectors": args.sectors or "",
            "session_col": args.session_col or "",
            "keep_overnight": args.keep_overnight,
            "alpha": args.alpha,
            "B": args.B,
            "method": args.method,
            "seed": seed,
            "formats": ",".join(formats),
        },
        Path(args.out) / "resolved_config.txt",
    )
    share = report.meta["share_rejected"]
    for method, value in share.items():
        print(f"{method}: {100.0 * value:.1f}% of pairs significant")
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_selftest(_args):
    from .selfcheck import run_selftest

    failures = run_selftest()
    if failures:
        print(f"{failures} check(s) failed")
        return 2
    print("all checks passed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "test":
            return cmd_test(args)
        if args.command == "mc-fwer":
            return _run_table(args, "fwer")
        if args.command == "mc-power":
            return _run_table(args, "power")
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "selftest":
            return cmd_selftest(args)
        raise RuntimeError(f"unhandled command {args.command!r}")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, dataio.DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - uniform runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
