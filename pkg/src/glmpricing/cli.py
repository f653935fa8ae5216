"""Command-line driver: ``run``, ``audit`` and ``plot-data``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, bundled_configs, load_config
from .harness import (coverage_audit, potential_audit, run_experiment, run_trials,
                      write_aggregate, write_ledger)


class DataError(RuntimeError):
    pass


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg, jobs=args.jobs)
    for tr in result.trials:
        write_ledger(tr, out / f"trial_{tr.trial:03d}.csv")
    write_aggregate(result, out / "aggregate.json")
    final = result.mean_cum_regret[-1]
    print(f"{cfg.name}: policy={cfg.policy} trials={cfg.trials} T={cfg.T} "
          f"final mean cumulative regret = {final:.6g} (stderr {result.stderr[-1]:.3g})")
    return 0


def cmd_audit(args) -> int:
    cfg = _load(args)
    out = Path(args.out) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "coverage":
        fraction, reports = coverage_audit(cfg, radius_scale=args.radius_scale, jobs=args.jobs)
        summary = {"kind": "coverage", "fraction": fraction, "trials": reports,
                   "radius_scale": args.radius_scale, "config_echo": cfg.to_dict()}
        print(f"{cfg.name}: uniform-in-t coverage in {fraction:.3f} of {cfg.trials} trials")
    else:
        trials = run_trials(cfg, jobs=args.jobs)
        reports = [potential_audit(tr, cfg.lam) for tr in trials]
        n_ok = sum(r["ok"] for r in reports)
        summary = {"kind": "potential", "all_ok": n_ok == len(reports), "trials": reports,
                   "config_echo": cfg.to_dict()}
        print(f"{cfg.name}: elliptical potential bound holds in {n_ok} of {len(reports)} trials")
    (out / f"audit_{args.kind}.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return 0


def _read_curve(path: Path):
    """(t, mean_cum_regret) pairs from an aggregate JSON or a ledger CSV."""
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
            rows = [(int(r["t"]), r["mean_cum_regret"]) for r in data["per_t"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: not an aggregate file ({exc})") from None
    else:
        sums, counts = {}, {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty ledger")
            try:
                ti, ci = header.index("t"), header.index("cum_regret")
            except ValueError:
                raise DataError(f"{path}: row 1: missing 't' or 'cum_regret' column") from None
            for rowno, row in enumerate(reader, start=2):
                try:
                    t, c = int(row[ti]), float(row[ci])
                except (ValueError, IndexError):
                    raise DataError(f"{path}: row {rowno}: cannot parse") from None
                sums[t] = sums.get(t, 0.0) + c
                counts[t] = counts.get(t, 0) + 1
        rows = [(t, sums[t] / counts[t]) for t in sorted(sums)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def cmd_plot_data(args) -> int:
    rows = _read_curve(Path(args.ledger))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_cum_regret"])
        for t, v in rows:
            w.writerow([t, repr(float(v))])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glmpricing", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="config file, or bundled name: " + ", ".join(bundled_configs()))
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--trials", type=int, help="override experiment.trials")
        p.add_argument("--seed", type=int, help="override experiment.seed")

    run = sub.add_parser("run", help="run an experiment and write ledgers + aggregate")
    add_common(run)
    run.set_defaults(func=cmd_run)

    audit = sub.add_parser("audit", help="coverage or elliptical-potential audit")
    add_common(audit)
    audit.add_argument("--kind", choices=("coverage", "potential"), required=True)
    audit.add_argument("--radius-scale", type=float, default=1.0,
                       help="multiply the confidence radius (coverage only)")
    audit.set_defaults(func=cmd_audit)

    plot = sub.add_parser("plot-data", help="extract (t, mean_cum_regret) from an aggregate or ledger")
    plot.add_argument("ledger")
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
