"""Command line front end.

Subcommands: run (one experiment), sweep (load / horizon / slice-count
grids), plot (SVG line charts from sweep CSVs), verify (log replay),
validate-config.  Exit codes: 0 success, 1 config or input error,
2 runtime invariant violation, 3 verification mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import domain, engine, verify
from .domain import ConfigError
from .engine import EngineError

DEFAULT_OUT = "slicetwin-out"
OUT_ENV_VAR = "SLICETWIN_OUT"


def _resolve_out(value: str | None) -> str:
    return value or os.environ.get(OUT_ENV_VAR) or DEFAULT_OUT


def _load_config(args) -> domain.ScenarioConfig:
    if getattr(args, "config", None):
        config = domain.load(args.config)
    else:
        config = domain.default_config()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if overrides:
        config = domain.apply_settings(config, overrides)
    return domain.require_valid(config)


def _controllers(args) -> list[str]:
    if not getattr(args, "controllers", None):
        return list(engine.CONTROLLERS)
    names = [c.strip() for c in args.controllers.split(",") if c.strip()]
    for name in names:
        if name not in engine.CONTROLLERS:
            raise ConfigError(f"unknown controller {name!r}")
    return names


def cmd_run(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_out(args.out)
    controllers = _controllers(args)
    report = engine.run_experiment(config, controllers, out_dir=out_dir, jobs=args.jobs)
    for ctrl in controllers:
        line = ", ".join(f"{metric}={report.mean(ctrl, 'all', metric):.4g}"
                         for metric in engine.METRICS)
        print(f"{ctrl}: {line}")
    print(f"outputs written to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_out(args.out)
    os.makedirs(out_dir, exist_ok=True)
    controllers = _controllers(args)
    rows = engine.run_sweep(config, args.variable, controllers, jobs=args.jobs)
    path = os.path.join(out_dir, f"sweep_{args.variable}.csv")
    engine.write_sweep_csv(path, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "slicetwin"
    import matplotlib.pyplot as plt

    rows = engine.read_sweep_csv(args.sweep_csv)
    out_dir = _resolve_out(args.out)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.sweep_csv))[0]
    metrics = sorted({r["metric"] for r in rows})
    controllers = sorted({r["controller"] for r in rows})
    written = []
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for ctrl in controllers:
            pts = sorted((r["x_value"], r["mean"], r["std"]) for r in rows
                         if r["metric"] == metric and r["controller"] == ctrl)
            if not pts:
                continue
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            es = [p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=ctrl)
        ax.set_xlabel(stem.replace("sweep_", ""))
        ax.set_ylabel(metric)
        ax.legend()
        ax.grid(True, alpha=0.3)
        path = os.path.join(out_dir, f"{stem}_{metric}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    if not os.path.isdir(args.dir):
        print(f"not a directory: {args.dir}", file=sys.stderr)
        return 1
    problems = verify.verify_experiment(args.dir)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        print(f"verification FAILED with {len(problems)} mismatch(es)", file=sys.stderr)
        return 3
    print("verification passed")
    return 0


def cmd_validate_config(args) -> int:
    config = _load_config(args)
    print(f"config ok ({config.num_slices} slices, {config.horizon_slots} slots)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicetwin",
                                     description="Slice orchestration simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_out=True):
        p.add_argument("--config", help="scenario file (defaults built in)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable, dotted paths)")
        if with_out:
            p.add_argument("--out", help=f"output directory (or ${OUT_ENV_VAR})")

    p_run = sub.add_parser("run", help="run one experiment, write traces and report")
    add_common(p_run)
    p_run.add_argument("--controllers", help="comma-separated subset of dtaas,rso,cdrl")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel repetitions")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid experiment")
    p_sweep.add_argument("--variable", required=True, choices=engine.SWEEP_VARIABLES)
    add_common(p_sweep)
    p_sweep.add_argument("--controllers", help="comma-separated subset of dtaas,rso,cdrl")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render SVG charts from a sweep CSV")
    p_plot.add_argument("sweep_csv")
    p_plot.add_argument("--out", help=f"output directory (or ${OUT_ENV_VAR})")
    p_plot.set_defaults(func=cmd_plot)

    p_verify = sub.add_parser("verify", help="replay logs and check them against reports")
    p_verify.add_argument("dir")
    p_verify.set_defaults(func=cmd_verify)

    p_val = sub.add_parser("validate-config", help="check a scenario file")
    add_common(p_val, with_out=False)
    p_val.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"runtime invariant violation: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
