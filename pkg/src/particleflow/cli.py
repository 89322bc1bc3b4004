"""Command-line entry point.

    particleflow run <spec.yaml> [-o DIR] [-v]
    particleflow validate <spec.yaml>
    particleflow plot <metrics-or-particles.csv> -o out.svg
    particleflow sweep <spec.yaml> --param sampler.plan_scale --values 0.1,1,10 [-o DIR]

Exit codes: 0 success, 1 spec validation error, 2 sampler divergence,
3 input/output failure.
"""

from __future__ import annotations

import argparse
import sys

import yaml

from .core import DivergenceError
from .experiment import (
    ConfigError,
    load_spec,
    read_metrics_csv,
    read_particles_csv,
    run_experiment,
    run_sweep,
    spec_to_dict,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="particleflow",
                                     description="particle-based sampling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment spec")
    p_run.add_argument("spec", help="YAML spec file")
    p_run.add_argument("-o", "--output", default=None, help="override the output directory")
    p_run.add_argument("-v", "--verbose", action="store_true", help="report per-seed progress")

    p_val = sub.add_parser("validate", help="check a spec and echo its normalised form")
    p_val.add_argument("spec", help="YAML spec file")

    p_plot = sub.add_parser("plot", help="render a metrics or particles CSV")
    p_plot.add_argument("records", help="metrics.csv or particles_*.csv produced by run")
    p_plot.add_argument("-o", "--output", required=True, help="output figure (.svg)")

    p_sweep = sub.add_parser("sweep", help="run a spec once per parameter value")
    p_sweep.add_argument("spec", help="YAML spec file")
    p_sweep.add_argument("--param", required=True, help="dotted key, e.g. sampler.plan_scale")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("-o", "--output", default=None, help="sweep output root")
    p_sweep.add_argument("-v", "--verbose", action="store_true")

    return parser


def _parse_values(text: str):
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        values.append(yaml.safe_load(token))
    if not values:
        raise ConfigError("--values produced an empty list")
    return values


def _cmd_run(args) -> int:
    spec = load_spec(args.spec)
    result = run_experiment(spec, out_dir=args.output, quiet=not args.verbose)
    print(f"wrote {result.out_dir}")
    if result.diverged:
        for run in result.runs:
            if run.status == "diverged":
                print(f"seed {run.seed} diverged after {run.completed_iterations} iterations: {run.error}",
                      file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_validate(args) -> int:
    spec = load_spec(args.spec)
    print(yaml.safe_dump(spec_to_dict(spec), sort_keys=False).rstrip())
    print(f"ok: {args.spec}", file=sys.stderr)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import render_curves, render_scatter

    with open(args.records) as fh:
        header = fh.readline().strip()
    if header == "iteration,metric,seed,value":
        render_curves(read_metrics_csv(args.records), args.output)
    elif header.startswith("iteration,particle,"):
        _, positions = read_particles_csv(args.records)
        render_scatter(positions, args.output)
    else:
        raise ConfigError(f"{args.records}: not a metrics or particles CSV (header {header!r})")
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = load_spec(args.spec)
    values = _parse_values(args.values)
    results = run_sweep(spec, args.param, values, out_root=args.output, quiet=not args.verbose)
    root = results[0].out_dir.parent if results else args.output
    print(f"wrote {root}")
    if any(result.diverged for result in results):
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "validate": _cmd_validate,
                "plot": _cmd_plot, "sweep": _cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
