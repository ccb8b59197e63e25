"""Command line interface.

Subcommands: ``simulate`` (synthetic spec -> dataset directory), ``estimate``
(trial CSV -> covariance CSV), ``bench`` (experiment config -> results CSV),
``report`` (results CSV -> aggregated table). Exit code 0 on full success,
1 when any benchmark cell failed, 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .benchmark import PIPELINES, ExperimentConfig, PipelineOptions, run_benchmark
from .covariance import em_covariance, scm
from .dataset_io import read_results, read_trial_csv, write_dataset, write_results
from .errors import MissCovError
from .simulation import (
    PRESETS,
    SCENARIO_KINDS,
    default_scenario,
    make_synthetic_dataset,
    preset,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misscov",
        description="Covariance estimation under missing data, with benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    p_sim.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p_sim.add_argument("--seed", required=True, type=int)
    p_sim.add_argument("--out", required=True, help="output dataset directory")
    p_sim.add_argument("--scenario", choices=SCENARIO_KINDS, help="optional scenario to inject")
    p_sim.add_argument("--ratio", type=float, default=0.0, help="affected-trial ratio for --scenario")
    p_sim.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p_est = sub.add_parser("estimate", help="estimate a covariance matrix from one trial CSV")
    p_est.add_argument("--trial", required=True, help="trial CSV (NaN marks missing entries)")
    p_est.add_argument("--method", required=True, choices=("scm", "em"))
    p_est.add_argument("--tol", type=float, default=1e-6)
    p_est.add_argument("--max-iter", type=int, default=100)
    p_est.add_argument("--out", help="output CSV (default: stdout)")

    p_bench = sub.add_parser("bench", help="run a benchmark sweep")
    p_bench.add_argument("--config", help="experiment config JSON")
    p_bench.add_argument("--seed", type=int, help="master seed (mandatory here or in the config)")
    p_bench.add_argument("--preset", choices=sorted(PRESETS))
    p_bench.add_argument("--dataset", help="dataset directory (complete trials)")
    p_bench.add_argument("--scenario", choices=SCENARIO_KINDS)
    p_bench.add_argument("--pipelines", help=f"comma-separated subset of {','.join(PIPELINES)}")
    p_bench.add_argument("--ratios", help="comma-separated fractions in [0,1]")
    p_bench.add_argument("--folds", type=int)
    p_bench.add_argument("--out", help="results CSV path")
    p_bench.add_argument(
        "--timings",
        action="store_true",
        help="record wall times in the results file (breaks byte-reproducibility)",
    )

    p_rep = sub.add_parser("report", help="aggregate a results CSV")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--out", help="write the aggregated CSV here instead of stdout")
    return parser


def _cmd_simulate(args) -> int:
    spec = preset(args.preset)
    scenario = None
    if args.scenario:
        scenario = default_scenario(
            args.scenario,
            p=spec.p,
            n=spec.n,
            sampling_rate_hz=spec.sampling_rate_hz,
            ratio=args.ratio,
            seed=args.seed,
        )
    dataset = make_synthetic_dataset(spec, seed=args.seed, scenario=scenario)
    out = write_dataset(dataset, args.out, overwrite=args.force)
    print(out)
    return 0


def _write_matrix(values: np.ndarray, out: str | None) -> None:
    lines = [",".join(repr(float(x)) for x in row) for row in values]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        print(out)
    else:
        sys.stdout.write(text)


def _cmd_estimate(args) -> int:
    trial = read_trial_csv(args.trial)
    if args.method == "scm":
        sigma = scm(trial)
    else:
        result = em_covariance(trial, tol=args.tol, max_iter=args.max_iter)
        if not result.converged:
            print(
                f"warning: EM stopped at max_iter={args.max_iter} "
                f"(last delta {result.delta_history[-1]:.3e})",
                file=sys.stderr,
            )
        sigma = result.sigma
    _write_matrix(sigma.values, args.out)
    return 0


def _bench_config(args) -> ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "preset": args.preset,
        "dataset_path": args.dataset,
        "scenario_kind": args.scenario,
        "pipelines": tuple(args.pipelines.split(",")) if args.pipelines else None,
        "ratios": tuple(float(r) for r in args.ratios.split(",")) if args.ratios else None,
        "folds": args.folds,
        "output": args.out,
        "include_timings": True if args.timings else None,
    }
    if args.config:
        return ExperimentConfig.from_json(args.config, **overrides)
    if args.seed is None:
        raise MissCovError("bench requires --seed (or a config file providing one)")
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    if args.dataset is not None:
        kwargs.setdefault("preset", None)
    return ExperimentConfig(options=PipelineOptions(), **kwargs)


def _cmd_bench(args) -> int:
    config = _bench_config(args)
    table = run_benchmark(config)
    for cell in table.aggregate():
        print(
            f"{cell.scenario} {cell.pipeline} ratio={cell.missing_ratio:g} "
            f"accuracy={cell.mean_accuracy:.4f} +/- {cell.std_accuracy:.4f} "
            f"({cell.n_folds} folds)",
            file=sys.stderr,
        )
    for scenario, pipeline, ratio, fold, error in table.errors:
        print(f"FAILED {scenario}/{pipeline}/ratio={ratio:g}/fold={fold}: {error}", file=sys.stderr)
    if config.output:
        print(config.output)
    return 1 if table.n_failed else 0


def _cmd_report(args) -> int:
    table = read_results(args.results)
    lines = ["scenario,pipeline,missing_ratio,n_folds,mean_accuracy,std_accuracy"]
    for cell in table.aggregate():
        lines.append(
            f"{cell.scenario},{cell.pipeline},{repr(cell.missing_ratio)},{cell.n_folds},"
            f"{repr(cell.mean_accuracy)},{repr(cell.std_accuracy)}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MissCovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
