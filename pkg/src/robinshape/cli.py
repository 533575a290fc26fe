"""Command-line interface.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
3 sampler step cap reached without convergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .fem import SolverError
from .harness import ConfigError, ExperimentConfig, SyntheticDataset


def _load_config(path: str | None, example: int | None = None) -> ExperimentConfig:
    if path is not None:
        return ExperimentConfig.from_json_file(path)
    cfg = ExperimentConfig()
    if example is not None:
        cfg.truth_profile = f"example{example}"
        cfg.output_dir = f"out/example{example}"
    return cfg


def _dataset_paths(config: ExperimentConfig):
    return (os.path.join(config.output_dir, "dataset.json"),
            os.path.join(config.output_dir, "dataset.csv"))


def cmd_generate_data(args) -> int:
    config = _load_config(args.config)
    dataset = harness.generate_data(config)
    json_path, csv_path = _dataset_paths(config)
    dataset.to_files(json_path, csv_path)
    harness.atomic_write(os.path.join(config.output_dir, "config.json"), config.to_json())
    print(f"wrote {json_path} (delta_e={dataset.delta_e:.6g})")
    return 0


def cmd_map(args) -> int:
    config = _load_config(args.config)
    dataset = SyntheticDataset.from_files(_dataset_paths(config)[0])
    result = harness.run_map(config, dataset)
    print(f"Gauss-Newton: {result.report.reason} after {result.report.n_iters} iterations")
    return 0 if result.report.converged else 2


def cmd_sample(args) -> int:
    config = _load_config(args.config)
    dataset = SyntheticDataset.from_files(_dataset_paths(config)[0])
    map_result = harness.run_map(config, dataset)
    mc = harness.run_mcmc(config, dataset, map_result)
    print(f"recorded {mc.chain.n_recorded} steps, acceptance "
          f"{mc.chain.acceptance_rate:.3f}, converged={mc.chain.converged}")
    return 0 if mc.chain.converged else 3


def cmd_diagnose(args) -> int:
    result = harness.diagnose(args.chains)
    print(json.dumps(result, indent=2))
    return 0


def cmd_reproduce_example(args) -> int:
    config = _load_config(args.config, example=args.example)
    dataset = harness.generate_data(config)
    json_path, csv_path = _dataset_paths(config)
    dataset.to_files(json_path, csv_path)
    harness.atomic_write(os.path.join(config.output_dir, "config.json"), config.to_json())
    map_result = harness.run_map(config, dataset)
    print(f"Gauss-Newton: {map_result.report.reason} after {map_result.report.n_iters} iterations")
    mc = harness.run_mcmc(config, dataset, map_result)
    print(f"MCMC: recorded {mc.chain.n_recorded} steps, acceptance "
          f"{mc.chain.acceptance_rate:.3f}, converged={mc.chain.converged}")
    if not map_result.report.converged:
        return 2
    return 0 if mc.chain.converged else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robinshape",
                                     description="Joint Robin-coefficient and "
                                                 "boundary-shape estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="synthesize noisy boundary data")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("map", help="MAP estimate and Laplace approximation")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("sample", help="full posterior sampling with MALA")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="convergence diagnostics from chain files")
    p.add_argument("chains", nargs="+")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("reproduce-example", help="full pipeline for one example")
    p.add_argument("example", type=int, choices=(1, 2, 3))
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_reproduce_example)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
