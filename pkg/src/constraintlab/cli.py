"""The `lab` command line: run verification experiments, list the catalog,
and generate synthetic distributions.

Exit codes: 0 all checks passed, 1 at least one check failed, 2 usage or
configuration error. Config files are INI ([experiment] plus optional
[params] and [tolerances] sections); the LAB_OUTPUT_DIR environment variable
overrides the configured output directory.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from .core import FiniteDistribution
from .experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    experiment_catalog,
    run_experiment,
)
from .synthgen import make_finite, make_gaussian_features, make_proof_construction

__all__ = ["main", "load_experiment_config"]

OUTPUT_DIR_ENV = "LAB_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


def _read_ini(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error in {path!r}: {exc}") from exc
    return parser


def load_experiment_config(path: str) -> ExperimentConfig:
    parser = _read_ini(path)
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    section = parser["experiment"]
    experiment_id = section.get("id")
    if not experiment_id:
        raise ConfigError(f"{path}: [experiment] needs an 'id' key")
    if experiment_id not in EXPERIMENTS:
        known = ", ".join(sorted(EXPERIMENTS))
        raise ConfigError(f"{path}: unknown experiment id {experiment_id!r} (known: {known})")
    try:
        seed = section.getint("seed", fallback=0)
    except ValueError as exc:
        raise ConfigError(f"{path}: [experiment] seed must be an integer: {exc}") from exc
    output_dir = section.get("output_dir", fallback="lab-output")
    params = dict(parser["params"]) if parser.has_section("params") else {}
    tolerances = {}
    if parser.has_section("tolerances"):
        for key, raw in parser["tolerances"].items():
            try:
                tolerances[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{path}: [tolerances] {key} must be a number, got {raw!r}"
                ) from exc
    return ExperimentConfig(experiment_id, seed, output_dir, params, tolerances)


def _cmd_run(args) -> int:
    try:
        cfg = load_experiment_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outdir = os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    try:
        report = run_experiment(cfg)
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    with open(os.path.join(outdir, "report.csv"), "w") as handle:
        handle.write(report.to_csv_text())
    with open(os.path.join(outdir, "summary.txt"), "w") as handle:
        handle.write(report.summary_text())
    if report.figures:
        from .figures import render_all  # deferred: pulls in matplotlib

        render_all(report.figures, outdir)
    print(report.summary_text(), end="")
    if report.all_pass:
        return 0
    failing = [r for r in report.records if not r.passed]
    print(f"\n{len(failing)} failing record(s):", file=sys.stderr)
    for r in failing:
        print(f"  {r.record_id}: {r.tag} (value={r.value!r}, bound={r.bound!r})",
              file=sys.stderr)
    return 1


def _cmd_list(_args) -> int:
    print(experiment_catalog(), end="")
    return 0


def _cmd_gen(args) -> int:
    try:
        dist = _generate_from_spec(args.synthspec)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    with open(args.output, "w") as handle:
        handle.write(dist.to_text())
    warning = dist.info.get("warning")
    if warning:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {dist.num_points} points to {args.output}")
    return 0


def _generate_from_spec(path: str) -> FiniteDistribution:
    parser = _read_ini(path)
    if not parser.has_section("distribution"):
        raise ConfigError(f"{path}: missing [distribution] section")
    sec = parser["distribution"]
    kind = sec.get("kind", "finite")
    seed = sec.getint("seed", fallback=0)
    if kind == "finite":
        return make_finite(
            num_labels=sec.getint("num_labels", fallback=4),
            num_points=sec.getint("num_points", fallback=20),
            target_noise_rate=sec.getfloat("noise_rate", fallback=0.0),
            seed=seed,
            uniform_weights=sec.getboolean("uniform_weights", fallback=True),
            feature_dim=sec.getint("feature_dim", fallback=0),
        )
    if kind == "gaussian":
        dim = sec.getint("dim", fallback=3)
        mean = np.full(dim, sec.getfloat("mean", fallback=0.0))
        dist, _ = make_gaussian_features(
            num_labels=sec.getint("num_labels", fallback=4),
            dim=dim,
            separation=sec.getfloat("separation", fallback=5.0),
            mean=mean,
            sigma2=sec.getfloat("sigma2", fallback=0.1),
            m=sec.getint("num_points", fallback=100),
            seed=seed,
        )
        return dist
    if kind.startswith("proof:"):
        name = kind.split(":", 1)[1]
        params = {k: float(v) for k, v in sec.items()
                  if k not in ("kind", "seed")}
        built = make_proof_construction(name, **params)
        return built.dist
    raise ConfigError(f"{path}: unknown distribution kind {kind!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lab",
        description=(
            "Run numerical verification experiments for label-constrained "
            "classification. Reports are written as report.csv "
            "(columns: record,tag,value,bound,tolerance,passed), summary.txt, "
            "and PNG figures in the output directory."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from an INI config")
    run_p.add_argument("config", help="path to the experiment config file")
    run_p.set_defaults(fn=_cmd_run)

    list_p = sub.add_parser("list", help="list the experiment catalog")
    list_p.set_defaults(fn=_cmd_list)

    gen_p = sub.add_parser("gen", help="generate a synthetic distribution file")
    gen_p.add_argument("synthspec", help="INI file with a [distribution] section")
    gen_p.add_argument("-o", "--output", required=True, help="output table path")
    gen_p.set_defaults(fn=_cmd_gen)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
