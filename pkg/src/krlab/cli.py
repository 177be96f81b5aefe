"""Batch front end: ``krlab run <config> [--grid N] [--out DIR] [--jobs K]``
and ``krlab list``.

Configs are YAML with one table per section::

    experiment: e1-example
    seed: 2024
    out: results/e1
    jobs: 1
    params:
      n: 4096
      deltas: [1.0e-1, 1.0e-2]

Outputs per run: ``record.json``, one ``<table>.csv`` per sweep table, and
``verdict.txt`` (one inequality per line; byte-stable for a fixed config and
seed).  Exit status 0 iff every build-breaking check passed.  The CSV
columns are documented in docs/csv_schema.md.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .experiments import EXPERIMENTS, run_experiment


@dataclass
class RunConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    seed: int | None = None
    out: str = "results"
    jobs: int = 1

    _KEYS = {"experiment", "params", "seed", "out", "jobs"}

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ValueError(f"config parse error in {path}{where}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValueError(f"config {path} must be a mapping, got {type(raw).__name__}")
        unknown = set(raw) - cls._KEYS
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}; "
                             f"valid keys: {sorted(cls._KEYS)}")
        if "experiment" not in raw:
            raise ValueError("config is missing the required key 'experiment'")
        name = raw["experiment"]
        if name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {name!r}; valid names: "
                             + ", ".join(sorted(EXPERIMENTS)))
        params = raw.get("params") or {}
        if not isinstance(params, dict):
            raise ValueError("'params' must be a table of experiment parameters")
        defaults = EXPERIMENTS[name][1]
        bad = set(params) - set(defaults)
        if bad:
            raise ValueError(f"unknown parameter keys {sorted(bad)} for {name!r}; "
                             f"valid keys: {sorted(defaults)}")
        return cls(experiment=name, params=dict(params), seed=raw.get("seed"),
                   out=str(raw.get("out", "results")), jobs=int(raw.get("jobs", 1)))


def run(config: RunConfig, grid_override: int | None = None,
        out_override: str | None = None, jobs_override: int | None = None) -> int:
    params = dict(config.params)
    if config.seed is not None and "seed" in EXPERIMENTS[config.experiment][1]:
        params.setdefault("seed", config.seed)
    if grid_override is not None:
        for key in ("n", "n_grid", "apriori_n"):
            if key in EXPERIMENTS[config.experiment][1]:
                params[key] = grid_override
                break
    jobs = jobs_override if jobs_override is not None else config.jobs
    rec = run_experiment(config.experiment, params, jobs=jobs)
    out_dir = Path(out_override or config.out) / config.experiment
    rec.write(out_dir)
    sys.stdout.write(rec.verdict_text())
    sys.stdout.write(f"artifacts written to {out_dir}\n")
    return 0 if rec.ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="krlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a YAML config")
    p_run.add_argument("config", help="path to the YAML config file")
    p_run.add_argument("--grid", type=int, default=None, help="override the main grid size")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--jobs", type=int, default=None, help="worker pool size for sweeps")
    sub.add_parser("list", help="print the available experiment names")
    args = parser.parse_args(argv)

    if args.command == "list":
        for name in sorted(EXPERIMENTS):
            print(name)
        return 0
    try:
        config = RunConfig.from_file(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(config, args.grid, args.out, args.jobs)


if __name__ == "__main__":
    raise SystemExit(main())
