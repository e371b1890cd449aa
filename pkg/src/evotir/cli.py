"""Command line interface.

Subcommands:

* run: build a workload, run the search, write artifacts.
* inspect: show an archived patch, its variant IR, and a diff.
* eval: re-evaluate an archived patch and compare with the record.

Settings come from a flat TOML config file (--config); command line
flags override it. Exit codes: 0 success, 1 runtime failure, 2 bad
usage or configuration (unknown keys, missing files, bad dataset).
"""
from __future__ import annotations

import argparse
import dataclasses
import difflib
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .datasets import DatasetConfig, DatasetError
from .fitness import (WorkloadConfig, build_2fcnet_workload,
                      build_prediction_workload, evaluate, holdout_report,
                      WorkloadError)
from .genome import apply_patch, patch_from_obj, PatchApplicationError
from .printer import print_module
from .search import SearchConfig, SearchError, run_search

USAGE_ERROR = 2
RUNTIME_ERROR = 1

WORKLOADS = {
    "train2fc": build_2fcnet_workload,
    "predict2fc": build_prediction_workload,
}


class CliError(Exception):
    def __init__(self, message: str, code: int = USAGE_ERROR):
        super().__init__(message)
        self.code = code


_SEARCH_KEYS = {f.name for f in dataclasses.fields(SearchConfig)}
_WORKLOAD_KEYS = {f.name for f in dataclasses.fields(WorkloadConfig)} \
    - {"dataset", "cost_table"}
_DATASET_KEYS = {f.name for f in dataclasses.fields(DatasetConfig)} \
    - {"directory"}
_ALIASES = {"dataset_dir": ("dataset", "directory"),
            "dataset_source": ("dataset", "source")}


def build_configs(settings: dict) -> tuple[str, WorkloadConfig, SearchConfig]:
    """Split flat settings into workload and search configs."""
    workload_name = settings.pop("workload", "train2fc")
    if workload_name not in WORKLOADS:
        raise CliError(f"unknown workload {workload_name!r}; "
                       f"choose from {sorted(WORKLOADS)}")
    search_kw, workload_kw, dataset_kw = {}, {}, {}
    for key, value in settings.items():
        if key in _ALIASES:
            dataset_kw[_ALIASES[key][1]] = value
        elif key in _DATASET_KEYS:
            dataset_kw[key] = value
            # features and classes shape both the data and the network
            if key in _WORKLOAD_KEYS:
                workload_kw[key] = value
        elif key in _SEARCH_KEYS:
            search_kw[key] = value
        elif key in _WORKLOAD_KEYS:
            workload_kw[key] = value
        else:
            raise CliError(f"unknown setting {key!r}")
    wcfg = WorkloadConfig(dataset=DatasetConfig(**dataset_kw), **workload_kw)
    scfg = SearchConfig(**search_kw)
    try:
        scfg.check()
    except SearchError as e:
        raise CliError(str(e))
    return workload_name, wcfg, scfg


def _load_settings(args) -> dict:
    settings: dict = {}
    if args.config:
        try:
            with open(args.config, "rb") as f:
                settings.update(tomllib.load(f))
        except OSError as e:
            raise CliError(f"cannot read config: {e}")
        except tomllib.TOMLDecodeError as e:
            raise CliError(f"bad TOML in {args.config}: {e}")
    for key in ("workload", "seed", "generations", "population"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "dataset_dir", None):
        settings["dataset_dir"] = args.dataset_dir
        settings.setdefault("dataset_source", "idx")
    return settings


def _build_workload(name: str, wcfg: WorkloadConfig):
    try:
        return WORKLOADS[name](wcfg)
    except DatasetError as e:
        raise CliError(f"dataset error: {e}")
    except WorkloadError as e:
        raise CliError(str(e), RUNTIME_ERROR)


def cmd_run(args) -> int:
    name, wcfg, scfg = build_configs(_load_settings(args))
    workload = _build_workload(name, wcfg)
    out = args.out or "runs/latest"

    def progress(entry):
        print(f"gen {entry['generation']:3d}  "
              f"evals {entry['evaluations']:5d}  "
              f"front {entry['front_size']:3d}  "
              f"best err {entry['best_error']:.4f}  "
              f"best cost {entry['best_cost']:.4g}  "
              f"hv {entry['hypervolume']:.4g}")

    try:
        result = run_search(workload, scfg, out_dir=out, progress=progress)
    except SearchError as e:
        raise CliError(str(e), RUNTIME_ERROR)
    print(f"\nbaseline: cost {result.baseline.cost:.6g} "
          f"error {result.baseline.error:.4f}")
    print(f"archive: {len(result.archive)} non-dominated patches")
    for e in result.archive[:10]:
        hold = e.holdout.error if e.holdout else float("nan")
        print(f"  cost {e.fitness.cost:.6g}  error {e.fitness.error:.4f}  "
              f"holdout {hold:.4f}  edits {len(e.patch)}")
    if len(result.archive) > 10:
        print(f"  ... {len(result.archive) - 10} more")
    print(f"artifacts in {out}")
    return 0


def _load_run(out_dir: str):
    archive_path = os.path.join(out_dir, "archive.json")
    config_path = os.path.join(out_dir, "config.json")
    try:
        with open(archive_path) as f:
            archive = json.load(f)
        with open(config_path) as f:
            config = json.load(f)
    except OSError as e:
        raise CliError(f"cannot read run directory: {e}")
    return archive, config


def _workload_from_run(config: dict):
    wc = dict(config["workload"])
    name = wc.pop("name")
    wc.pop("mode", None)
    wc.pop("mutable_functions", None)
    wc["dataset"] = DatasetConfig(**wc.pop("dataset"))
    return _build_workload(name, WorkloadConfig(**wc))


def _entry_at(archive: dict, index: int) -> dict:
    entries = archive.get("entries", [])
    if not 0 <= index < len(entries):
        raise CliError(f"archive has {len(entries)} entries, "
                       f"no index {index}")
    return entries[index]


def cmd_inspect(args) -> int:
    archive, config = _load_run(args.out)
    entry = _entry_at(archive, args.index)
    patch = patch_from_obj(entry["patch"])
    workload = _workload_from_run(config)
    print(f"archive[{args.index}]: cost {entry['cost']:.6g} "
          f"error {entry['error']:.4f} edits {entry['edits']}")
    print(json.dumps(entry["patch"], indent=2, sort_keys=True))
    try:
        result = apply_patch(workload.module, patch)
    except PatchApplicationError as e:
        raise CliError(f"archived patch no longer applies: {e}",
                       RUNTIME_ERROR)
    baseline_text = print_module(workload.module)
    variant_text = print_module(result.module)
    print()
    print(variant_text, end="")
    print()
    sys.stdout.writelines(difflib.unified_diff(
        baseline_text.splitlines(keepends=True),
        variant_text.splitlines(keepends=True),
        fromfile="baseline", tofile=f"archive[{args.index}]"))
    return 0


def cmd_eval(args) -> int:
    archive, config = _load_run(args.out)
    entry = _entry_at(archive, args.index)
    patch = patch_from_obj(entry["patch"])
    workload = _workload_from_run(config)
    fitness = evaluate(workload.module, patch, workload)
    if not fitness.valid:
        raise CliError("archived patch failed to evaluate", RUNTIME_ERROR)
    print(f"recorded: cost {entry['cost']:.6g} error {entry['error']:.6g}")
    print(f"evaluated: cost {fitness.cost:.6g} error {fitness.error:.6g}")
    match = (fitness.cost == entry["cost"]
             and fitness.error == entry["error"])
    print("match:", "yes" if match else "NO")
    if args.holdout:
        hold = holdout_report(workload.module, patch, workload)
        print(f"holdout: cost {hold.cost:.6g} error {hold.error:.6g}")
    return 0 if match else RUNTIME_ERROR


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evotir",
        description="Evolutionary search over tensor IR variants")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the search and write artifacts")
    run.add_argument("--config", help="flat TOML settings file")
    run.add_argument("--workload", choices=sorted(WORKLOADS))
    run.add_argument("--seed", type=int)
    run.add_argument("--generations", type=int)
    run.add_argument("--population", type=int)
    run.add_argument("--dataset-dir", help="IDX dataset directory")
    run.add_argument("--out", help="artifact directory (default runs/latest)")
    run.set_defaults(func=cmd_run)

    inspect = sub.add_parser("inspect",
                             help="show an archived patch and its IR")
    inspect.add_argument("--out", required=True, help="run directory")
    inspect.add_argument("--index", type=int, default=0,
                         help="archive entry index")
    inspect.set_defaults(func=cmd_inspect)

    evalp = sub.add_parser("eval", help="re-evaluate an archived patch")
    evalp.add_argument("--out", required=True, help="run directory")
    evalp.add_argument("--index", type=int, default=0)
    evalp.add_argument("--holdout", action="store_true",
                       help="also report the holdout split")
    evalp.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (SearchError, WorkloadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
