"""Command-line front end.

    lexidate run --data PATH --target NAME --strategy {cv,lexidate} --out FILE
    lexidate experiment PLAN.json
    lexidate stats RESULTS.csv [--alpha 0.05]

Exit codes: 0 success, 1 runtime failure, 2 usage or input error. The number
of worker processes comes from ``LEXIDATE_WORKERS`` (default: all cores).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

from lexidate.dataset import Dataset, DatasetError, bundled_datasets, bundled_path, load_csv
from lexidate.evolution import EvolutionError, RunConfig, Strategy, run
from lexidate.stats import StatsError, cells_to_csv, compare_strategies, render_grid, significance_grid

log = logging.getLogger("lexidate")

RESULT_COLUMNS = (
    "dataset",
    "treatment",
    "replicate",
    "seed",
    "test_accuracy",
    "test_complexity",
    "total_fit_calls",
    "wall_time",
)
METRICS = ("test_accuracy", "test_complexity")
WORKERS_ENV = "LEXIDATE_WORKERS"


class UsageError(Exception):
    """Bad flags or malformed input files (exit code 2)."""


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1")
    return n


def resolve_data(path: str, target: str, name: str | None = None) -> Dataset:
    """Load ``path``; a bare bundled-dataset name (e.g. ``iris``) also works."""
    p = Path(path)
    if not p.exists() and path in bundled_datasets():
        p = bundled_path(path)
    return load_csv(p, target, name=name)


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def _strategy_from_flags(strategy: str, folds: int | None, split: float | None) -> Strategy:
    if strategy == "cv":
        if split is not None:
            raise UsageError("--split applies to the lexidate strategy only")
        folds = 10 if folds is None else folds
        if folds < 2:
            raise UsageError(f"--folds must be >= 2, got {folds}")
        return Strategy.cv(folds)
    if folds is not None:
        raise UsageError("--folds applies to the cv strategy only")
    split = 0.7 if split is None else split
    if not 0.0 < split < 1.0:
        raise UsageError(f"--split must lie in (0, 1), got {split}")
    return Strategy.lexidate(split)


def cmd_run(args: argparse.Namespace) -> int:
    strategy = _strategy_from_flags(args.strategy, args.folds, args.split)
    try:
        config = RunConfig(
            strategy=strategy,
            pop_size=args.pop_size,
            max_nodes=args.max_nodes,
            generations=args.generations,
            time_limit=args.time_limit,
            seed=args.seed,
            test_fraction=args.test_fraction,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        ds = resolve_data(args.data, args.target)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    result = run(config, ds, workers=worker_count())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_json() + "\n")
    print(f"treatment      {strategy.label}")
    print(f"config         {json.dumps(config.to_dict(), sort_keys=True)}")
    print(f"best pipeline  (generation {result.best.generation}, index {result.best.index})")
    for line in result.best.record.pipeline.to_text().splitlines():
        print(f"    {line}")
    print(f"test accuracy  {result.test_accuracy:.6g}")
    print(f"complexity     {result.test_complexity}")
    print(f"fit calls      {result.total_fit_calls}")
    print(f"wrote          {out}")
    return 0


# --------------------------------------------------------------------------
# experiment
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSpec:
    path: str
    target: str
    name: str


@dataclass(frozen=True)
class ExperimentPlan:
    datasets: tuple[DataSpec, ...]
    treatments: tuple[tuple[str, Strategy], ...]
    replicates: int
    base_seed: int
    output_dir: Path
    run_options: dict

    def jobs(self):
        for d in self.datasets:
            for label, strategy in self.treatments:
                for r in range(self.replicates):
                    yield d, label, strategy, r, self.base_seed + r


_RUN_OPTIONS = {"pop_size": int, "generations": int, "max_nodes": int, "time_limit": float, "test_fraction": float}


def _parse_treatment(raw: dict) -> tuple[str, Strategy]:
    if not isinstance(raw, dict) or "strategy" not in raw:
        raise UsageError(f"treatment must be an object with a 'strategy' key, got {raw!r}")
    if raw["strategy"] not in ("cv", "lexidate"):
        raise UsageError(f"unknown strategy {raw['strategy']!r}")
    try:
        strategy = _strategy_from_flags(raw["strategy"], raw.get("folds"), raw.get("split"))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad treatment {raw!r}: {exc}") from None
    return str(raw.get("label", strategy.label)), strategy


def load_plan(path: Path, output_dir: str | None = None) -> ExperimentPlan:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read plan {path}: {exc}") from None
    base = Path(path).resolve().parent
    try:
        datasets = []
        for d in raw["datasets"]:
            p = d["path"]
            if not Path(p).is_absolute() and (base / p).exists():
                p = str(base / p)
            datasets.append(DataSpec(p, d["target"], d.get("name") or Path(d["path"]).stem))
        treatments = tuple(_parse_treatment(t) for t in raw["treatments"])
        replicates = int(raw["replicates"])
        base_seed = int(raw.get("base_seed", 0))
        out = Path(output_dir or raw.get("output_dir", "results"))
        options = dict(raw.get("run", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed plan {path}: {exc!r}") from None
    if not out.is_absolute() and output_dir is None:
        out = base / out
    labels = [t[0] for t in treatments]
    if len(set(labels)) != len(labels):
        raise UsageError(f"treatment labels must be unique: {labels}")
    if replicates < 1:
        raise UsageError("replicates must be >= 1")
    if not datasets or not treatments:
        raise UsageError("plan needs at least one dataset and one treatment")
    unknown = set(options) - set(_RUN_OPTIONS)
    if unknown:
        raise UsageError(f"unknown run options {sorted(unknown)}")
    options = {k: _RUN_OPTIONS[k](v) for k, v in options.items()}
    return ExperimentPlan(tuple(datasets), treatments, replicates, base_seed, out, options)


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", label)


def _experiment_job(data: DataSpec, label: str, strategy: Strategy, replicate: int, seed: int,
                    options: dict, run_dir: str) -> dict:
    started = time.perf_counter()
    row = {"dataset": data.name, "treatment": label, "replicate": replicate, "seed": seed,
           "test_accuracy": "", "test_complexity": "", "total_fit_calls": "", "wall_time": ""}
    try:
        ds = resolve_data(data.path, data.target, data.name)
        result = run(RunConfig(strategy=strategy, seed=seed, **options), ds)
        Path(run_dir, f"{_safe(data.name)}__{_safe(label)}__r{replicate}.json").write_text(
            result.to_json(include_archive=False) + "\n"
        )
        row.update(test_accuracy=repr(result.test_accuracy), test_complexity=result.test_complexity,
                   total_fit_calls=result.total_fit_calls)
    except (EvolutionError, DatasetError, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_time"] = f"{time.perf_counter() - started:.3f}"
    return row


def read_results(path: Path) -> list[dict]:
    try:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
                raise UsageError(f"{path}: expected columns {','.join(RESULT_COLUMNS)}, got {reader.fieldnames}")
            return list(reader)
    except OSError as exc:
        raise UsageError(f"cannot read results file {path}: {exc}") from None


def cmd_experiment(args: argparse.Namespace) -> int:
    plan = load_plan(Path(args.plan), args.output_dir)
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    run_dir = plan.output_dir / "runs"
    run_dir.mkdir(exist_ok=True)
    results_path = plan.output_dir / "results.csv"
    done = set()
    if results_path.exists():
        done = {(r["dataset"], r["treatment"], int(r["replicate"])) for r in read_results(results_path)}
    else:
        with results_path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(RESULT_COLUMNS)
    jobs = [j for j in plan.jobs() if (j[0].name, j[1], j[3]) not in done]
    log.info("%d runs to do, %d already in %s", len(jobs), len(done), results_path)
    failures = 0

    def append(row: dict) -> None:
        nonlocal failures
        if "error" in row:
            failures += 1
            log.error("run %s/%s/r%s failed: %s", row["dataset"], row["treatment"], row["replicate"], row["error"])
        with results_path.open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([row[c] for c in RESULT_COLUMNS])
        print(f"{row['dataset']:>14} {row['treatment']:>16} r{row['replicate']:<3} "
              f"acc={row['test_accuracy'] or 'FAILED'} complexity={row['test_complexity']}")

    workers = min(worker_count(), max(1, len(jobs)))
    if workers == 1:
        for d, label, strategy, r, seed in jobs:
            append(_experiment_job(d, label, strategy, r, seed, plan.run_options, str(run_dir)))
    else:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_experiment_job, d, label, strategy, r, seed, plan.run_options, str(run_dir))
                       for d, label, strategy, r, seed in jobs]
            for fut in as_completed(futures):
                append(fut.result())
    print(f"{len(jobs)} runs ({failures} failed); results in {results_path}")
    return 0


# --------------------------------------------------------------------------
# stats
# --------------------------------------------------------------------------

def _metric_groups(rows: list[dict], metric: str) -> dict[str, dict[str, list[float]]]:
    grouped: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for i, row in enumerate(rows, start=2):
        if row[metric] == "":
            continue
        try:
            grouped[row["dataset"]][row["treatment"]].append(float(row[metric]))
        except ValueError:
            raise UsageError(f"results row {i}: non-numeric {metric} {row[metric]!r}") from None
    return grouped


def _pick_baseline(labels: list[str], requested: str | None) -> str:
    if requested is not None:
        if requested not in labels:
            raise UsageError(f"baseline {requested!r} is not a treatment ({labels})")
        return requested
    cvs = [t for t in labels if t.startswith("cv")]
    return cvs[0] if len(cvs) == 1 else labels[0]


def cmd_stats(args: argparse.Namespace) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    rows = read_results(Path(args.results))
    out_dir = Path(args.output_dir) if args.output_dir else Path(args.results).resolve().parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for metric in METRICS:
        grouped = _metric_groups(rows, metric)
        if not grouped:
            raise UsageError(f"no {metric} values in {args.results}")
        reports = {}
        for dataset, by_treatment in grouped.items():
            if len(by_treatment) < 2:
                raise UsageError(f"dataset {dataset!r}: need at least two treatments for {metric}")
            try:
                reports[dataset] = compare_strategies(dict(by_treatment), args.alpha)
            except StatsError as exc:
                raise UsageError(f"dataset {dataset!r}, {metric}: {exc}") from None
        labels = list(dict.fromkeys(t for rep in reports.values() for t in rep.labels))
        baseline = _pick_baseline(labels, args.baseline)
        columns, cells, summary = significance_grid(reports, baseline)

        with (out_dir / f"omnibus_{metric}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "H", "p", "significant"])
            for dataset, rep in reports.items():
                w.writerow([dataset, repr(rep.h), repr(rep.p_omnibus), int(rep.omnibus_significant)])
        with (out_dir / f"pairwise_{metric}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "first", "second", "U", "p_raw", "p_adjusted", "significant"])
            for dataset, rep in reports.items():
                for p in rep.pairs:
                    w.writerow([dataset, p.first, p.second, repr(p.u), repr(p.p_raw), repr(p.p_adjusted),
                                int(p.significant)])
        (out_dir / f"grid_{metric}.csv").write_text(cells_to_csv(cells, summary))
        text = render_grid(columns, cells, summary, baseline)
        (out_dir / f"grid_{metric}.txt").write_text(text + "\n")

        print(f"== {metric} (alpha={args.alpha}, baseline {baseline}) ==")
        for dataset, rep in reports.items():
            verdict = "differences detected" if rep.omnibus_significant else "no difference"
            print(f"{dataset}: Kruskal-Wallis H={rep.h:.4g} p={rep.p_omnibus:.4g} ({verdict})")
            for p in rep.pairs:
                flag = "significant" if p.significant else "n.s."
                print(f"    {p.first} vs {p.second}: U={p.u:g} p_adj={p.p_adjusted:.4g} {flag}")
        print(text)
        print()
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code 2 but route through UsageError
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lexidate", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="evolve pipelines once and score the winner")
    p.add_argument("--data", required=True, help="CSV path, or the name of a bundled dataset")
    p.add_argument("--target", required=True, help="label column")
    p.add_argument("--strategy", required=True, choices=("cv", "lexidate"))
    p.add_argument("--folds", type=int, help="cv folds (default 10)")
    p.add_argument("--split", type=float, help="lexidate learning fraction (default 0.7)")
    p.add_argument("--pop-size", type=int, default=48)
    p.add_argument("--generations", type=int, default=200)
    p.add_argument("--max-nodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float, default=1800.0, help="seconds per pipeline evaluation")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--out", required=True, help="RunResult JSON destination")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="run every treatment x replicate of a JSON plan")
    p.add_argument("plan")
    p.add_argument("--output-dir", help="override the plan's output_dir")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("stats", help="Kruskal-Wallis + Bonferroni-corrected rank-sum report")
    p.add_argument("results", help="results.csv written by 'experiment'")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--baseline", help="treatment the grid compares against (default: the cv treatment)")
    p.add_argument("--output-dir", help="where to write the report files (default: next to results)")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"lexidate: error: {exc}", file=sys.stderr)
        return 2
    except (EvolutionError, DatasetError, OSError, ValueError) as exc:
        print(f"lexidate: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
