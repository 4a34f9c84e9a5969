"""Generational loop: random initial pipelines, evaluation, lexicase parent
selection, one mutation per offspring, full generational replacement.

There is no survival selection and no crossover. Every random decision draws
from a stream keyed by ``(seed, purpose, generation, index)``, so results do
not depend on whether evaluations run serially or on a process pool.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from lexidate.dataset import Dataset, FoldSet, SplitPair, stratified_kfold, stratified_split
from lexidate.evaluation import CV, LEXIDATE, EvaluationRecord, assemble_matrix, evaluate_cv, evaluate_lexidate, grade
from lexidate.learners import FitCounter
from lexidate.pipeline import PipelineGraph, fit_pipeline, mutate, predict_pipeline, random_pipeline
from lexidate.selection import best_record, select_parents

__all__ = [
    "ArchiveEntry",
    "EvolutionError",
    "GenerationSummary",
    "RunConfig",
    "RunResult",
    "Strategy",
    "fit_call_ledger",
    "run",
]

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
# stream purposes
_INIT, _MUTATE, _SELECT, _SPLIT, _BEST, _OUTER = range(6)


class EvolutionError(RuntimeError):
    pass


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK64, *key]))


@dataclass(frozen=True)
class Strategy:
    kind: str
    learn_fraction: float | None = None
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind == LEXIDATE:
            if self.learn_fraction is None or not 0.0 < self.learn_fraction < 1.0 or self.k is not None:
                raise ValueError("lexidate needs a learn_fraction in (0, 1) and no fold count")
        elif self.kind == CV:
            if self.k is None or self.k < 2 or self.learn_fraction is not None:
                raise ValueError("cv needs an integer fold count k >= 2 and no learn_fraction")
        else:
            raise ValueError(f"unknown strategy {self.kind!r}")

    @classmethod
    def lexidate(cls, learn_fraction: float) -> Strategy:
        return cls(LEXIDATE, learn_fraction=float(learn_fraction))

    @classmethod
    def cv(cls, k: int = 10) -> Strategy:
        return cls(CV, k=int(k))

    @property
    def label(self) -> str:
        """``cv-10`` or ``lexidate-90/10`` style treatment label."""
        if self.kind == CV:
            return f"cv-{self.k}"
        learn = round(100 * self.learn_fraction)
        return f"lexidate-{learn}/{100 - learn}"

    def to_dict(self) -> dict:
        if self.kind == CV:
            return {"strategy": CV, "folds": self.k}
        return {"strategy": LEXIDATE, "split": self.learn_fraction}


@dataclass(frozen=True)
class RunConfig:
    strategy: Strategy
    pop_size: int = 48
    max_nodes: int = 10
    generations: int = 200
    time_limit: float = 1800.0
    seed: int = 0
    test_fraction: float = 0.25
    mutation: bool = True

    def __post_init__(self) -> None:
        if self.pop_size < 1 or self.max_nodes < 1 or self.generations < 1:
            raise ValueError("pop_size, max_nodes and generations must be positive")
        if not self.time_limit >= 0:
            raise ValueError("time_limit must be non-negative")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.to_dict()
        d["treatment"] = self.strategy.label
        return d


@dataclass(frozen=True)
class ArchiveEntry:
    generation: int
    index: int
    record: EvaluationRecord

    def to_dict(self) -> dict:
        r = self.record
        return {
            "generation": self.generation,
            "index": self.index,
            "valid": r.valid,
            "selection_accuracy": r.selection_accuracy,
            "complexity": r.complexity,
            "fit_calls": r.fit_calls,
            "pipeline": r.pipeline.to_text(),
        }


@dataclass(frozen=True)
class GenerationSummary:
    generation: int
    valid_count: int
    best_selection_accuracy: float
    mean_selection_accuracy: float
    mean_complexity: float


@dataclass(frozen=True, eq=False)
class RunResult:
    config: RunConfig
    dataset: str
    n_train: int
    n_test: int
    archive: list[ArchiveEntry]
    best: ArchiveEntry
    test_accuracy: float
    test_complexity: int
    total_fit_calls: int
    generations: list[GenerationSummary] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self, include_archive: bool = True) -> dict:
        """JSON-ready view. Wall-clock timings are left out so equal configs
        serialise identically."""
        strategy, total, per_eval = fit_call_ledger(self)
        out = {
            "config": self.config.to_dict(),
            "dataset": {"name": self.dataset, "n_train": self.n_train, "n_test": self.n_test},
            "best": {
                "generation": self.best.generation,
                "index": self.best.index,
                "selection_accuracy": self.best.record.selection_accuracy,
                "complexity": self.best.record.complexity,
                "pipeline": self.best.record.pipeline.to_text(),
                "graph": self.best.record.pipeline.to_dict(),
            },
            "test_accuracy": self.test_accuracy,
            "test_complexity": self.test_complexity,
            "fit_calls": {"strategy": strategy, "total": total, "per_evaluation": per_eval},
            "generations": [asdict(s) for s in self.generations],
        }
        if include_archive:
            out["archive"] = [e.to_dict() for e in self.archive]
        return out

    def to_json(self, include_archive: bool = True) -> str:
        return json.dumps(self.to_dict(include_archive), indent=1, allow_nan=False)


def fit_call_ledger(result: RunResult) -> tuple[str, int, float]:
    """``(treatment label, total evaluation fit calls, mean fits per evaluation)``.

    The final refit of the winner on the full training set is not included.
    """
    n = len(result.archive)
    return result.config.strategy.label, result.total_fit_calls, result.total_fit_calls / n if n else 0.0


# --------------------------------------------------------------------------
# evaluation dispatch
# --------------------------------------------------------------------------

_WORKER_CONTEXT: tuple | None = None


def _install_context(context: tuple) -> None:
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = context


def _evaluate(g: PipelineGraph, context: tuple | None = None) -> EvaluationRecord:
    kind, partition, train, time_limit = context if context is not None else _WORKER_CONTEXT
    if kind == LEXIDATE:
        return evaluate_lexidate(g, partition, train, time_limit)
    return evaluate_cv(g, partition, train, time_limit)


class _Evaluator:
    def __init__(self, context: tuple, workers: int) -> None:
        self.context = context
        self.workers = workers
        self.pool = None
        if workers > 1:
            self.pool = ProcessPoolExecutor(workers, initializer=_install_context, initargs=(context,))

    def __call__(self, population: Sequence[PipelineGraph]) -> list[EvaluationRecord]:
        if self.pool is None:
            return [_evaluate(g, self.context) for g in population]
        chunk = max(1, len(population) // (4 * self.workers))
        return list(self.pool.map(_evaluate, population, chunksize=chunk))

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------

def _summarise(generation: int, records: Sequence[EvaluationRecord]) -> GenerationSummary:
    valid = [r for r in records if r.valid]
    acc = [r.selection_accuracy for r in valid]
    cpx = [r.complexity for r in valid]
    return GenerationSummary(
        generation=generation,
        valid_count=len(valid),
        best_selection_accuracy=float(max(acc)),
        mean_selection_accuracy=float(np.mean(acc)),
        mean_complexity=float(np.mean(cpx)),
    )


def _partition(config: RunConfig, train: Dataset) -> SplitPair | FoldSet:
    rng = keyed_rng(config.seed, _SPLIT)
    if config.strategy.kind == LEXIDATE:
        return stratified_split(train, config.strategy.learn_fraction, rng)
    return stratified_kfold(train, config.strategy.k, rng)


def run(config: RunConfig, ds: Dataset, *, workers: int = 1) -> RunResult:
    """Evolve pipelines on ``ds`` and score the winner on a held-out test set.

    The outer train/test split and the strategy's split or folds are drawn
    once and kept for the whole run. Generation 0 is the random initial
    population; ``config.generations`` evaluation waves are run in total.
    """
    started = time.perf_counter()
    try:
        outer = stratified_split(ds, 1.0 - config.test_fraction, keyed_rng(config.seed, _OUTER))
        train, test = ds.subset(outer.learning), ds.subset(outer.selection)
        partition = _partition(config, train)
    except ValueError as exc:
        raise EvolutionError(f"dataset {ds.name!r} too small for {config.strategy.label}: {exc}") from exc

    population = [random_pipeline(config.max_nodes, keyed_rng(config.seed, _INIT, i)) for i in range(config.pop_size)]
    archive: list[ArchiveEntry] = []
    summaries: list[GenerationSummary] = []
    evaluate = _Evaluator((config.strategy.kind, partition, train, config.time_limit), workers)
    try:
        for gen in range(config.generations):
            records = evaluate(population)
            archive.extend(ArchiveEntry(gen, i, r) for i, r in enumerate(records))
            if not any(r.valid for r in records):
                errors = sorted({r.error for r in records})
                raise EvolutionError(f"generation {gen}: every pipeline was invalid ({'; '.join(errors[:3])})")
            summaries.append(_summarise(gen, records))
            log.debug("generation %d: %s", gen, summaries[-1])
            if gen == config.generations - 1:
                break
            parents = select_parents(assemble_matrix(records), config.pop_size, keyed_rng(config.seed, _SELECT, gen))
            if config.mutation:
                population = [
                    mutate(population[p], keyed_rng(config.seed, _MUTATE, gen, i), max_nodes=config.max_nodes)
                    for i, p in enumerate(parents)
                ]
            else:
                population = [population[p] for p in parents]
    finally:
        evaluate.close()

    valid_entries = [e for e in archive if e.record.valid]
    pick = best_record(
        [(e.record.selection_accuracy, e.record.complexity) for e in valid_entries],
        keyed_rng(config.seed, _BEST),
    )
    best = valid_entries[pick]
    try:
        final = fit_pipeline(best.record.pipeline, train.features, train.labels, counter=FitCounter())
        test_accuracy = float(grade(predict_pipeline(final, test.features), test.labels).mean())
    except ValueError as exc:
        raise EvolutionError(f"winning pipeline failed to refit on the full training set: {exc}") from exc

    return RunResult(
        config=config,
        dataset=ds.name,
        n_train=train.n_samples,
        n_test=test.n_samples,
        archive=archive,
        best=best,
        test_accuracy=test_accuracy,
        test_complexity=final.complexity,
        total_fit_calls=sum(e.record.fit_calls for e in archive),
        generations=summaries,
        wall_time=time.perf_counter() - started,
    )
