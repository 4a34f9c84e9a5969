"""Model evaluation strategies.

``lexidate`` fits a pipeline once on the learning side of a fixed split and
grades each prediction on the selection side; those 0/1 grades are the
lexicase test cases. ``cv`` runs stratified k-fold cross-validation and
yields two aggregated objectives, mean accuracy and mean complexity.

Evaluators never raise on a bad pipeline: fit errors, non-finite outputs and
timeouts produce an invalid :class:`EvaluationRecord`.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lexidate.dataset import Dataset, FoldSet, SplitPair
from lexidate.learners import FitCounter
from lexidate.pipeline import EvaluationTimeout, PipelineGraph, fit_pipeline, predict_pipeline
from lexidate.selection import MAXIMIZE, MINIMIZE, ObjectiveMatrix

__all__ = [
    "CV",
    "LEXIDATE",
    "EvaluationError",
    "EvaluationRecord",
    "assemble_matrix",
    "evaluate_cv",
    "evaluate_lexidate",
    "grade",
    "round_half_up",
]

log = logging.getLogger(__name__)

LEXIDATE = "lexidate"
CV = "cv"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EvaluationRecord:
    pipeline: PipelineGraph
    strategy: str
    valid: bool
    objectives: np.ndarray | None
    selection_accuracy: float | None
    complexity: int | None
    fit_calls: int
    wall_time: float
    error: str | None = None


def grade(predictions, truth) -> np.ndarray:
    """1 where the prediction matches the truth, else 0."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise EvaluationError(f"length mismatch: {predictions.shape} predictions vs {truth.shape} labels")
    return (predictions == truth).astype(np.int8)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _invalid(g, strategy, counter, start, exc) -> EvaluationRecord:
    log.debug("pipeline invalid under %s: %s", strategy, exc)
    return EvaluationRecord(
        pipeline=g,
        strategy=strategy,
        valid=False,
        objectives=None,
        selection_accuracy=None,
        complexity=None,
        fit_calls=counter.value,
        wall_time=time.perf_counter() - start,
        error=f"{type(exc).__name__}: {exc}",
    )


def evaluate_lexidate(g: PipelineGraph, split: SplitPair, ds: Dataset, time_limit: float) -> EvaluationRecord:
    """Fit on ``split.learning``; objectives are the grades on ``split.selection``."""
    start = time.perf_counter()
    deadline = start + time_limit
    counter = FitCounter()
    try:
        if time_limit <= 0:
            raise EvaluationTimeout("time limit is zero")
        X, y = ds.features, ds.labels
        fitted = fit_pipeline(g, X[split.learning], y[split.learning], deadline=deadline, counter=counter)
        grades = grade(predict_pipeline(fitted, X[split.selection]), y[split.selection])
        if time.perf_counter() > deadline:
            raise EvaluationTimeout("evaluation time limit exceeded")
    except (ValueError, ArithmeticError, TimeoutError, np.linalg.LinAlgError) as exc:
        return _invalid(g, LEXIDATE, counter, start, exc)
    return EvaluationRecord(
        pipeline=g,
        strategy=LEXIDATE,
        valid=True,
        objectives=grades.astype(float),
        selection_accuracy=float(grades.mean()),
        complexity=fitted.complexity,
        fit_calls=counter.value,
        wall_time=time.perf_counter() - start,
    )


def evaluate_cv(g: PipelineGraph, folds: FoldSet, ds: Dataset, time_limit: float) -> EvaluationRecord:
    """k-fold CV; objectives are (mean fold accuracy, mean fold complexity)."""
    start = time.perf_counter()
    deadline = start + time_limit
    counter = FitCounter()
    accuracies, complexities = [], []
    try:
        if time_limit <= 0:
            raise EvaluationTimeout("time limit is zero")
        X, y = ds.features, ds.labels
        for i, held_out in enumerate(folds.folds):
            if time.perf_counter() >= deadline:
                raise EvaluationTimeout("evaluation time limit exceeded")
            train = folds.training_indices(i)
            fitted = fit_pipeline(g, X[train], y[train], deadline=deadline, counter=counter)
            accuracies.append(float(grade(predict_pipeline(fitted, X[held_out]), y[held_out]).mean()))
            complexities.append(fitted.complexity)
        if time.perf_counter() > deadline:
            raise EvaluationTimeout("evaluation time limit exceeded")
    except (ValueError, ArithmeticError, TimeoutError, np.linalg.LinAlgError) as exc:
        return _invalid(g, CV, counter, start, exc)
    mean_acc = float(np.mean(accuracies))
    mean_cpx = float(np.mean(complexities))
    return EvaluationRecord(
        pipeline=g,
        strategy=CV,
        valid=True,
        objectives=np.array([mean_acc, mean_cpx]),
        selection_accuracy=mean_acc,
        complexity=round_half_up(mean_cpx),
        fit_calls=counter.value,
        wall_time=time.perf_counter() - start,
    )


def assemble_matrix(records: Sequence[EvaluationRecord], strategy: str | None = None) -> ObjectiveMatrix:
    """Stack record objectives into an :class:`ObjectiveMatrix`.

    Lexidate columns are all maximised; CV columns are (maximise accuracy,
    minimise complexity). Invalid records get NaN rows and a false mask bit.
    """
    if not records:
        raise EvaluationError("no records to assemble")
    strategies = {r.strategy for r in records}
    if strategy is not None:
        strategies.add(strategy)
    if len(strategies) != 1:
        raise EvaluationError(f"records mix strategies: {sorted(strategies)}")
    (strategy,) = strategies
    widths = {len(r.objectives) for r in records if r.valid}
    if len(widths) > 1:
        raise EvaluationError(f"inconsistent objective vector lengths: {sorted(widths)}")
    if strategy == CV:
        width, directions = 2, (MAXIMIZE, MINIMIZE)
        if widths and widths != {2}:
            raise EvaluationError("cv records must carry exactly two objectives")
    elif strategy == LEXIDATE:
        width = widths.pop() if widths else 0
        directions = (MAXIMIZE,) * width
    else:
        raise EvaluationError(f"unknown strategy {strategy!r}")
    scores = np.full((len(records), width), np.nan)
    mask = np.zeros(len(records), dtype=bool)
    for i, r in enumerate(records):
        if r.valid:
            scores[i] = r.objectives
            mask[i] = True
    return ObjectiveMatrix(scores, directions, mask)
