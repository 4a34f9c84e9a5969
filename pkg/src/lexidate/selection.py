"""Lexicase parent selection and the end-of-run best-pipeline filter."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "MAXIMIZE",
    "MINIMIZE",
    "ObjectiveMatrix",
    "SelectionError",
    "best_record",
    "lexicase_select",
    "select_parents",
    "selection_distribution",
]

MAXIMIZE = "maximize"
MINIMIZE = "minimize"
MAX_ENUMERATED_OBJECTIVES = 8


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveMatrix:
    """Per-individual objective rows plus directions and a validity mask.

    Rows of invalid individuals are ignored and may hold anything (NaN by
    convention).
    """

    scores: np.ndarray
    directions: tuple[str, ...]
    valid_mask: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 2:
            raise SelectionError(f"scores must be 2-D, got shape {scores.shape}")
        mask = np.asarray(self.valid_mask, dtype=bool)
        if mask.shape != (scores.shape[0],):
            raise SelectionError("valid_mask must have one entry per individual")
        if len(self.directions) != scores.shape[1]:
            raise SelectionError("need one direction per objective")
        bad = set(self.directions) - {MAXIMIZE, MINIMIZE}
        if bad:
            raise SelectionError(f"unknown directions {sorted(bad)}")
        if mask.any() and not np.all(np.isfinite(scores[mask])):
            raise SelectionError("valid individuals must have finite scores")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "valid_mask", mask)
        object.__setattr__(self, "directions", tuple(self.directions))

    @classmethod
    def maximizing(cls, scores, valid_mask=None) -> ObjectiveMatrix:
        scores = np.asarray(scores, dtype=float)
        if valid_mask is None:
            valid_mask = np.ones(len(scores), dtype=bool)
        return cls(scores, (MAXIMIZE,) * scores.shape[1], valid_mask)

    @property
    def n_individuals(self) -> int:
        return self.scores.shape[0]

    @property
    def n_objectives(self) -> int:
        return self.scores.shape[1]

    def oriented(self) -> np.ndarray:
        """Scores with minimised columns negated, so larger is always better."""
        sign = np.array([1.0 if d == MAXIMIZE else -1.0 for d in self.directions])
        return self.scores * sign


def _valid_pool(m: ObjectiveMatrix) -> np.ndarray:
    pool = np.flatnonzero(m.valid_mask)
    if len(pool) == 0:
        raise SelectionError("lexicase selection needs at least one valid individual")
    return pool


def _filter(oriented: np.ndarray, pool: np.ndarray, cases: Sequence[int]) -> np.ndarray:
    for case in cases:
        column = oriented[pool, case]
        pool = pool[column == column.max()]
        if len(pool) == 1:
            break
    return pool


def lexicase_select(m: ObjectiveMatrix, rng: np.random.Generator) -> int:
    """Draw one parent index with plain (exact-equality) lexicase selection."""
    return _draw(m.oriented(), _valid_pool(m), rng)


def _draw(oriented: np.ndarray, pool: np.ndarray, rng: np.random.Generator) -> int:
    survivors = _filter(oriented, pool, rng.permutation(oriented.shape[1]))
    return int(survivors[rng.integers(len(survivors))])


def select_parents(m: ObjectiveMatrix, count: int, rng: np.random.Generator) -> list[int]:
    """``count`` independent lexicase draws, with replacement."""
    if count < 1:
        raise SelectionError("count must be positive")
    oriented, pool = m.oriented(), _valid_pool(m)
    return [_draw(oriented, pool, rng) for _ in range(count)]


def selection_distribution(m: ObjectiveMatrix) -> np.ndarray:
    """Exact selection probabilities of :func:`lexicase_select`.

    Enumerates every ordering of the objectives and spreads each ordering's
    weight uniformly over its survivors.
    """
    if m.n_objectives > MAX_ENUMERATED_OBJECTIVES:
        raise SelectionError(
            f"exact enumeration supports at most {MAX_ENUMERATED_OBJECTIVES} objectives, got {m.n_objectives}"
        )
    oriented, pool = m.oriented(), _valid_pool(m)
    probs = np.zeros(m.n_individuals)
    n_orders = math.factorial(m.n_objectives)
    for order in itertools.permutations(range(m.n_objectives)):
        survivors = pool
        for case in order:
            column = oriented[survivors, case]
            survivors = survivors[column == column.max()]
        probs[survivors] += 1.0 / (n_orders * len(survivors))
    return probs


def best_record(records: Sequence[tuple[float, int]], rng: np.random.Generator) -> int:
    """Index of the most accurate record, ties broken by lowest complexity,
    remaining ties uniformly at random."""
    if not records:
        raise SelectionError("best_record needs at least one record")
    acc = np.array([r[0] for r in records], dtype=float)
    cpx = np.array([r[1] for r in records], dtype=float)
    candidates = np.flatnonzero(acc == acc.max())
    candidates = candidates[cpx[candidates] == cpx[candidates].min()]
    return int(candidates[rng.integers(len(candidates))])
