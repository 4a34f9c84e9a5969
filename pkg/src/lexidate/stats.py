"""Nonparametric comparison of evaluation strategies.

Kruskal-Wallis omnibus test, then (only when it rejects) pairwise two-tailed
Wilcoxon rank-sum tests with a Bonferroni correction over all pairs.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

__all__ = [
    "ComparisonReport",
    "PairwiseResult",
    "StatsError",
    "bonferroni",
    "compare_strategies",
    "kruskal_wallis",
    "rank_sum_null_counts",
    "significance_grid",
    "wilcoxon_rank_sum",
]

EXACT_MAX_TOTAL = 12


class StatsError(ValueError):
    pass


def _tie_term(ranks_input: np.ndarray) -> float:
    _, counts = np.unique(ranks_input, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """H statistic on mid-ranks with tie correction, and its chi-square p-value
    on ``k - 1`` degrees of freedom."""
    samples = [np.asarray(g, dtype=float) for g in groups]
    if len(samples) < 2:
        raise StatsError("Kruskal-Wallis needs at least two groups")
    if any(len(s) == 0 for s in samples):
        raise StatsError("every group must be nonempty")
    pooled = np.concatenate(samples)
    if not np.all(np.isfinite(pooled)):
        raise StatsError("values must be finite")
    n = len(pooled)
    if n < 3:
        raise StatsError("Kruskal-Wallis needs at least three observations")
    correction = 1.0 - _tie_term(pooled) / (n**3 - n)
    if correction <= 0.0:
        return 0.0, 1.0
    ranks = sps.rankdata(pooled)
    h, start = 0.0, 0
    for s in samples:
        r = ranks[start:start + len(s)]
        start += len(s)
        h += r.sum() ** 2 / len(s)
    h = (12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)) / correction
    h = max(h, 0.0)
    return float(h), float(min(1.0, sps.chi2.sf(h, len(samples) - 1)))


def rank_sum_null_counts(n_a: int, n_b: int) -> list[int]:
    """Number of rank subsets of size ``n_a`` drawn from ``1..n_a+n_b`` that
    give each Mann-Whitney U value ``0..n_a*n_b`` (no ties)."""
    # walk the pooled order from smallest to largest; an 'a' placed after
    # ib 'b's adds ib to U
    max_u = n_a * n_b
    dp = {(0, 0): [1] + [0] * max_u}
    for _ in range(n_a + n_b):
        nxt: dict[tuple[int, int], list[int]] = {}
        for (ia, ib), dist in dp.items():
            if ia < n_a:
                tgt = nxt.setdefault((ia + 1, ib), [0] * (max_u + 1))
                for u, c in enumerate(dist):
                    if c:
                        tgt[u + ib] += c
            if ib < n_b:
                tgt = nxt.setdefault((ia, ib + 1), [0] * (max_u + 1))
                for u, c in enumerate(dist):
                    if c:
                        tgt[u] += c
        dp = nxt
    return dp[(n_a, n_b)]


def _exact_two_tailed(u: int, n_a: int, n_b: int) -> float:
    counts = rank_sum_null_counts(n_a, n_b)
    total = sum(counts)
    below = sum(counts[: u + 1])
    above = sum(counts[u:])
    return min(1.0, 2 * min(below, above) / total)


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-tailed Wilcoxon rank-sum (Mann-Whitney) test.

    Returns ``(U, p)`` where U counts pairs with ``a_i > b_j`` (ties count
    one half). The p-value is exact for tie-free samples with at most 12
    pooled values; otherwise it comes from the normal approximation with tie
    and continuity corrections.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise StatsError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    if not np.all(np.isfinite(pooled)):
        raise StatsError("values must be finite")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    ranks = sps.rankdata(pooled)
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    has_ties = len(np.unique(pooled)) < n
    if n <= EXACT_MAX_TOTAL and not has_ties:
        return u, _exact_two_tailed(int(round(u)), n_a, n_b)
    mean = n_a * n_b / 2.0
    var = n_a * n_b / 12.0 * ((n + 1) - _tie_term(pooled) / (n * (n - 1)))
    if var <= 0.0:
        return u, 1.0
    z = max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var)
    return u, float(min(1.0, 2.0 * sps.norm.sf(z)))


def bonferroni(pvals: Sequence[float], m: int | None = None) -> list[float]:
    pvals = [float(p) for p in pvals]
    m = len(pvals) if m is None else int(m)
    if m < 1 or m < len(pvals):
        raise StatsError(f"m must be >= the number of p-values ({len(pvals)}), got {m}")
    if any(not 0.0 <= p <= 1.0 for p in pvals):
        raise StatsError("p-values must lie in [0, 1]")
    return [min(1.0, p * m) for p in pvals]


@dataclass(frozen=True)
class PairwiseResult:
    first: str
    second: str
    u: float
    p_raw: float
    p_adjusted: float
    significant: bool


@dataclass(frozen=True)
class ComparisonReport:
    labels: tuple[str, ...]
    h: float
    p_omnibus: float
    alpha: float
    pairs: tuple[PairwiseResult, ...] = field(default_factory=tuple)

    @property
    def omnibus_significant(self) -> bool:
        return self.p_omnibus < self.alpha

    def pair(self, x: str, y: str) -> PairwiseResult | None:
        for p in self.pairs:
            if {p.first, p.second} == {x, y}:
                return p
        return None

    def significant_pairs(self) -> set[frozenset[str]]:
        return {frozenset((p.first, p.second)) for p in self.pairs if p.significant}


def compare_strategies(results: Mapping[str, Sequence[float]], alpha: float = 0.05) -> ComparisonReport:
    """Omnibus test across all strategies; post-hoc pairs only if it rejects."""
    if len(results) < 2:
        raise StatsError("need at least two strategies")
    for label, values in results.items():
        if len(values) < 2:
            raise StatsError(f"strategy {label!r} has {len(values)} replicate(s); need at least 2")
    labels = tuple(results)
    h, p = kruskal_wallis([results[k] for k in labels])
    if p >= alpha:
        return ComparisonReport(labels, h, p, alpha)
    combos = list(itertools.combinations(labels, 2))
    raw = [wilcoxon_rank_sum(results[x], results[y]) for x, y in combos]
    adjusted = bonferroni([r[1] for r in raw], len(combos))
    pairs = tuple(
        PairwiseResult(x, y, u, praw, padj, padj < alpha)
        for (x, y), (u, praw), padj in zip(combos, raw, adjusted)
    )
    return ComparisonReport(labels, h, p, alpha, pairs)


# --------------------------------------------------------------------------
# significance grid: rows = datasets, columns = challengers vs a baseline
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridCell:
    dataset: str
    treatment: str
    p: float
    source: str  # "wilcoxon" (Bonferroni-adjusted) or "kruskal" (omnibus did not reject)
    significant: bool


def significance_grid(reports: Mapping[str, ComparisonReport], baseline: str) -> tuple[list[str], list[GridCell], dict[str, int]]:
    """Cells comparing every non-baseline treatment with ``baseline``.

    When the omnibus test did not reject for a dataset no post-hoc test was
    run; the cell then carries the omnibus p and counts as not significant.
    Returns ``(columns, cells, summary)`` where ``summary`` counts, per
    column, the datasets without a significant difference.
    """
    columns: list[str] = []
    for rep in reports.values():
        for label in rep.labels:
            if label != baseline and label not in columns:
                columns.append(label)
    cells = []
    for name, rep in reports.items():
        for col in columns:
            if col not in rep.labels or baseline not in rep.labels:
                continue
            pair = rep.pair(col, baseline)
            if pair is None:
                cells.append(GridCell(name, col, rep.p_omnibus, "kruskal", False))
            else:
                cells.append(GridCell(name, col, pair.p_adjusted, "wilcoxon", pair.significant))
    summary = {col: sum(1 for c in cells if c.treatment == col and not c.significant) for col in columns}
    return columns, cells, summary


def _fmt_p(p: float) -> str:
    if p == 0.0:
        return "p<1e-300"
    if p < 1e-3:
        return f"p<1e{math.floor(math.log10(p)) + 1}"
    return f"p={p:.5g}"


def render_grid(columns: Sequence[str], cells: Sequence[GridCell], summary: Mapping[str, int], baseline: str) -> str:
    datasets = list(dict.fromkeys(c.dataset for c in cells))
    lookup = {(c.dataset, c.treatment): c for c in cells}
    header = ["dataset"] + [f"{c} vs {baseline}" for c in columns]
    rows = []
    for d in datasets:
        row = [d]
        for col in columns:
            cell = lookup.get((d, col))
            if cell is None:
                row.append("-")
            else:
                mark = "*" if cell.significant else ""
                tag = " (KW)" if cell.source == "kruskal" else ""
                row.append(f"{_fmt_p(cell.p)}{tag}{mark}")
        rows.append(row)
    rows.append(["no difference"] + [str(summary[c]) for c in columns])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    out = [" | ".join(h.ljust(w) for h, w in zip(header, widths)), line]
    out += [" | ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows[:-1]]
    out += [line, " | ".join(v.ljust(w) for v, w in zip(rows[-1], widths))]
    return "\n".join(out)


def cells_to_csv(cells: Sequence[GridCell], summary: Mapping[str, int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "treatment", "p", "source", "significant"])
    for c in cells:
        w.writerow([c.dataset, c.treatment, repr(c.p), c.source, int(c.significant)])
    for treatment, count in summary.items():
        w.writerow(["__summary__", treatment, count, "count_not_significant", ""])
    return buf.getvalue()
