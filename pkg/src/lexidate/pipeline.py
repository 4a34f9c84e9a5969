"""Pipeline genomes: directed acyclic graphs of learner nodes.

Edges point from producer to consumer. Nodes without incoming edges are
leaves and read the raw feature matrix; every other node reads the
column-wise concatenation of its predecessors' outputs, ordered by
predecessor id. A single classifier root consumes the final features and
emits labels. Only transformers sit below the root.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from lexidate import learners
from lexidate.learners import CLASSIFIERS, TRANSFORMERS, FitCounter, FittedModel, LearnerSpec

__all__ = [
    "MUTATION_OPERATORS",
    "EvaluationTimeout",
    "FittedPipeline",
    "PipelineError",
    "PipelineGraph",
    "fit_pipeline",
    "mutate",
    "predict_pipeline",
    "random_pipeline",
    "validate",
]

EXTRA_EDGE_PROBABILITY = 0.1

MUTATION_OPERATORS = (
    "replace_method",
    "resample_hyperparameter",
    "insert_node",
    "delete_node",
    "add_edge",
    "remove_edge",
)


class PipelineError(ValueError):
    """Raised when a pipeline cannot be executed or parsed."""


class EvaluationTimeout(TimeoutError):
    """Raised when a cooperative evaluation deadline has passed."""


@dataclass(frozen=True)
class PipelineGraph:
    nodes: tuple[tuple[int, LearnerSpec], ...]
    edges: frozenset[tuple[int, int]]
    root: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n[0])))
        object.__setattr__(self, "edges", frozenset(self.edges))

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.nodes]

    def spec(self, node: int) -> LearnerSpec:
        for i, s in self.nodes:
            if i == node:
                return s
        raise KeyError(node)

    def predecessors(self, node: int) -> list[int]:
        return sorted(u for u, v in self.edges if v == node)

    def successors(self, node: int) -> list[int]:
        return sorted(v for u, v in self.edges if u == node)

    def with_changes(self, nodes=None, edges=None) -> PipelineGraph:
        return PipelineGraph(
            tuple(self.nodes if nodes is None else nodes),
            frozenset(self.edges if edges is None else edges),
            self.root,
        )

    # serialisation --------------------------------------------------------

    def to_text(self) -> str:
        """Line-oriented dump; :meth:`from_text` inverts it exactly."""
        lines = [f"root {self.root}"]
        for i, s in self.nodes:
            lines.append(f"node {i} {s.describe()}")
        for u, v in sorted(self.edges):
            lines.append(f"edge {u} -> {v}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> PipelineGraph:
        root = None
        nodes, edges = [], set()
        for raw in text.strip().splitlines():
            parts = raw.split()
            if not parts:
                continue
            try:
                if parts[0] == "root":
                    root = int(parts[1])
                elif parts[0] == "node":
                    hp = {}
                    for item in parts[3:]:
                        key, _, value = item.partition("=")
                        hp[key] = _parse_value(value)
                    nodes.append((int(parts[1]), LearnerSpec(parts[2], hp)))
                elif parts[0] == "edge" and parts[2] == "->":
                    edges.add((int(parts[1]), int(parts[3])))
                else:
                    raise PipelineError(f"unrecognised line {raw!r}")
            except (IndexError, ValueError) as exc:
                raise PipelineError(f"cannot parse pipeline line {raw!r}: {exc}") from None
        if root is None:
            raise PipelineError("pipeline text has no root line")
        return cls(tuple(nodes), frozenset(edges), root)

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [{"id": i, "method": s.method, "hyperparameters": dict(s.hyperparameters)} for i, s in self.nodes],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> PipelineGraph:
        nodes = tuple((int(n["id"]), LearnerSpec(n["method"], n["hyperparameters"])) for n in data["nodes"])
        return cls(nodes, frozenset((int(u), int(v)) for u, v in data["edges"]), int(data["root"]))


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    graph: PipelineGraph
    models: dict[int, FittedModel]
    order: tuple[int, ...]
    complexity: int


# --------------------------------------------------------------------------
# graph helpers
# --------------------------------------------------------------------------

def _topological_order(ids: Iterable[int], edges) -> list[int] | None:
    """Kahn's algorithm, smallest ready id first; None if a cycle exists."""
    ids = list(ids)
    indeg = {i: 0 for i in ids}
    out: dict[int, list[int]] = {i: [] for i in ids}
    for u, v in edges:
        indeg[v] += 1
        out[u].append(v)
    ready = [i for i in ids if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in out[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    return order if len(order) == len(ids) else None


def _reaches(edges, src: int, dst: int) -> bool:
    adj: dict[int, list[int]] = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
    stack, seen = [src], {src}
    while stack:
        u = stack.pop()
        if u == dst:
            return True
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def _ancestors_of(edges, target: int) -> set[int]:
    rev: dict[int, list[int]] = {}
    for u, v in edges:
        rev.setdefault(v, []).append(u)
    seen, stack = {target}, [target]
    while stack:
        for u in rev.get(stack.pop(), ()):
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen


def validate(g: PipelineGraph) -> list[str]:
    """Every structural invariant ``g`` violates, as readable strings."""
    problems: list[str] = []
    ids = [i for i, _ in g.nodes]
    id_set = set(ids)
    if not ids:
        return ["pipeline has no nodes"]
    if len(id_set) != len(ids):
        problems.append("duplicate node ids")
    if g.root not in id_set:
        problems.append(f"root {g.root} is not a node")
    dangling = [e for e in g.edges if e[0] not in id_set or e[1] not in id_set]
    if dangling:
        problems.append(f"edges reference unknown nodes: {sorted(dangling)}")
    edges = [e for e in g.edges if e not in dangling]
    if any(u == v for u, v in edges):
        problems.append("self-loop")
    if _topological_order(id_set, edges) is None:
        problems.append("graph contains a cycle")
    if any(u == g.root for u, _ in edges):
        problems.append("root has outgoing edge")
    for i, spec in g.nodes:
        problems.extend(spec.violations())
        if i == g.root and not learners.is_classifier(spec.method):
            problems.append(f"root node {i} holds non-classifier {spec.method}")
        if i != g.root and learners.is_classifier(spec.method):
            problems.append(f"non-root node {i} holds classifier {spec.method}")
    if g.root in id_set:
        orphans = sorted(id_set - _ancestors_of(edges, g.root))
        if orphans:
            problems.append(f"nodes without a path to the root: {orphans}")
    return problems


# --------------------------------------------------------------------------
# generation and variation
# --------------------------------------------------------------------------

def _random_transformer(rng: np.random.Generator, exclude: str | None = None) -> LearnerSpec:
    pool = [m for m in TRANSFORMERS if m != exclude]
    return learners.sample_spec(pool[int(rng.integers(len(pool)))], rng)


def _random_classifier(rng: np.random.Generator, exclude: str | None = None) -> LearnerSpec:
    pool = [m for m in CLASSIFIERS if m != exclude]
    return learners.sample_spec(pool[int(rng.integers(len(pool)))], rng)


def random_pipeline(max_nodes: int, rng: np.random.Generator) -> PipelineGraph:
    """Sample a valid pipeline with a node count uniform on ``1..max_nodes``.

    Node 0 is the classifier root; node ``i`` feeds a uniformly chosen
    earlier node, which keeps the graph acyclic and root-connected. Each
    remaining ordered pair (source not the root) then gains an extra edge
    with probability 0.1 when that keeps the graph acyclic.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    m = int(rng.integers(1, max_nodes + 1))
    nodes = [(0, _random_classifier(rng))]
    edges: set[tuple[int, int]] = set()
    for i in range(1, m):
        nodes.append((i, _random_transformer(rng)))
        edges.add((i, int(rng.integers(i))))
    for u in range(1, m):
        for v in range(m):
            if u == v or (u, v) in edges or (v, u) in edges:
                continue
            if rng.random() < EXTRA_EDGE_PROBABILITY and not _reaches(edges, v, u):
                edges.add((u, v))
    return PipelineGraph(tuple(nodes), frozenset(edges), 0)


def _replace_method(g, rng):
    i, spec = g.nodes[int(rng.integers(g.size))]
    new = _random_classifier(rng, spec.method) if i == g.root else _random_transformer(rng, spec.method)
    return g.with_changes(nodes=[(j, new if j == i else s) for j, s in g.nodes])


def _resample_hyperparameter(g, rng):
    tunable = [(i, s) for i, s in g.nodes if s.hyperparameters]
    if not tunable:
        return None
    i, spec = tunable[int(rng.integers(len(tunable)))]
    keys = sorted(spec.hyperparameters)
    key = keys[int(rng.integers(len(keys)))]
    domain = [v for v in learners.HYPERPARAMETER_SPACE[spec.method][key] if v != spec.hyperparameters[key]]
    hp = dict(spec.hyperparameters)
    hp[key] = domain[int(rng.integers(len(domain)))]
    new = LearnerSpec(spec.method, hp)
    return g.with_changes(nodes=[(j, new if j == i else s) for j, s in g.nodes])


def _insert_node(g, rng, max_nodes):
    if max_nodes is not None and g.size >= max_nodes:
        return None
    new_id = max(g.ids) + 1
    spec = _random_transformer(rng)
    nodes = list(g.nodes) + [(new_id, spec)]
    edges = set(g.edges)
    if rng.random() < 0.5:
        if not edges:
            return None
        # splice onto an existing edge
        u, v = sorted(edges)[int(rng.integers(len(edges)))]
        edges.discard((u, v))
        edges.update({(u, new_id), (new_id, v)})
    else:
        # the root is only a target while it is the sole node
        targets = [i for i in g.ids if i != g.root] or [g.root]
        target = targets[int(rng.integers(len(targets)))]
        edges.add((new_id, target))
    return g.with_changes(nodes=nodes, edges=edges)


def _delete_node(g, rng):
    candidates = [i for i in g.ids if i != g.root]
    if not candidates:
        return None
    victim = candidates[int(rng.integers(len(candidates)))]
    preds, succs = g.predecessors(victim), g.successors(victim)
    edges = {(u, v) for u, v in g.edges if victim not in (u, v)}
    edges.update((p, s) for p in preds for s in succs)
    return g.with_changes(nodes=[(i, s) for i, s in g.nodes if i != victim], edges=edges)


def _add_edge(g, rng):
    candidates = [
        (u, v)
        for u in g.ids
        for v in g.ids
        if u != v and u != g.root and (u, v) not in g.edges and not _reaches(g.edges, v, u)
    ]
    if not candidates:
        return None
    return g.with_changes(edges=set(g.edges) | {candidates[int(rng.integers(len(candidates)))]})


def _remove_edge(g, rng):
    edges = sorted(g.edges)
    if not edges:
        return None
    e = edges[int(rng.integers(len(edges)))]
    remaining = set(g.edges) - {e}
    if len(_ancestors_of(remaining, g.root)) != g.size:
        return None
    return g.with_changes(edges=remaining)


def mutate(
    g: PipelineGraph,
    rng: np.random.Generator,
    *,
    max_nodes: int | None = None,
    operator: str | None = None,
) -> PipelineGraph:
    """Apply one uniformly drawn mutation operator.

    When the drawn operator cannot yield a valid graph the input object is
    returned unchanged. ``max_nodes`` caps growth through ``insert_node``;
    ``operator`` forces a specific operator instead of drawing one.
    """
    if operator is None:
        operator = MUTATION_OPERATORS[int(rng.integers(len(MUTATION_OPERATORS)))]
    if operator == "replace_method":
        out = _replace_method(g, rng)
    elif operator == "resample_hyperparameter":
        out = _resample_hyperparameter(g, rng)
    elif operator == "insert_node":
        out = _insert_node(g, rng, max_nodes)
    elif operator == "delete_node":
        out = _delete_node(g, rng)
    elif operator == "add_edge":
        out = _add_edge(g, rng)
    elif operator == "remove_edge":
        out = _remove_edge(g, rng)
    else:
        raise ValueError(f"unknown mutation operator {operator!r}")
    if out is None or validate(out):
        return g
    return out


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------

def _check_deadline(deadline: float | None) -> None:
    if deadline is not None and time.perf_counter() >= deadline:
        raise EvaluationTimeout("evaluation time limit exceeded")


def _node_input(g: PipelineGraph, node: int, X: np.ndarray, outputs: dict[int, np.ndarray]) -> np.ndarray:
    preds = g.predecessors(node)
    if not preds:
        return X
    return np.hstack([outputs[p] for p in preds])


def fit_pipeline(
    g: PipelineGraph,
    X,
    y,
    *,
    deadline: float | None = None,
    counter: FitCounter | None = None,
) -> FittedPipeline:
    """Fit every node in topological order (ties by node id).

    ``deadline`` is a ``time.perf_counter()`` value checked before each node
    fit; ``counter`` receives one increment per attempted node fit.
    """
    problems = validate(g)
    if problems:
        raise PipelineError("invalid pipeline: " + "; ".join(problems))
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    order = _topological_order(g.ids, g.edges)
    models: dict[int, FittedModel] = {}
    outputs: dict[int, np.ndarray] = {}
    for node in order:
        _check_deadline(deadline)
        inputs = _node_input(g, node, X, outputs)
        if counter is not None:
            counter.increment()
        model = learners.fit(g.spec(node), inputs, y)
        models[node] = model
        if node != g.root:
            out = learners.apply(model, inputs)
            if not np.all(np.isfinite(out)):
                raise PipelineError(f"node {node} ({model.spec.method}) produced non-finite output")
            outputs[node] = out
    complexity = sum(m.param_count for m in models.values())
    return FittedPipeline(g, models, tuple(order), int(complexity))


def predict_pipeline(fp: FittedPipeline, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise PipelineError(f"expected a 2-D matrix, got shape {X.shape}")
    g = fp.graph
    outputs: dict[int, np.ndarray] = {}
    for node in fp.order:
        inputs = _node_input(g, node, X, outputs)
        result = learners.apply(fp.models[node], inputs)
        if node == g.root:
            return result
        outputs[node] = result
    raise PipelineError("root was not reached")  # pragma: no cover
