"""Social learning network graphs and dataset construction.

A graph is the set of students in one course forum plus the undirected
interaction links observed between them. This module covers edge-list
ingestion and serialization, synthetic benchmark generation, the
two-snapshot construction that poses link prediction as a supervised
problem, and seeded splitting helpers.

Edge-list format: one ``u<sep>v`` pair per line where the separator is a
comma or whitespace, ``#`` starts a comment line, blank lines are
ignored. Node tokens are mapped to dense integer indices in first-seen
order. Isolated nodes are not representable in this format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TypeVar

import numpy as np

from .rng import derive_rng

__all__ = [
    "EdgeListError",
    "GraphError",
    "Pair",
    "SlnGraph",
    "SplitSpec",
    "TemporalPair",
    "generate_synthetic",
    "load_edge_list",
    "round_half_up",
    "sample_pair_universe",
    "temporal_split",
    "to_edge_list",
    "train_test_split",
]

Pair = tuple[int, int]
T = TypeVar("T")


class GraphError(ValueError):
    """Graph construction or validation failure."""


class EdgeListError(GraphError):
    """Malformed edge-list input; carries the offending line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def round_half_up(x: float) -> int:
    """Round a non-negative fractional count, halves going up."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SlnGraph:
    """Immutable undirected simple graph over dense node indices."""

    node_count: int
    adjacency: tuple[frozenset[int], ...]
    node_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.node_count < 0:
            raise GraphError("node_count must be non-negative")
        if len(self.adjacency) != self.node_count:
            raise GraphError("adjacency length does not match node_count")
        if self.node_labels is not None and len(self.node_labels) != self.node_count:
            raise GraphError("node_labels length does not match node_count")
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                if not 0 <= v < self.node_count:
                    raise GraphError(f"neighbor {v} of node {u} out of range")
                if v == u:
                    raise GraphError(f"self-loop at node {u}")
                if u not in self.adjacency[v]:
                    raise GraphError(f"asymmetric edge ({u}, {v})")

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[Pair],
        node_labels: Sequence[str] | None = None,
    ) -> "SlnGraph":
        adj: list[set[int]] = [set() for _ in range(node_count)]
        for u, v in edges:
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise GraphError(f"edge ({u}, {v}) out of range")
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            adj[u].add(v)
            adj[v].add(u)
        labels = tuple(node_labels) if node_labels is not None else None
        return cls(node_count, tuple(frozenset(s) for s in adj), labels)

    def neighbors(self, u: int) -> frozenset[int]:
        if not 0 <= u < self.node_count:
            raise GraphError(f"node {u} out of range")
        return self.adjacency[u]

    def degree(self, u: int) -> int:
        return len(self.neighbors(u))

    def has_edge(self, u: int, v: int) -> bool:
        if not 0 <= v < self.node_count:
            raise GraphError(f"node {v} out of range")
        return v in self.neighbors(u)

    def edges(self) -> list[Pair]:
        """All edges as (u, v) with u < v, sorted lexicographically."""
        out = []
        for u, nbrs in enumerate(self.adjacency):
            out.extend((u, v) for v in sorted(nbrs) if u < v)
        return out

    @property
    def edge_count(self) -> int:
        return sum(len(s) for s in self.adjacency) // 2


def load_edge_list(source: str | Iterable[str]) -> SlnGraph:
    """Parse edge-list text (a string or an iterable of lines)."""
    lines = source.splitlines() if isinstance(source, str) else source
    index: dict[str, int] = {}
    edges: list[Pair] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = [t.strip() for t in line.split(",")] if "," in line else line.split()
        if len(tokens) != 2 or not all(tokens):
            raise EdgeListError(f"expected 'u<sep>v', got {raw!r}", line_no)
        if tokens[0] == tokens[1]:
            raise EdgeListError(f"self-loop on {tokens[0]!r}", line_no)
        pair = []
        for tok in tokens:
            if tok not in index:
                index[tok] = len(index)
            pair.append(index[tok])
        edges.append((pair[0], pair[1]))
    labels = tuple(index) if index else None
    return SlnGraph.from_edges(len(index), edges, labels)


def to_edge_list(graph: SlnGraph) -> str:
    """Serialize as sorted ``u,v`` lines over dense indices."""
    lines = [f"{u},{v}" for u, v in graph.edges()]
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class SplitSpec:
    """Knobs for the temporal construction and the train/test split."""

    removal_fraction: float = 0.2
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.removal_fraction <= 1.0:
            raise GraphError("removal_fraction must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise GraphError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TemporalPair:
    """Graph at time t (graph_now) plus the earlier snapshot derived from it.

    graph_prev is graph_now with the links among the selected removed_pairs
    deleted; features are computed on graph_prev, labels read off graph_now.
    """

    graph_prev: SlnGraph
    graph_now: SlnGraph
    pair_universe: tuple[Pair, ...]
    removed_pairs: tuple[Pair, ...]

    def __post_init__(self):
        if self.graph_prev.node_count != self.graph_now.node_count:
            raise GraphError("snapshots must share the node set")
        now_edges = set(self.graph_now.edges())
        prev_edges = set(self.graph_prev.edges())
        if not prev_edges <= now_edges:
            raise GraphError("graph_prev has edges absent from graph_now")
        universe = set(self.pair_universe)
        if not set(self.removed_pairs) <= universe:
            raise GraphError("removed pairs must come from the pair universe")
        for u, v in self.removed_pairs:
            if self.graph_prev.has_edge(u, v):
                raise GraphError(f"removed pair ({u}, {v}) still linked in graph_prev")


def _validate_pairs(graph: SlnGraph, pairs: Sequence[Pair]) -> None:
    seen = set()
    for u, v in pairs:
        if not (0 <= u < graph.node_count and 0 <= v < graph.node_count):
            raise GraphError(f"pair ({u}, {v}) out of range")
        if u >= v:
            raise GraphError(f"pair ({u}, {v}) must satisfy u < v")
        if (u, v) in seen:
            raise GraphError(f"duplicate pair ({u}, {v})")
        seen.add((u, v))


def temporal_split(
    graph_now: SlnGraph, pair_universe: Sequence[Pair], spec: SplitSpec
) -> TemporalPair:
    """Delete the links among a seeded selection of universe pairs.

    Selects round_half_up(removal_fraction * |universe|) pairs by seeded
    shuffle. Every selected pair is unlinked in graph_prev; all other
    edges of graph_now are preserved.
    """
    _validate_pairs(graph_now, pair_universe)
    universe = tuple(pair_universe)
    k = round_half_up(spec.removal_fraction * len(universe))
    order = derive_rng(spec.seed, "temporal-removal").permutation(len(universe))
    removed = tuple(universe[i] for i in order[:k])
    removed_set = set(removed)
    kept = [e for e in graph_now.edges() if e not in removed_set]
    graph_prev = SlnGraph.from_edges(graph_now.node_count, kept, graph_now.node_labels)
    return TemporalPair(graph_prev, graph_now, universe, removed)


def train_test_split(
    items: Sequence[T], train_fraction: float, seed: int
) -> tuple[list[T], list[T]]:
    """Seeded shuffle followed by a round-half-up prefix split."""
    if len(items) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = derive_rng(seed, "train-test").permutation(len(items))
    n_train = round_half_up(train_fraction * len(items))
    train = [items[i] for i in order[:n_train]]
    test = [items[i] for i in order[n_train:]]
    return train, test


def generate_synthetic(
    n_nodes: int,
    n_communities: int,
    intra_p: float,
    inter_p: float,
    seed: int,
) -> SlnGraph:
    """Stochastic block model with round-robin community assignment.

    Node i belongs to community i mod n_communities; each unordered pair
    is linked independently with intra_p inside a community and inter_p
    across communities. Requires 0 <= inter_p <= intra_p <= 1.
    """
    if n_nodes < 0:
        raise GraphError("n_nodes must be non-negative")
    if n_communities < 1:
        raise GraphError("n_communities must be at least 1")
    if not (0.0 <= inter_p <= intra_p <= 1.0):
        raise GraphError("need 0 <= inter_p <= intra_p <= 1")
    if n_nodes < 2:
        return SlnGraph.from_edges(n_nodes, [])
    communities = np.arange(n_nodes) % n_communities
    iu, iv = np.triu_indices(n_nodes, k=1)
    thresholds = np.where(communities[iu] == communities[iv], intra_p, inter_p)
    draws = derive_rng(seed, "sbm").random(len(iu))
    mask = draws < thresholds
    edges = list(zip(iu[mask].tolist(), iv[mask].tolist()))
    return SlnGraph.from_edges(n_nodes, edges)


def sample_pair_universe(
    graph: SlnGraph, negatives_per_positive: float, seed: int
) -> list[Pair]:
    """All linked pairs plus a seeded sample of unlinked pairs.

    The negative count is round_half_up(ratio * edge_count), drawn
    uniformly without replacement. Raises if fewer unlinked pairs exist.
    """
    if negatives_per_positive < 0:
        raise GraphError("negatives_per_positive must be non-negative")
    positives = graph.edges()
    n_neg = round_half_up(negatives_per_positive * len(positives))
    n = graph.node_count
    linked = np.zeros((n, n), dtype=bool)
    for u, v in positives:
        linked[u, v] = True
    iu, iv = np.triu_indices(n, k=1)
    open_idx = np.flatnonzero(~linked[iu, iv])
    if n_neg > len(open_idx):
        raise GraphError(
            f"requested {n_neg} negatives but only {len(open_idx)} unlinked pairs exist"
        )
    chosen = derive_rng(seed, "universe").choice(len(open_idx), size=n_neg, replace=False)
    sel = open_idx[chosen]
    negatives = sorted(zip(iu[sel].tolist(), iv[sel].tolist()))
    return positives + negatives
