"""Default cascades on realized networks.

A vertex defaults once the total impact received from defaulted debtors
reaches its capital; defaulted debtors repay nothing. Vertices with capital 0
are in default from the start. Because losses only accumulate, the final
default set does not depend on the order in which defaults are processed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph


@dataclass(frozen=True)
class CascadeResult:
    defaulted: np.ndarray  # bool per vertex
    fraction: float
    per_type_fraction: np.ndarray  # defaulted of type b, divided by n
    importance_mass: float  # sum of importance over defaulted vertices, divided by n
    rounds: int
    default_round: np.ndarray  # round in which each vertex defaulted, -1 if never

    @property
    def count(self) -> int:
        return int(self.defaulted.sum())


def _result(graph: Graph, T: int, default_round: np.ndarray) -> CascadeResult:
    pop = graph.population
    defaulted = default_round >= 0
    n = pop.n
    per_type = np.bincount(pop.vtype[defaulted], minlength=T)[:T] / n
    rounds = int(default_round.max(initial=-1)) if defaulted.any() else 0
    return CascadeResult(
        defaulted=defaulted,
        fraction=float(defaulted.sum()) / n,
        per_type_fraction=per_type.astype(float),
        importance_mass=float(pop.importance[defaulted].sum()) / n,
        rounds=max(rounds, 0),
        default_round=default_round,
    )


def _types(graph: Graph, T: int | None) -> int:
    return int(graph.population.vtype.max(initial=-1)) + 1 if T is None else T


def _edge_slots(indptr: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Indices of all out-edges of ``vertices`` in the CSR arrays."""
    starts = indptr[vertices]
    lengths = indptr[vertices + 1] - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.cumsum(lengths) - lengths
    return np.repeat(starts - offsets, lengths) + np.arange(total)


def run_cascade(graph: Graph, T: int | None = None) -> CascadeResult:
    """Final default set via a work queue of newly defaulted vertices.

    The queue is drained one breadth-first layer at a time: every vertex of
    the current layer passes its impacts to its creditors, and creditors whose
    received loss reaches their capital form the next layer. Each vertex
    enters the queue once, so the work is linear in the number of edges, and
    the layer index of a default is its round in the synchronous process.
    ``T`` sets the length of ``per_type_fraction`` (default: largest type seen).
    """
    pop = graph.population
    n = pop.n
    cap = pop.capital
    loss = np.zeros(n, dtype=np.int64)
    default_round = np.full(n, -1, dtype=np.int64)
    layer = np.flatnonzero(cap == 0)
    default_round[layer] = 0
    k = 0
    while layer.size:
        k += 1
        slots = _edge_slots(graph.indptr, layer)
        if slots.size == 0:
            break
        targets = graph.dst[slots]
        np.add.at(loss, targets, graph.weight[slots])
        hit = np.unique(targets)
        layer = hit[(default_round[hit] < 0) & (loss[hit] >= cap[hit])]
        default_round[layer] = k
    return _result(graph, _types(graph, T), default_round)


def run_cascade_rounds(graph: Graph, T: int | None = None) -> CascadeResult:
    """Literal round-by-round evaluation, rescanning every vertex each round.

    ``D_k`` is the set of vertices whose capital is at most the impact
    received from ``D_{k-1}``. Slow; intended as a reference implementation.
    """
    pop = graph.population
    n = pop.n
    cap = pop.capital
    default_round = np.where(cap == 0, 0, -1).astype(np.int64)
    current = default_round >= 0
    k = 0
    while True:
        k += 1
        loss = [0] * n
        for e in range(graph.num_edges):
            if current[graph.src[e]]:
                loss[int(graph.dst[e])] += int(graph.weight[e])
        nxt = np.array([cap[i] <= loss[i] for i in range(n)], dtype=bool) | current
        if np.array_equal(nxt, current):
            break
        default_round[nxt & ~current] = k
        current = nxt
    return _result(graph, _types(graph, T), default_round)
