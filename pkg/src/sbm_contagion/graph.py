"""Finite networks drawn from a model specification.

A :class:`Population` fixes, for ``n`` vertices, which atom each vertex was
drawn from and its realized capital. :func:`sample_graph` then adds directed
edges: vertex ``i`` points at vertex ``j`` with impact ``r`` with probability

    p^r_{ij} = min(1/R, w_i^{+,r,type(j)} * w_j^{-,r,type(i)} / n),

the impacts being mutually exclusive for one ordered pair. An edge ``i -> j``
with impact ``r`` means that ``j`` loses ``r`` units of capital when ``i``
defaults.

Random streams
--------------
Every draw uses a Philox generator seeded by ``SeedSequence([seed, tag, ...])``:
tag 0 assigns atoms (iid mode only), tag 1 realizes shocks, and tag 2 with
the ordered atom pair ``(a, b)`` samples the edges from atom ``a`` to atom
``b``. Streams never overlap, so the output is independent of the order in
which class pairs are processed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .model import ModelSpec

DETERMINISTIC = "deterministic_rounding"
IID = "iid_sample"
MODES = (DETERMINISTIC, IID)

_TAG_ASSIGN = 0
_TAG_SHOCK = 1
_TAG_EDGES = 2


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass(frozen=True)
class Population:
    n: int
    assignment: np.ndarray  # atom index per vertex
    capital: np.ndarray  # realized capital per vertex (float, may be inf)
    importance: np.ndarray
    vtype: np.ndarray  # 0-based type per vertex

    def members(self, atom: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == atom)

    @property
    def initially_defaulted(self) -> np.ndarray:
        return self.capital == 0


def apportion(probs, n: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` items to ``probs``.

    Ties in the fractional part are broken by position, so the result is a
    deterministic function of its inputs.
    """
    probs = np.asarray(probs, dtype=float)
    exact = probs * n
    counts = np.floor(exact).astype(np.int64)
    left = int(n - counts.sum())
    if left > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:left]] += 1
    return counts


def realize_population(spec: ModelSpec, n: int, mode: str = DETERMINISTIC, seed: int = 0) -> Population:
    """Assign ``n`` vertices to atoms and realize the per-vertex shocks.

    Deterministic rounding lays the atoms out in contiguous blocks with
    apportioned sizes; iid mode draws each vertex's atom independently. A
    solvent vertex is then shocked (capital set to 0) with its atom's
    ``shock_prob``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    probs = spec.probs
    if mode == DETERMINISTIC:
        assignment = np.repeat(np.arange(len(probs)), apportion(probs, n))
    elif mode == IID:
        assignment = stream(seed, _TAG_ASSIGN).choice(len(probs), size=n, p=probs / probs.sum())
    else:
        raise ValueError(f"unknown population mode {mode!r}; expected one of {MODES}")
    capital = spec.capitals[assignment].astype(float)
    shock = np.array([a.shock_prob for a in spec.atoms])[assignment]
    hit = stream(seed, _TAG_SHOCK).random(n) < shock
    capital[hit & (capital > 0)] = 0.0
    return Population(
        n=n,
        assignment=assignment,
        capital=capital,
        importance=spec.importances[assignment],
        vtype=spec.vtypes[assignment],
    )


@dataclass(frozen=True)
class Graph:
    """Directed multi-impact graph in compressed sparse row form, sorted by ``(src, dst)``."""

    population: Population
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray  # impact r in 1..R
    indptr: np.ndarray

    @property
    def n(self) -> int:
        return self.population.n

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    def out_edges(self, i: int) -> list:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return list(zip(self.dst[lo:hi].tolist(), self.weight[lo:hi].tolist()))

    @classmethod
    def from_edges(cls, population: Population, src, dst, weight) -> "Graph":
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.int64)
        order = np.lexsort((dst, src))
        src, dst, weight = src[order], dst[order], weight[order]
        indptr = np.zeros(population.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=population.n), out=indptr[1:])
        return cls(population, src, dst, weight, indptr)


def pair_probabilities(spec: ModelSpec, n: int, a: int, b: int) -> np.ndarray:
    """``p^r`` for an edge from a vertex of atom ``a`` to a vertex of atom ``b``."""
    src, dst = spec.atoms[a], spec.atoms[b]
    raw = src.out_weights[:, dst.vtype - 1] * dst.in_weights[:, src.vtype - 1] / n
    return np.minimum(1.0 / spec.R, raw)


def _skip_positions(rng: np.random.Generator, q: float, total: int) -> np.ndarray:
    """Positions in ``range(total)`` kept independently with probability ``q``.

    Draws geometric gaps between successes, so the cost is proportional to the
    number of kept positions rather than to ``total``.
    """
    if total <= 0 or q <= 0.0:
        return np.empty(0, dtype=np.int64)
    if q >= 1.0:
        return np.arange(total, dtype=np.int64)
    chunks = []
    last = -1
    while True:
        mean = q * (total - last - 1)
        size = int(mean + 6.0 * np.sqrt(mean) + 16)
        pos = last + np.cumsum(rng.geometric(q, size=size))
        inside = pos[pos < total]
        chunks.append(inside)
        if inside.size < pos.size:
            break
        last = int(pos[-1])
    return np.concatenate(chunks)


def sample_graph(pop: Population, spec: ModelSpec, seed: int = 0) -> Graph:
    """Sample the random edges of a network on ``pop``.

    Edge probabilities depend only on the atoms of the two endpoints, so each
    ordered atom pair is handled as one block: the kept (source, target) pairs
    of the block's lattice are found by geometric skipping with the total
    probability ``q = sum_r p^r``, and each kept pair receives impact ``r``
    with probability ``p^r / q``. Self-pairs are removed from the lattice of
    a diagonal block by re-indexing, not by rejection.
    """
    n = pop.n
    members = [pop.members(a) for a in range(len(spec.atoms))]
    srcs, dsts, ws = [], [], []
    for a, ma in enumerate(members):
        if ma.size == 0:
            continue
        for b, mb in enumerate(members):
            if mb.size == 0:
                continue
            p = pair_probabilities(spec, n, a, b)
            q = float(p.sum())
            if q <= 0.0:
                continue
            rng = stream(seed, _TAG_EDGES, a, b)
            cols = mb.size - 1 if a == b else mb.size
            if cols <= 0:
                continue
            pos = _skip_positions(rng, min(q, 1.0), ma.size * cols)
            if pos.size == 0:
                continue
            ii, jj = np.divmod(pos, cols)
            if a == b:
                jj = jj + (jj >= ii)
            r = rng.choice(spec.R, size=pos.size, p=p / q) + 1 if spec.R > 1 else np.ones(pos.size, dtype=np.int64)
            srcs.append(ma[ii])
            dsts.append(mb[jj])
            ws.append(r)
    if srcs:
        return Graph.from_edges(pop, np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ws))
    empty = np.empty(0, dtype=np.int64)
    return Graph.from_edges(pop, empty, empty, empty)


# -- degrees ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DegreeSummary:
    """Per-vertex degree counts split by impact and counterparty type.

    ``out_deg[v, r, a]`` counts edges ``v -> u`` with impact ``r + 1`` and
    ``type(u) == a``; ``in_deg`` likewise for edges ``u -> v``.
    """

    vtype: np.ndarray
    out_deg: np.ndarray
    in_deg: np.ndarray

    def histogram(self, direction: str, r: int, alpha: int, beta: int) -> np.ndarray:
        """Counts of degree ``k`` among type-``beta`` vertices (all indices 1-based)."""
        deg = self.out_deg if direction == "out" else self.in_deg
        values = deg[self.vtype == beta - 1, r - 1, alpha - 1]
        return np.bincount(values, minlength=1)


def degree_summary(graph: Graph, R: int, T: int) -> DegreeSummary:
    pop = graph.population
    n = pop.n
    out_deg = np.zeros((n, R, T), dtype=np.int64)
    in_deg = np.zeros((n, R, T), dtype=np.int64)
    r = graph.weight - 1
    np.add.at(out_deg, (graph.src, r, pop.vtype[graph.dst]), 1)
    np.add.at(in_deg, (graph.dst, r, pop.vtype[graph.src]), 1)
    return DegreeSummary(pop.vtype, out_deg, in_deg)


def limit_degree_pmf(spec: ModelSpec, direction: str, r: int, alpha: int, beta: int, kmax: int) -> np.ndarray:
    """Limiting law of a type-``beta`` vertex's ``r``-degree toward type ``alpha`` (1-based).

    A mixture over the atoms of type ``beta`` of Poisson laws with mean
    ``w^{+,r,alpha} E[W^{-,r,beta} 1{A=alpha}]`` (out) resp.
    ``w^{-,r,alpha} E[W^{+,r,beta} 1{A=alpha}]`` (in). Returns ``P(D = k)``
    for ``k < kmax`` and the tail ``P(D >= kmax)`` in the last slot.
    """
    probs, vt = spec.probs, spec.vtypes
    own, other = (spec.out_w, spec.in_w) if direction == "out" else (spec.in_w, spec.out_w)
    partner_mass = float(np.sum(probs[vt == alpha - 1] * other[vt == alpha - 1, r - 1, beta - 1]))
    sel = vt == beta - 1
    weights = probs[sel] / probs[sel].sum()
    means = own[sel, r - 1, alpha - 1] * partner_mass
    k = np.arange(kmax)
    body = np.sum(weights[:, None] * stats.poisson.pmf(k[None, :], means[:, None]), axis=0)
    return np.append(body, max(0.0, 1.0 - body.sum()))


# -- dumps ------------------------------------------------------------------------------


def write_edges(graph: Graph, path, header=()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["src", "dst", "r"])
        w.writerows(zip(graph.src.tolist(), graph.dst.tolist(), graph.weight.tolist()))


def write_vertices(pop: Population, path, header=()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["id", "atom", "capital", "importance"])
        for i in range(pop.n):
            cap = pop.capital[i]
            w.writerow([i, int(pop.assignment[i]), "inf" if np.isinf(cap) else int(cap), repr(float(pop.importance[i]))])
