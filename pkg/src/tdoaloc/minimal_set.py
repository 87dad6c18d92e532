"""Selection of minimal microphone-pair sets for consistent TDOA vectors.

A complete graph over microphones weighted by GCC peak reliabilities is
reduced to the maximum-total-reliability spanning tree (Prim), whose M-1
edges suffice to reconstruct every pairwise TDOA. Reference-microphone
baselines (random, centroid-nearest, reliability-maximin) are also provided.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .geometry import MicArray, TdoaVector


@dataclass(frozen=True)
class ReliabilityGraph:
    """Symmetric (M, M) reliability weights over a complete microphone graph."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be a square matrix")
        if not np.all(np.isfinite(w[~np.eye(w.shape[0], dtype=bool)])):
            raise ValueError("off-diagonal weights must be finite")
        if not np.array_equal(w, w.T):
            raise ValueError("weights must be symmetric")
        object.__setattr__(self, "weights", w)

    @property
    def n_vertices(self) -> int:
        return self.weights.shape[0]

    def weight(self, i: int, j: int) -> float:
        return float(self.weights[i, j])


def build_graph(reliabilities: Mapping[tuple[int, int], float], n_mics: int) -> ReliabilityGraph:
    """Assemble the complete graph from per-pair reliabilities.

    ``reliabilities`` must contain every unordered pair (i, j), 0-based, keyed
    either as (i, j) or (j, i).
    """
    w = np.zeros((n_mics, n_mics))
    for i in range(n_mics):
        for j in range(i + 1, n_mics):
            if (i, j) in reliabilities:
                r = reliabilities[(i, j)]
            elif (j, i) in reliabilities:
                r = reliabilities[(j, i)]
            else:
                raise ValueError(f"missing reliability for pair ({i}, {j})")
            w[i, j] = w[j, i] = r
    return ReliabilityGraph(w)


@dataclass(frozen=True)
class SpanningTree:
    """M-1 undirected edges, each stored as (min_vertex, max_vertex)."""

    edges: tuple[tuple[int, int], ...]
    n_vertices: int

    def __post_init__(self):
        if len(self.edges) != self.n_vertices - 1:
            raise ValueError("a spanning tree has exactly M-1 edges")

    def neighbors(self, v: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == v:
                out.append(b)
            elif b == v:
                out.append(a)
        return out

    def total_reliability(self, g: ReliabilityGraph) -> float:
        return float(sum(g.weight(a, b) for a, b in sorted(self.edges)))


def prim_mst(g: ReliabilityGraph) -> SpanningTree:
    """Spanning tree maximizing total reliability, grown from vertex 0.

    Equal-weight candidates resolve to the lexicographically smallest
    (min_vertex, max_vertex) edge so results are reproducible.
    """
    m = g.n_vertices
    if m < 2:
        raise ValueError("need at least two vertices")
    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    edges: list[tuple[int, int]] = []
    for _ in range(m - 1):
        best = None
        for u in np.flatnonzero(in_tree):
            for v in np.flatnonzero(~in_tree):
                cand = (-g.weights[u, v], min(u, v), max(u, v))
                if best is None or cand < best:
                    best = cand
                    best_uv = (int(min(u, v)), int(max(u, v))), int(v)
        edge, newcomer = best_uv
        edges.append(edge)
        in_tree[newcomer] = True
    return SpanningTree(tuple(edges), m)


@dataclass(frozen=True)
class EdgeStep:
    """One processing step of the ordered tree: the edge, its reliability, and
    which endpoint was already connected (``anchor`` is None for the first step)."""

    u: int
    v: int
    reliability: float
    anchor: int | None
    newcomer: int


@dataclass(frozen=True)
class EdgeOrder:
    """Tree edges in processing order: most reliable first, then always the most
    reliable edge touching the already-processed vertex set."""

    steps: tuple[EdgeStep, ...]

    @property
    def reliabilities(self) -> np.ndarray:
        return np.array([s.reliability for s in self.steps])

    @property
    def vertex_rows(self) -> np.ndarray:
        """(M-1, 2) vertex pairs; each row lists the higher vertex index first."""
        return np.array([[s.u, s.v] for s in self.steps], dtype=int)


def order_edges(t: SpanningTree, g: ReliabilityGraph) -> EdgeOrder:
    """Order the tree edges for incremental processing.

    The first step takes the globally most reliable tree edge; every later step
    takes the most reliable remaining edge with exactly one endpoint among the
    vertices processed so far. Ties resolve to the lexicographically smallest
    edge. Each row presents the higher vertex index first.
    """
    remaining = set(t.edges)
    processed: set[int] = set()
    steps: list[EdgeStep] = []
    while remaining:
        if not processed:
            candidates = remaining
        else:
            candidates = {e for e in remaining if (e[0] in processed) != (e[1] in processed)}
        edge = min(candidates, key=lambda e: (-g.weight(*e), e))
        remaining.discard(edge)
        a, b = edge
        if not processed:
            anchor = None
            newcomer = max(a, b)
            processed.update(edge)
        else:
            anchor, newcomer = (a, b) if a in processed else (b, a)
            processed.add(newcomer)
        steps.append(
            EdgeStep(max(a, b), min(a, b), g.weight(a, b), anchor, newcomer)
        )
    return EdgeOrder(tuple(steps))


def select_ref_arbitrary(n_mics: int, seed) -> int:
    """Uniformly random reference microphone, reproducible per seed."""
    if n_mics < 2:
        raise ValueError("need at least two microphones")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return int(rng.integers(0, n_mics))


def select_ref_centroid(array: MicArray) -> int:
    """Microphone closest to the array centroid; ties go to the lowest index."""
    d = np.linalg.norm(array.positions - array.centroid(), axis=1)
    return int(np.argmin(d))


def select_ref_reliability(g: ReliabilityGraph) -> int:
    """Microphone whose weakest link to any other microphone is strongest.

    Maximizes over m the minimum reliability between m and all other mics;
    ties go to the lowest index.
    """
    w = g.weights.copy()
    np.fill_diagonal(w, np.inf)
    return int(np.argmax(w.min(axis=1)))


def rewrite_to_reference(
    t: SpanningTree,
    edge_tdoas: Mapping[tuple[int, int], float],
    ref: int,
) -> TdoaVector:
    """Accumulate tree-edge TDOAs into a vector relative to ``ref``.

    ``edge_tdoas[(u, v)]`` is the signed TDOA of u relative to v; either
    orientation of each tree edge may be supplied.
    """
    m = t.n_vertices
    taus = np.full(m, np.nan)
    taus[ref] = 0.0
    stack = [ref]
    while stack:
        cur = stack.pop()
        for nb in t.neighbors(cur):
            if not np.isnan(taus[nb]):
                continue
            if (nb, cur) in edge_tdoas:
                t_nb_cur = edge_tdoas[(nb, cur)]
            elif (cur, nb) in edge_tdoas:
                t_nb_cur = -edge_tdoas[(cur, nb)]
            else:
                raise ValueError(f"missing TDOA for tree edge ({cur}, {nb})")
            taus[nb] = t_nb_cur + taus[cur]
            stack.append(nb)
    if np.isnan(taus).any():
        raise ValueError("tree does not connect all microphones")
    return TdoaVector(ref, taus)


def write_edge_csv(g: ReliabilityGraph, t: SpanningTree, path) -> None:
    """Debug export of the full graph with MST membership, 1-based indices."""
    tree_edges = set(t.edges)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "reliability", "in_mst"])
        for i in range(g.n_vertices):
            for j in range(i + 1, g.n_vertices):
                w.writerow([i + 1, j + 1, f"{g.weight(i, j):.9g}", int((i, j) in tree_edges)])
