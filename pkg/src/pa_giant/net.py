"""Finite preferential attachment networks and their component structure.

Construction: vertices arrive one at a time; the newcomer n+1 connects to
each existing vertex M independently with probability f(indegree of M)/n.
Two generation modes produce the same distribution:

* ``naive``: one Bernoulli draw per old vertex per step,
* ``degree_class``: vertices are bucketed by indegree; per bucket one
  Binomial draw plus a uniform subset selection (swap-remove bookkeeping),
  so a step costs O(#distinct indegrees + #new edges).

All randomness flows through named streams derived from (seed, step).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .rules import rule_from_json


def derive_rng(seed, *path):
    """Deterministic named stream: a Generator keyed by (seed, *path)."""
    key = tuple(_to_int(x) for x in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def _to_int(x):
    if isinstance(x, (int, np.integer)):
        return int(x) & 0xFFFFFFFF
    # stable string hashing (crc-free: fold utf-8 bytes)
    h = 2166136261
    for b in str(x).encode():
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Edge list with child > parent, vertices labelled 1..n_vertices."""

    n_vertices: int
    child: np.ndarray
    parent: np.ndarray
    indegrees: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_edges(self):
        return len(self.child)

    def check_invariants(self):
        """Exact structural checks; raises AssertionError on violation."""
        assert len(self.child) == len(self.parent)
        if self.n_edges:
            assert self.child.min() >= 2 and self.child.max() <= self.n_vertices
            assert self.parent.min() >= 1
            assert (self.child > self.parent).all(), "edges must point young -> old"
            pairs = set(zip(self.child.tolist(), self.parent.tolist()))
            assert len(pairs) == self.n_edges, "duplicate edge"
        deg = np.bincount(self.parent - 1, minlength=self.n_vertices) \
            if self.n_edges else np.zeros(self.n_vertices, dtype=np.int64)
        assert (deg == self.indegrees).all(), "indegrees inconsistent with edges"

    def dump(self, csv_path, meta_path):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["child", "parent"])
            for c, p in zip(self.child.tolist(), self.parent.tolist()):
                w.writerow([c, p])
        with open(meta_path, "w") as fh:
            json.dump({"n_vertices": self.n_vertices, **self.meta},
                      fh, indent=1, sort_keys=True)

    @staticmethod
    def load(csv_path, meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        n = meta.pop("n_vertices")
        child, parent = [], []
        with open(csv_path) as fh:
            r = csv.reader(fh)
            header = next(r)
            if header != ["child", "parent"]:
                raise ParameterError(f"unexpected graph schema: {header}")
            for row in r:
                child.append(int(row[0]))
                parent.append(int(row[1]))
        child = np.array(child, dtype=np.int64)
        parent = np.array(parent, dtype=np.int64)
        deg = np.bincount(parent - 1, minlength=n) if len(parent) else \
            np.zeros(n, dtype=np.int64)
        return Graph(n, child, parent, deg.astype(np.int64), meta)


_EDGE_BUDGET_FACTOR = 64     # overflow guard: |E| <= factor * N is ample


def generate(rule, n_vertices, seed, mode="degree_class"):
    """Grow a network of ``n_vertices`` vertices under the given rule.

    The per-step connection probability for an old vertex with indegree k is
    f(k)/n where n is the current vertex count; f(0) <= 1 and bounded
    increments keep every probability <= 1.
    """
    if n_vertices < 1:
        raise ParameterError(f"n_vertices={n_vertices} must be >= 1")
    if mode not in ("naive", "degree_class"):
        raise ParameterError(f"unknown generation mode: {mode!r}")
    if mode == "naive":
        child, parent, indeg = _generate_naive(rule, n_vertices, seed)
    else:
        child, parent, indeg = _generate_degree_class(rule, n_vertices, seed)
    g = Graph(n_vertices, child, parent, indeg,
              meta={"rule": rule.to_json(), "seed": int(seed), "mode": mode})
    return g


def _step_probability(fval, n):
    """Shared denominator helper: connection probability at vertex count n."""
    return fval / n


def _generate_naive(rule, n_vertices, seed):
    children, parents = [], []
    indeg = np.zeros(n_vertices, dtype=np.int64)
    # cached f values per indegree, extended on demand
    fcache = rule.eval_array(np.arange(64))
    budget = _EDGE_BUDGET_FACTOR * n_vertices
    for n in range(1, n_vertices):
        rng = derive_rng(seed, n)
        newcomer = n + 1
        cur = indeg[:n]
        if cur.max(initial=0) + 1 >= len(fcache):
            fcache = rule.eval_array(np.arange(2 * (cur.max() + 2)))
        probs = _step_probability(fcache[cur], n)
        hits = np.nonzero(rng.uniform(size=n) < probs)[0]
        for m in hits:
            children.append(newcomer)
            parents.append(m + 1)
        indeg[hits] += 1
        if len(children) > budget:
            raise ParameterError(f"edge budget exceeded: {len(children)} edges")
    return (np.array(children, dtype=np.int64),
            np.array(parents, dtype=np.int64), indeg)


def _generate_degree_class(rule, n_vertices, seed):
    children, parents = [], []
    indeg = np.zeros(n_vertices, dtype=np.int64)
    classes = {0: [1]}          # indegree -> member vertices (1-based labels)
    fcache = {0: rule.eval(0)}
    budget = _EDGE_BUDGET_FACTOR * n_vertices
    for n in range(1, n_vertices):
        rng = derive_rng(seed, n)
        newcomer = n + 1
        # process classes top-down: movers go k -> k+1 and are never re-drawn
        for k in sorted(classes, reverse=True):
            members = classes[k]
            c = len(members)
            if c == 0:
                continue
            p = _step_probability(fcache[k], n)
            m = int(rng.binomial(c, min(p, 1.0)))
            if m == 0:
                continue
            # swap selected members to the tail, then detach them
            for i in range(m):
                j = int(rng.integers(0, c - i))
                members[j], members[c - 1 - i] = members[c - 1 - i], members[j]
            chosen = members[c - m:]
            del members[c - m:]
            up = classes.setdefault(k + 1, [])
            if k + 1 not in fcache:
                fcache[k + 1] = rule.eval(k + 1)
            for v in chosen:
                children.append(newcomer)
                parents.append(v)
                indeg[v - 1] += 1
                up.append(v)
        classes[0].append(newcomer)
        if len(children) > budget:
            raise ParameterError(f"edge budget exceeded: {len(children)} edges")
    return (np.array(children, dtype=np.int64),
            np.array(parents, dtype=np.int64), indeg)


def percolate(graph, p, seed):
    """Keep each edge independently with probability p; indegrees recomputed.

    Coupled in p: for a fixed seed the kept-edge sets are nested as p grows.
    """
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"retention probability p={p} must lie in [0, 1]")
    rng = derive_rng(seed, "percolate")
    keep = rng.uniform(size=graph.n_edges) < p
    child = graph.child[keep]
    parent = graph.parent[keep]
    indeg = (np.bincount(parent - 1, minlength=graph.n_vertices).astype(np.int64)
             if len(parent) else np.zeros(graph.n_vertices, dtype=np.int64))
    meta = dict(graph.meta)
    meta.update({"percolation_p": float(p), "percolation_seed": int(seed)})
    return Graph(graph.n_vertices, child, parent, indeg, meta)


# ---------------------------------------------------------------------------
# components
# ---------------------------------------------------------------------------

class UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by size."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass
class ComponentStats:
    component_sizes: np.ndarray        # descending
    largest: int
    second_largest: int
    size_histogram: dict               # size -> fraction of vertices

    @property
    def n_components(self):
        return len(self.component_sizes)


def components(graph) -> ComponentStats:
    """Connected components of the undirected version of the graph."""
    uf = UnionFind(graph.n_vertices)
    for c, p in zip(graph.child.tolist(), graph.parent.tolist()):
        uf.union(c - 1, p - 1)
    roots = np.fromiter((uf.find(v) for v in range(graph.n_vertices)),
                        dtype=np.int64, count=graph.n_vertices)
    _, sizes = np.unique(roots, return_counts=True)
    sizes = np.sort(sizes)[::-1]
    hist = {}
    n = graph.n_vertices
    for s, cnt in zip(*np.unique(sizes, return_counts=True)):
        hist[int(s)] = float(s * cnt / n)
    return ComponentStats(sizes, int(sizes[0]),
                          int(sizes[1]) if len(sizes) > 1 else 0, hist)


def components_bfs(graph) -> ComponentStats:
    """Brute-force BFS labelling; oracle for :func:`components` on small graphs."""
    n = graph.n_vertices
    adj = [[] for _ in range(n)]
    for c, p in zip(graph.child.tolist(), graph.parent.tolist()):
        adj[c - 1].append(p - 1)
        adj[p - 1].append(c - 1)
    seen = [False] * n
    sizes = []
    for v in range(n):
        if seen[v]:
            continue
        stack = [v]
        seen[v] = True
        s = 0
        while stack:
            x = stack.pop()
            s += 1
            for y in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    stack.append(y)
        sizes.append(s)
    sizes = np.sort(np.array(sizes, dtype=np.int64))[::-1]
    hist = {}
    for s, cnt in zip(*np.unique(sizes, return_counts=True)):
        hist[int(s)] = float(s * cnt / n)
    return ComponentStats(sizes, int(sizes[0]),
                          int(sizes[1]) if len(sizes) > 1 else 0, hist)


# ---------------------------------------------------------------------------
# empirical distributions
# ---------------------------------------------------------------------------

def indegree_histogram(graph):
    """Map indegree -> fraction of vertices."""
    counts = np.bincount(graph.indegrees)
    n = graph.n_vertices
    return {int(k): float(c) / n for k, c in enumerate(counts) if c > 0}


def compare_mu(graph, rule, kmax):
    """Total-variation distance between the empirical indegrees and mu_k.

    TV = 1/2 sum_{k<=kmax} |emp_k - mu_k| + 1/2 |tail_emp - tail_mu|.
    """
    if kmax < 0:
        raise ParameterError("kmax must be >= 0")
    hist = indegree_histogram(graph)
    emp = np.array([hist.get(k, 0.0) for k in range(kmax + 1)])
    mu = rule.mu_vector(kmax)
    tv = 0.5 * np.abs(emp - mu).sum()
    tail_emp = 1.0 - emp.sum()
    tail_mu = 1.0 - mu.sum()
    return float(tv + 0.5 * abs(tail_emp - tail_mu))


def size_distribution(graph, kmax):
    """Map k -> fraction of vertices lying in components of size exactly k."""
    if kmax < 1:
        raise ParameterError("kmax must be >= 1")
    stats = components(graph)
    return {k: stats.size_histogram.get(k, 0.0) for k in range(1, kmax + 1)}
