"""Color-refinement expressivity lab.

Measures how much a one-dimensional Weisfeiler-Leman refinement can tell
nodes apart under three levers: richer initial features (fewer accidental
label collisions, probability a^-d for d independent features over an
alphabet of size a), refinement itself, and reading the same nodes through
several overlapping subgraphs at once.  The headline inequality: the
entropy of the combined multi-subgraph coloring is never below the best
single view, because the combined coloring refines each view's partition.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np


class GraphError(ValueError):
    """Malformed node ids, duplicate or self-looping edges."""


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected graph with a hashable initial label per node."""
    n: int
    edges: tuple   # ((u, v), ...) with u != v
    labels: tuple  # length n

    def __post_init__(self):
        if len(self.labels) != self.n:
            raise GraphError(f"{len(self.labels)} labels for {self.n} nodes")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) out of range")
            if u == v:
                raise GraphError(f"self-loop at {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)

    def adjacency(self) -> list:
        adj = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


def path_graph(n: int, labels=None) -> LabeledGraph:
    labels = tuple(labels) if labels is not None else ("x",) * n
    return LabeledGraph(n, tuple((i, i + 1) for i in range(n - 1)), labels)


def wl_refine(g: LabeledGraph, max_rounds: int | None = None):
    """Iterated (label, sorted neighbor labels) interning.

    Returns (colors, trace): dense integer colors in first-seen order and
    the class count after each round, starting with the initial labels.
    Stops when a round stops splitting classes; n rounds always suffice.
    """
    adj = g.adjacency()
    interned: dict = {}
    colors = [interned.setdefault(lab, len(interned)) for lab in g.labels]
    trace = [len(interned)]
    rounds = g.n if max_rounds is None else max_rounds
    for _ in range(rounds):
        table: dict = {}
        nxt = []
        for v in range(g.n):
            sig = (colors[v], tuple(sorted(colors[u] for u in adj[v])))
            nxt.append(table.setdefault(sig, len(table)))
        trace.append(len(table))
        stable = len(table) == trace[-2]
        colors = nxt
        if stable:
            break
    return tuple(colors), trace


def label_entropy(colors) -> float:
    """Shannon entropy of the class-size distribution, in bits."""
    counts = Counter(colors)
    total = sum(counts.values())
    if total == 0:
        raise GraphError("entropy of an empty coloring")
    return -sum((c / total) * math.log2(c / total) for c in counts.values())


def refines(fine, coarse) -> bool:
    """True iff equal fine colors imply equal coarse colors."""
    if len(fine) != len(coarse):
        raise GraphError(f"colorings of length {len(fine)} vs {len(coarse)}")
    image: dict = {}
    for f, c in zip(fine, coarse):
        if image.setdefault(f, c) != c:
            return False
    return True


# ---------------------------------------------------------------------------
# multi-subgraph views


def induced_subgraph(g: LabeledGraph, nodes) -> LabeledGraph:
    order = sorted(set(int(v) for v in nodes))
    if order and not (0 <= order[0] and order[-1] < g.n):
        raise GraphError(f"induced nodes out of range for n={g.n}")
    pos = {v: i for i, v in enumerate(order)}
    edges = tuple((pos[u], pos[v]) for u, v in g.edges if u in pos and v in pos)
    return LabeledGraph(len(order), edges, tuple(g.labels[v] for v in order))


def view_coloring(g: LabeledGraph, nodes) -> tuple:
    """Refine inside the induced subgraph; nodes outside get one shared
    sentinel color."""
    order = sorted(set(int(v) for v in nodes))
    sub = induced_subgraph(g, order)
    colors, _ = wl_refine(sub)
    pos = {v: i for i, v in enumerate(order)}
    return tuple(("in", colors[pos[v]]) if v in pos else ("out",)
                 for v in range(g.n))


def combined_coloring(g: LabeledGraph, family) -> tuple:
    """Tuple of every view's color per node; refines each single view."""
    if not family:
        raise GraphError("empty subgraph family")
    views = [view_coloring(g, member) for member in family]
    return tuple(zip(*views))


def h_single(g: LabeledGraph, family) -> float:
    return max(label_entropy(view_coloring(g, member)) for member in family)


def h_multi(g: LabeledGraph, family) -> float:
    return label_entropy(combined_coloring(g, family))


def complementary_bipartitions(n: int):
    """All (A, complement) splits with both sides non-empty, up to symmetry."""
    out = []
    nodes = list(range(n))
    for r in range(1, n // 2 + 1):
        for sub in itertools.combinations(nodes, r):
            rest = tuple(v for v in nodes if v not in sub)
            if 2 * len(sub) == n and sub > rest:
                continue  # its mirror was already produced
            out.append((sub, rest))
    return out


def all_graphs(n: int, labels=None):
    """Every simple graph on n nodes (edge subsets of the complete graph)."""
    pairs = list(itertools.combinations(range(n), 2))
    labels = tuple(labels) if labels is not None else ("x",) * n
    for bits in range(1 << len(pairs)):
        edges = tuple(p for i, p in enumerate(pairs) if bits >> i & 1)
        yield LabeledGraph(n, edges, labels)


def random_instance(rng: np.random.Generator, n: int = 10, p_edge: float = 0.3,
                    n_views: int = 3, alphabet: int = 2):
    """Random graph, random labels, random family (always includes the
    full node set)."""
    edges = tuple((u, v) for u, v in itertools.combinations(range(n), 2)
                  if rng.random() < p_edge)
    labels = tuple(int(x) for x in rng.integers(0, alphabet, size=n))
    g = LabeledGraph(n, edges, labels)
    family = [tuple(range(n))]
    for _ in range(n_views):
        size = int(rng.integers(1, n + 1))
        chosen = rng.choice(n, size=size, replace=False)
        family.append(tuple(int(v) for v in np.sort(chosen)))
    return g, family


def find_counterexample(trials: int, rng: np.random.Generator, n: int = 10,
                        tol: float = 1e-12):
    """Search for h_multi < h_single; returns the first hit or None."""
    for _ in range(trials):
        g, family = random_instance(rng, n)
        if h_multi(g, family) < h_single(g, family) - tol:
            return g, family
    return None


# ---------------------------------------------------------------------------
# label-collision model


def conflict_probability_exact(alphabet: int, d: int) -> float:
    """Chance two iid uniform d-feature labels coincide: alphabet**-d."""
    if alphabet < 1 or d < 0:
        raise GraphError(f"bad conflict model ({alphabet}, {d})")
    return float(alphabet) ** (-d)


def conflict_probability_mc(alphabet: int, d: int, trials: int,
                            rng: np.random.Generator) -> float:
    a = rng.integers(0, alphabet, size=(trials, d))
    b = rng.integers(0, alphabet, size=(trials, d))
    return float(np.mean(np.all(a == b, axis=1)))


# ---------------------------------------------------------------------------
# headline constructions


def entropy_ladder():
    """Three pinned instances showing each lever raising entropy.

    A uniform 4-path refines to its two end/middle classes (1 bit); adding
    a distinct second feature separates all four nodes (2 bits); a uniform
    6-path read through the full graph plus one 3-node window separates all
    six (log2 6 bits).
    """
    p4 = path_graph(4)
    colors4, _ = wl_refine(p4)
    p4d = path_graph(4, labels=tuple(("x", i) for i in range(4)))
    colors4d, _ = wl_refine(p4d)
    p6 = path_graph(6)
    family = [tuple(range(6)), (0, 1, 2)]
    return [
        {"name": "path4_uniform", "entropy": label_entropy(colors4),
         "expected": 1.0},
        {"name": "path4_distinct_feature", "entropy": label_entropy(colors4d),
         "expected": 2.0},
        {"name": "path6_full_plus_window", "entropy": h_multi(p6, family),
         "expected": math.log2(6.0)},
    ]
