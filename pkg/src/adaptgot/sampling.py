"""Contextual neighborhood sampling: four strategies over one corpus.

Every strategy picks, per POI, an ordered list of at most k neighbors and
the four lists together form the node's mixed context.  All strategies are
deterministic: every ranking breaks ties by the smaller dense POI id.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .corpus import CheckinCorpus, KM_PER_DEG, CorpusError
from .textops import tokenize


class SamplingError(ValueError):
    """Bad sampler arguments or unusable inputs."""


class Strategy(str, Enum):
    KNN = "knn"
    DENSITY = "density"
    IMPORTANCE = "importance"
    CATEGORY = "category"


STRATEGIES = (Strategy.KNN, Strategy.DENSITY, Strategy.IMPORTANCE, Strategy.CATEGORY)


@dataclass
class ContextGraph:
    """Directed neighbor lists: node i points at its sampled context."""
    strategy: Strategy
    k: int
    neighbors: list  # per-node ordered lists of dense POI ids

    def n_nodes(self) -> int:
        return len(self.neighbors)

    def edges(self):
        """Yield (src, dst, rank) with rank starting at 1."""
        for src, nbrs in enumerate(self.neighbors):
            for rank, dst in enumerate(nbrs, start=1):
                yield src, dst, rank

    def check(self) -> None:
        for src, nbrs in enumerate(self.neighbors):
            if len(nbrs) > self.k:
                raise SamplingError(f"node {src}: {len(nbrs)} neighbors exceeds k={self.k}")
            if src in nbrs:
                raise SamplingError(f"node {src}: self-loop")
            if len(set(nbrs)) != len(nbrs):
                raise SamplingError(f"node {src}: duplicate neighbor")


# ---------------------------------------------------------------------------
# sentiment


def load_lexicon(path: str) -> dict:
    """Two-column file: word<TAB>polarity; polarities clamp to [-1, 1]."""
    lex: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise SamplingError(f"lexicon line {ln}: expected word<TAB>polarity")
            word, raw = parts
            try:
                val = float(raw)
            except ValueError as exc:
                raise SamplingError(f"lexicon line {ln}: bad polarity {raw!r}") from exc
            lex[word.lower()] = min(1.0, max(-1.0, val))
    return lex


def sentiment(text: str, lexicon: dict) -> float:
    """Mean polarity over lexicon hits among the text's tokens; 0 if none."""
    hits = [lexicon[tok] for tok in tokenize(text) if tok in lexicon]
    if not hits:
        return 0.0
    return float(sum(hits) / len(hits))


def poi_shifted_sentiment(corpus: CheckinCorpus, lexicon: dict) -> np.ndarray:
    """Per-POI (1 + mean review sentiment) / 2, in [0, 1]; 0.5 when unreviewed."""
    sums = np.zeros(corpus.n_pois)
    counts = np.zeros(corpus.n_pois)
    for r in corpus.reviews:
        sums[r.poi] += sentiment(r.text, lexicon)
        counts[r.poi] += 1.0
    mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return (1.0 + mean) / 2.0


# ---------------------------------------------------------------------------
# density


def kde_density(corpus: CheckinCorpus, point, bandwidth_km: float) -> float:
    """Gaussian kernel density of check-in mass at a (lat, lon) point.

    Check-in coordinates are projected onto a local tangent plane around the
    query (equirectangular, km), and each of the n check-ins contributes a
    bivariate standard normal kernel: density = sum(K(dx/b)) / (n * b^2).
    """
    if bandwidth_km <= 0:
        raise SamplingError(f"bandwidth must be > 0, got {bandwidth_km}")
    support = _checkin_coords(corpus)
    if support.shape[0] == 0:
        raise SamplingError("density needs at least one check-in")
    return float(_kde_many(support, np.asarray([point], dtype=np.float64), bandwidth_km)[0])


def _checkin_coords(corpus: CheckinCorpus) -> np.ndarray:
    coords = corpus.coords()
    idx = np.array([c.poi for c in corpus.checkins], dtype=np.intp)
    return coords[idx] if idx.size else np.zeros((0, 2))


def _kde_many(support: np.ndarray, points: np.ndarray, b: float) -> np.ndarray:
    n = support.shape[0]
    out = np.empty(points.shape[0])
    for i, (lat, lon) in enumerate(points):
        dx = (support[:, 1] - lon) * math.cos(math.radians(lat)) * KM_PER_DEG
        dy = (support[:, 0] - lat) * KM_PER_DEG
        u2 = (dx * dx + dy * dy) / (b * b)
        kernel = np.exp(-0.5 * u2) / (2.0 * math.pi)
        out[i] = kernel.sum() / (n * b * b)
    return out


# ---------------------------------------------------------------------------
# the four strategies


def _top_by(scores: np.ndarray, candidates: np.ndarray, k: int, descending: bool) -> list:
    """Order candidates by score then smaller id; keep at most k."""
    key = -scores if descending else scores
    order = np.lexsort((candidates, key))
    return [int(candidates[j]) for j in order[:k]]


def sample_knn(corpus: CheckinCorpus, i: int, k: int) -> list:
    """k nearest POIs by great-circle distance, closest first."""
    if k < 1:
        raise SamplingError(f"k must be >= 1, got {k}")
    dist = corpus.distance_row(i)
    cands = np.array([j for j in range(corpus.n_pois) if j != i], dtype=np.intp)
    return _top_by(dist[cands], cands, k, descending=False)


def sample_density(corpus: CheckinCorpus, i: int, k: int, bandwidth_km: float,
                   pool: int) -> list:
    """Densest POIs among the pool nearest candidates."""
    if k < 1:
        raise SamplingError(f"k must be >= 1, got {k}")
    if pool < k:
        raise SamplingError(f"candidate pool {pool} smaller than k={k}")
    nearest = sample_knn(corpus, i, pool)
    cands = np.array(nearest, dtype=np.intp)
    coords = corpus.coords()
    support = _checkin_coords(corpus)
    if support.shape[0] == 0:
        raise SamplingError("density needs at least one check-in")
    dens = _kde_many(support, coords[cands], bandwidth_km)
    return _top_by(dens, cands, k, descending=True)


def _ratio_scores(weight: np.ndarray, dist: np.ndarray, gamma: float) -> np.ndarray:
    return (weight + gamma) / (dist + gamma)


def sample_importance(corpus: CheckinCorpus, i: int, k: int, gamma: float,
                      lexicon: dict, literal_sign: bool = False) -> list:
    """Visit-count times shifted sentiment, discounted by distance.

    score(j) = (freq(j) * shifted_sentiment(j) + gamma) / (dist(i,j) + gamma).
    The default keeps the k highest scores; literal_sign ranks by the negated
    ratio instead, so the k lowest scores win.
    """
    if k < 1:
        raise SamplingError(f"k must be >= 1, got {k}")
    weight = corpus.poi_freq() * poi_shifted_sentiment(corpus, lexicon)
    return _ranked_ratio(corpus, i, k, weight, gamma, literal_sign)


def sample_category(corpus: CheckinCorpus, i: int, k: int, gamma: float,
                    literal_sign: bool = False) -> list:
    """Visit-count times corpus-wide category share, discounted by distance."""
    if k < 1:
        raise SamplingError(f"k must be >= 1, got {k}")
    weight = corpus.poi_freq() * corpus.category_share()
    return _ranked_ratio(corpus, i, k, weight, gamma, literal_sign)


def _ranked_ratio(corpus, i, k, weight, gamma, literal_sign):
    dist = corpus.distance_row(i)
    cands = np.array([j for j in range(corpus.n_pois) if j != i], dtype=np.intp)
    scores = _ratio_scores(weight[cands], dist[cands], gamma)
    return _top_by(scores, cands, k, descending=not literal_sign)


def build_all_subgraphs(corpus: CheckinCorpus, config, lexicon: dict | None = None) -> dict:
    """All four context graphs under one config; deterministic."""
    if corpus.n_pois < 2:
        raise SamplingError("sampling needs at least two POIs")
    lexicon = lexicon or {}
    if config.materialize_distance:
        corpus.materialize_distances()
    n = corpus.n_pois
    k = config.k
    pool = min(config.density_pool_mult * k, n - 1)
    pool = max(pool, min(k, n - 1))
    coords = corpus.coords()
    support = _checkin_coords(corpus)

    freq = corpus.poi_freq()
    imp_weight = freq * poi_shifted_sentiment(corpus, lexicon)
    cat_weight = freq * corpus.category_share()

    knn_lists, den_lists, imp_lists, cat_lists = [], [], [], []
    density_cache: dict = {}
    for i in range(n):
        dist = corpus.distance_row(i)
        cands = np.array([j for j in range(n) if j != i], dtype=np.intp)
        nearest = _top_by(dist[cands], cands, max(pool, k), descending=False)
        knn_lists.append(nearest[:k])

        pool_ids = np.array(nearest[:pool], dtype=np.intp)
        dens = np.empty(pool_ids.size)
        for slot, j in enumerate(pool_ids):
            if j not in density_cache:
                if support.shape[0] == 0:
                    raise SamplingError("density needs at least one check-in")
                density_cache[j] = float(_kde_many(support, coords[j:j + 1],
                                                   config.bandwidth_km)[0])
            dens[slot] = density_cache[j]
        den_lists.append(_top_by(dens, pool_ids, k, descending=True))

        desc = not config.literal_sign_sampling
        imp_scores = _ratio_scores(imp_weight[cands], dist[cands], config.gamma)
        imp_lists.append(_top_by(imp_scores, cands, k, descending=desc))
        cat_scores = _ratio_scores(cat_weight[cands], dist[cands], config.gamma)
        cat_lists.append(_top_by(cat_scores, cands, k, descending=desc))

    graphs = {
        Strategy.KNN: ContextGraph(Strategy.KNN, k, knn_lists),
        Strategy.DENSITY: ContextGraph(Strategy.DENSITY, k, den_lists),
        Strategy.IMPORTANCE: ContextGraph(Strategy.IMPORTANCE, k, imp_lists),
        Strategy.CATEGORY: ContextGraph(Strategy.CATEGORY, k, cat_lists),
    }
    for g in graphs.values():
        g.check()
    return graphs


# ---------------------------------------------------------------------------
# export


def export_graphs(graphs: dict, path: str) -> None:
    """One JSONL line per edge: {"strategy", "src", "dst", "rank"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for strategy in STRATEGIES:
            g = graphs.get(strategy)
            if g is None:
                continue
            for src, dst, rank in g.edges():
                fh.write(json.dumps({"strategy": strategy.value, "src": src,
                                     "dst": dst, "rank": rank}) + "\n")


def load_graphs(path: str, n_nodes: int, k: int) -> dict:
    lists = {s: [[] for _ in range(n_nodes)] for s in STRATEGIES}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                strategy = Strategy(rec["strategy"])
                lists[strategy][rec["src"]].append((rec["rank"], rec["dst"]))
            except (json.JSONDecodeError, KeyError, ValueError, IndexError) as exc:
                raise SamplingError(f"graph file line {ln}: {exc}") from exc
    graphs = {}
    for strategy in STRATEGIES:
        nbrs = [[dst for _, dst in sorted(pairs)] for pairs in lists[strategy]]
        graphs[strategy] = ContextGraph(strategy, k, nbrs)
        graphs[strategy].check()
    return graphs
