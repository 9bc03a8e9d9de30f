"""Next-visit probes over frozen embeddings.

Each user's final check-in is held out; a probe scores every POI as the
candidate next visit given the user's remaining history, and the held-out
POI's rank drives recall and NDCG at K.  Probes never train anything: they
read the embedding table (and, for the blended probe, a transition-count
table built from the held-in histories only).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CheckinCorpus


class EvalError(ValueError):
    """Unusable cutoff or corpus without any scorable user."""


@dataclass(frozen=True)
class EvalCase:
    user: int
    history: tuple  # dense POI ids, time order, non-empty
    target: int     # dense POI id of the held-out final check-in


def leave_last_out(corpus: CheckinCorpus) -> list:
    """One case per user with at least two check-ins."""
    cases = []
    for user, seq in enumerate(corpus.user_sequences()):
        if len(seq) < 2:
            continue
        pois = tuple(c.poi for c in seq)
        cases.append(EvalCase(user, pois[:-1], pois[-1]))
    if not cases:
        raise EvalError("no user has two or more check-ins")
    return cases


def transition_counts(cases: list, n_pois: int) -> np.ndarray:
    """Dense next-visit counts from the held-in histories."""
    counts = np.zeros((n_pois, n_pois))
    for case in cases:
        for a, b in zip(case.history, case.history[1:]):
            counts[a, b] += 1.0
    return counts


def rank_of(scores: np.ndarray, target: int) -> int:
    """1-based rank of target under descending scores, ties to smaller id."""
    n = scores.shape[0]
    order = np.lexsort((np.arange(n), -scores))
    return int(np.flatnonzero(order == target)[0]) + 1


def recall_at_k(rank: int, k: int) -> float:
    if k < 1:
        raise EvalError(f"cutoff must be >= 1, got {k}")
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(1+rank) inside the cutoff."""
    if k < 1:
        raise EvalError(f"cutoff must be >= 1, got {k}")
    if rank > k:
        return 0.0
    return 1.0 / np.log2(1.0 + rank)


def cosine_to(embeddings: np.ndarray, i: int) -> np.ndarray:
    """Cosine similarity of every row against row i; zero rows score zero."""
    norms = np.sqrt((embeddings * embeddings).sum(axis=1))
    anchor = embeddings[i]
    denom = norms * norms[i]
    dots = embeddings @ anchor
    out = np.zeros(embeddings.shape[0])
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return out


class NearestEmbedding:
    """Scores candidates by cosine to the last visited POI's embedding."""

    name = "nearest"

    def scores(self, embeddings: np.ndarray, transitions: np.ndarray,
               case: EvalCase) -> np.ndarray:
        return cosine_to(embeddings, case.history[-1])


class MarkovBlend:
    """Convex blend of embedding cosine and next-visit frequency."""

    name = "markov_blend"

    def __init__(self, lam: float = 0.5):
        if not 0.0 <= lam <= 1.0:
            raise EvalError(f"blend weight must be in [0, 1], got {lam}")
        self.lam = lam

    def scores(self, embeddings: np.ndarray, transitions: np.ndarray,
               case: EvalCase) -> np.ndarray:
        last = case.history[-1]
        row = transitions[last]
        total = row.sum()
        freq = row / total if total > 0 else np.zeros_like(row)
        return self.lam * cosine_to(embeddings, last) + (1.0 - self.lam) * freq


def default_probes(lam: float = 0.5) -> list:
    return [NearestEmbedding(), MarkovBlend(lam)]


def baseline_embeddings(kind: str, n: int, d: int, seed: int = 0) -> np.ndarray:
    """Reference tables: seeded gaussian rows, or one-hot identity."""
    if kind == "random":
        return np.random.default_rng([seed, 0xBA5E]).normal(size=(n, d))
    if kind == "onehot":
        return np.eye(n)
    raise EvalError(f"unknown baseline {kind!r}")


def evaluate(corpus: CheckinCorpus, embeddings: np.ndarray, ks=(1, 5, 10),
             lam: float = 0.5, probes: list | None = None) -> list:
    """Mean recall/NDCG per probe and cutoff over all leave-last-out cases."""
    if embeddings.shape[0] != corpus.n_pois:
        raise EvalError(f"{embeddings.shape[0]} embedding rows for "
                        f"{corpus.n_pois} POIs")
    cases = leave_last_out(corpus)
    transitions = transition_counts(cases, corpus.n_pois)
    probes = default_probes(lam) if probes is None else probes
    rows = []
    for probe in probes:
        ranks = [rank_of(probe.scores(embeddings, transitions, case), case.target)
                 for case in cases]
        for k in ks:
            rows.append({
                "probe": probe.name,
                "K": int(k),
                "recall": float(np.mean([recall_at_k(r, k) for r in ranks])),
                "ndcg": float(np.mean([ndcg_at_k(r, k) for r in ranks])),
                "n_cases": len(cases),
            })
    return rows


METRIC_COLUMNS = ("probe", "embedding", "K", "recall", "ndcg", "seed")


def write_metrics_csv(path: str, rows: list) -> None:
    """Rows carry probe/K/recall/ndcg plus caller-supplied embedding, seed."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in METRIC_COLUMNS:
                val = row[col]
                cells.append(repr(float(val)) if isinstance(val, float) else str(val))
            fh.write(",".join(cells) + "\n")
