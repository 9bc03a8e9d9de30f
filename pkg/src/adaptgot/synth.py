"""Synthetic check-in corpora with planted spatial clusters.

POIs sit in tight gaussian blobs around well-separated cluster centers
(grid spacing ~22 km against a ~0.3 km blob radius), each cluster carries
a dominant category, and every user mostly revisits one home cluster.
Review text mixes category-themed nouns and neutral filler with sentiment
words tied to a per-POI quality draw; the matching sentiment lexicon ships
alongside the corpus so importance sampling has something to chew on.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .corpus import KM_PER_DEG


class SynthError(ValueError):
    """Impossible corpus shape."""


POSITIVE_WORDS = (("great", 0.9), ("lovely", 0.8), ("superb", 1.0),
                  ("tasty", 0.7), ("friendly", 0.6))
NEGATIVE_WORDS = (("awful", -0.9), ("dirty", -0.8), ("gloomy", -0.5),
                  ("rude", -0.7), ("bland", -0.6))
FILLER_WORDS = ("place", "visit", "spot", "corner", "room", "stall",
                "today", "again", "weekend", "evening")
# per-category vocabularies, cycled when there are more categories than rows;
# reviews mentioning what kind of place it is give the text channel a signal
# that the translation-invariant geometry cannot carry
THEME_WORDS = (("espresso", "latte", "roast", "brunch"),
               ("gallery", "exhibit", "sculpture", "mural"),
               ("trailhead", "lookout", "meadow", "picnic"),
               ("cocktail", "dancefloor", "vinyl", "neon"),
               ("noodle", "dumpling", "broth", "skewer"),
               ("bookshelf", "paperback", "reading", "armchair"),
               ("platform", "locomotive", "timetable", "carriage"),
               ("seashell", "boardwalk", "lighthouse", "tidepool"))


@dataclass
class SynthSpec:
    n_pois: int = 50
    n_users: int = 20
    n_clusters: int = 4
    checkins_per_user: int = 30
    reviews_per_poi: int = 2
    in_cluster_prob: float = 0.85
    category_flip_prob: float = 0.1
    cluster_spacing_deg: float = 0.2
    poi_sigma_km: float = 0.3
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.n_clusters < 1:
            raise SynthError("need at least one cluster")
        if self.n_pois < 2 * self.n_clusters:
            raise SynthError("need at least two POIs per cluster")
        if self.n_users < 1 or self.checkins_per_user < 1:
            raise SynthError("need users and check-ins")
        if not 0.0 <= self.in_cluster_prob <= 1.0:
            raise SynthError(f"in_cluster_prob {self.in_cluster_prob} not in [0,1]")
        return self


def sentiment_lexicon() -> dict:
    return {w: s for w, s in POSITIVE_WORDS + NEGATIVE_WORDS}


def cluster_centers(spec: SynthSpec) -> np.ndarray:
    """Grid of (lat, lon) centers; adjacent cells sit ~22 km apart."""
    side = int(np.ceil(np.sqrt(spec.n_clusters)))
    centers = []
    for c in range(spec.n_clusters):
        centers.append((spec.cluster_spacing_deg * (c // side),
                        spec.cluster_spacing_deg * (c % side)))
    return np.array(centers)


def poi_cluster(i: int, n_clusters: int) -> int:
    return i % n_clusters


def generate(spec: SynthSpec) -> list:
    """JSONL-ready record dicts: POIs, then check-ins, then reviews."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = cluster_centers(spec)
    sigma_deg = spec.poi_sigma_km / KM_PER_DEG

    records = []
    clusters = np.array([poi_cluster(i, spec.n_clusters)
                         for i in range(spec.n_pois)])
    quality = rng.uniform(0.0, 1.0, size=spec.n_pois)
    cats = []
    for i in range(spec.n_pois):
        c = clusters[i]
        lat, lon = centers[c] + rng.normal(0.0, sigma_deg, size=2)
        cat = int(c)
        if rng.random() < spec.category_flip_prob and spec.n_clusters > 1:
            others = [x for x in range(spec.n_clusters) if x != c]
            cat = int(rng.choice(others))
        cats.append(cat)
        records.append({"type": "poi", "id": f"p{i:04d}",
                        "lat": float(lat), "lon": float(lon),
                        "cat": f"c{cat}"})

    members = [np.flatnonzero(clusters == c) for c in range(spec.n_clusters)]
    for u in range(spec.n_users):
        home = u % spec.n_clusters
        away = np.flatnonzero(clusters != home)
        t = int(rng.integers(0, 3600))
        prev = -1
        for _ in range(spec.checkins_per_user):
            if away.size == 0 or rng.random() < spec.in_cluster_prob:
                pool = members[home]
            else:
                pool = away
            # nobody checks into the place they are already at
            pool = pool[pool != prev] if pool.size > 1 else pool
            poi = int(rng.choice(pool))
            records.append({"type": "checkin", "user": f"u{u:03d}",
                            "poi": f"p{poi:04d}", "t": t})
            prev = poi
            t += int(rng.integers(60, 3600))

    pos = [w for w, _ in POSITIVE_WORDS]
    neg = [w for w, _ in NEGATIVE_WORDS]
    for i in range(spec.n_pois):
        theme = THEME_WORDS[cats[i] % len(THEME_WORDS)]
        for _ in range(spec.reviews_per_poi):
            u = int(rng.integers(0, spec.n_users))
            words = list(rng.choice(theme, size=2)) + [str(rng.choice(FILLER_WORDS))]
            for _ in range(2):
                bucket = pos if rng.random() < quality[i] else neg
                words.append(str(rng.choice(bucket)))
            order = rng.permutation(len(words))
            text = " ".join(str(words[j]) for j in order)
            records.append({"type": "review", "user": f"u{u:03d}",
                            "poi": f"p{i:04d}", "text": text})
    return records


def write_dataset(spec: SynthSpec, out_dir: str):
    """Writes corpus.jsonl and lexicon.tsv; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    corpus_path = os.path.join(out_dir, "corpus.jsonl")
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for rec in generate(spec):
            fh.write(json.dumps(rec) + "\n")
    lexicon_path = os.path.join(out_dir, "lexicon.tsv")
    with open(lexicon_path, "w", encoding="utf-8") as fh:
        for word, weight in POSITIVE_WORDS + NEGATIVE_WORDS:
            fh.write(f"{word}\t{weight}\n")
    return corpus_path, lexicon_path
