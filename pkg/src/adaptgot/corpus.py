"""Check-in corpus: JSONL ingestion, great-circle geometry, derived matrices.

Input records, one JSON object per line:

    {"type": "poi",     "id": "<ext>", "lat": f, "lon": f, "cat": "s"}
    {"type": "checkin", "user": "<ext>", "poi": "<ext>", "t": int}
    {"type": "review",  "user": "<ext>", "poi": "<ext>", "text": "s"}

External string ids are re-indexed to dense 0..N-1 integers in first-seen
order; every derived structure below works on the dense ids.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0
TWO_PI = 2.0 * math.pi


class CorpusError(ValueError):
    """Malformed input, out-of-range record, or unusable corpus."""


@dataclass(frozen=True)
class Poi:
    id: int
    lat: float
    lon: float
    category: str


@dataclass(frozen=True)
class CheckIn:
    user: int
    poi: int
    t: int


@dataclass(frozen=True)
class Review:
    user: int
    poi: int
    text: str


@dataclass(eq=True)
class CheckinCorpus:
    pois: list
    checkins: list          # sorted by (user, t, input order)
    reviews: list           # input order
    poi_ext: list           # dense id -> external id
    user_ext: list
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_pois(self) -> int:
        return len(self.pois)

    @property
    def n_users(self) -> int:
        return len(self.user_ext)

    @property
    def n_checkins(self) -> int:
        return len(self.checkins)

    def coords(self) -> np.ndarray:
        """(N, 2) array of [lat, lon] in degrees."""
        if "coords" not in self._cache:
            self._cache["coords"] = np.array(
                [[p.lat, p.lon] for p in self.pois], dtype=np.float64
            )
        return self._cache["coords"]

    def user_sequences(self) -> list:
        """Per-user time-ordered check-in lists."""
        if "seqs" not in self._cache:
            seqs = [[] for _ in range(self.n_users)]
            for c in self.checkins:
                seqs[c.user].append(c)
            self._cache["seqs"] = seqs
        return self._cache["seqs"]

    def poi_freq(self) -> np.ndarray:
        """Total visit count per POI, shape (N,)."""
        if "poi_freq" not in self._cache:
            freq = np.zeros(self.n_pois)
            for c in self.checkins:
                freq[c.poi] += 1.0
            self._cache["poi_freq"] = freq
        return self._cache["poi_freq"]

    def user_freq(self) -> np.ndarray:
        """Per-user visit counts, shape (M, N)."""
        if "user_freq" not in self._cache:
            uf = np.zeros((self.n_users, self.n_pois))
            for c in self.checkins:
                uf[c.user, c.poi] += 1.0
            self._cache["user_freq"] = uf
        return self._cache["user_freq"]

    def categories(self) -> list:
        """Distinct categories, lexicographically ordered for dense ids."""
        if "categories" not in self._cache:
            self._cache["categories"] = sorted({p.category for p in self.pois})
        return self._cache["categories"]

    def user_category(self) -> np.ndarray:
        """Row-normalized per-user category visit shares, shape (M, C)."""
        if "user_category" not in self._cache:
            cat_idx = {c: i for i, c in enumerate(self.categories())}
            uc = np.zeros((self.n_users, len(cat_idx)))
            for c in self.checkins:
                uc[c.user, cat_idx[self.pois[c.poi].category]] += 1.0
            totals = uc.sum(axis=1, keepdims=True)
            np.divide(uc, totals, out=uc, where=totals > 0)
            self._cache["user_category"] = uc
        return self._cache["user_category"]

    def category_share(self) -> np.ndarray:
        """Per-POI share of all check-ins landing in the POI's category."""
        if "category_share" not in self._cache:
            total = max(1, self.n_checkins)
            per_cat: dict = {}
            for c in self.checkins:
                cat = self.pois[c.poi].category
                per_cat[cat] = per_cat.get(cat, 0) + 1
            share = np.array(
                [per_cat.get(p.category, 0) / total for p in self.pois], dtype=np.float64
            )
            self._cache["category_share"] = share
        return self._cache["category_share"]

    def distance_row(self, i: int) -> np.ndarray:
        """Haversine distances from POI i to every POI (lazy, km)."""
        full = self._cache.get("distance_matrix")
        if full is not None:
            return full[i]
        coords = self.coords()
        return _haversine_one_to_many(coords[i], coords)

    def materialize_distances(self) -> np.ndarray:
        """Cache the full N x N distance matrix (desk-scale corpora only)."""
        if self.n_pois > 20000:
            raise CorpusError(
                f"refusing to materialize {self.n_pois}x{self.n_pois} distances"
            )
        if "distance_matrix" not in self._cache:
            coords = self.coords()
            rows = [_haversine_one_to_many(coords[i], coords) for i in range(self.n_pois)]
            self._cache["distance_matrix"] = np.array(rows) if rows else np.zeros((0, 0))
        return self._cache["distance_matrix"]


# ---------------------------------------------------------------------------
# geometry


def haversine_km(a, b) -> float:
    """Great-circle distance between (lat, lon) points in degrees."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _haversine_one_to_many(origin, coords: np.ndarray) -> np.ndarray:
    lat1 = math.radians(origin[0])
    lon1 = math.radians(origin[1])
    lat2 = np.radians(coords[:, 0])
    lon2 = np.radians(coords[:, 1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + math.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def bearing_rad(a, b) -> float:
    """Initial great-circle bearing from a to b, radians in [0, 2*pi).

    Zero points north, angles grow clockwise (east is pi/2).  Identical
    points have no direction, so that case is an error.
    """
    if a[0] == b[0] and a[1] == b[1]:
        raise CorpusError("undefined bearing: identical coordinates")
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    dlon = lon2 - lon1
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    theta = math.atan2(y, x) % TWO_PI
    if theta >= TWO_PI:  # guard the rounding case where -eps % 2pi == 2pi
        theta = 0.0
    return theta


# ---------------------------------------------------------------------------
# co-occurrence


def cooccurrence(corpus: CheckinCorpus, window_secs: float = math.inf) -> np.ndarray:
    """Row-normalized co-visit matrix.

    occ[i, j] counts users who checked in at both i and j (once per user per
    unordered pair; with a finite window, some visit to i and some visit to
    j must fall within window_secs of each other).  Each row is divided by
    the total number of check-ins at that row's POI, so entries live in
    [0, 1]; the diagonal is zero and never-visited POIs give zero rows.
    """
    if window_secs < 0:
        raise CorpusError("cooccurrence window must be >= 0")
    n = corpus.n_pois
    occ = np.zeros((n, n))
    for seq in corpus.user_sequences():
        pairs = _covisit_pairs(seq, window_secs)
        for i, j in pairs:
            occ[i, j] += 1.0
            occ[j, i] += 1.0
    visits = corpus.poi_freq()
    out = np.zeros((n, n))
    np.divide(occ, visits[:, None], out=out, where=visits[:, None] > 0)
    return out


def _covisit_pairs(seq, window_secs: float) -> set:
    if math.isinf(window_secs):
        pois = sorted({c.poi for c in seq})
        return {(pois[a], pois[b]) for a in range(len(pois)) for b in range(a + 1, len(pois))}
    pairs = set()
    for a in range(len(seq)):
        for b in range(a + 1, len(seq)):
            if abs(seq[a].t - seq[b].t) <= window_secs and seq[a].poi != seq[b].poi:
                i, j = seq[a].poi, seq[b].poi
                pairs.add((min(i, j), max(i, j)))
    return pairs


# ---------------------------------------------------------------------------
# ingestion / export


def _parse_line(ln: int, line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {ln}: not valid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict) or "type" not in rec:
        raise CorpusError(f"line {ln}: expected an object with a 'type' field")
    return rec


def _field(rec: dict, name: str, kinds, ln: int):
    if name not in rec:
        raise CorpusError(f"line {ln}: missing field {name!r}")
    val = rec[name]
    if isinstance(val, bool) or not isinstance(val, kinds):
        raise CorpusError(f"line {ln}: field {name!r} has wrong type")
    return val


def ingest(path: str) -> CheckinCorpus:
    """Read, validate, and densely re-index a corpus file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    parsed = []
    for ln, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parsed.append((ln, _parse_line(ln, line)))

    poi_idx: dict = {}
    pois: list = []
    for ln, rec in parsed:
        if rec["type"] != "poi":
            continue
        ext = _field(rec, "id", str, ln)
        lat = float(_field(rec, "lat", (int, float), ln))
        lon = float(_field(rec, "lon", (int, float), ln))
        cat = _field(rec, "cat", str, ln)
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise CorpusError(f"line {ln}: coordinates ({lat}, {lon}) out of range")
        if ext in poi_idx:
            continue  # duplicate id: keep the first definition, merge events
        poi_idx[ext] = len(pois)
        pois.append(Poi(len(pois), lat, lon, cat))

    user_idx: dict = {}
    user_ext: list = []
    checkins: list = []
    reviews: list = []
    for ln, rec in parsed:
        kind = rec["type"]
        if kind == "poi":
            continue
        if kind not in ("checkin", "review"):
            raise CorpusError(f"line {ln}: unknown record type {kind!r}")
        uext = _field(rec, "user", str, ln)
        pext = _field(rec, "poi", str, ln)
        if pext not in poi_idx:
            raise CorpusError(f"line {ln}: check-in references unknown POI {pext!r}")
        if uext not in user_idx:
            user_idx[uext] = len(user_ext)
            user_ext.append(uext)
        uid = user_idx[uext]
        pid = poi_idx[pext]
        if kind == "checkin":
            t = _field(rec, "t", int, ln)
            checkins.append(CheckIn(uid, pid, t))
        else:
            text = _field(rec, "text", str, ln)
            reviews.append(Review(uid, pid, text))

    if not pois:
        raise CorpusError("empty corpus")

    # stable per-user time order; ties keep input order
    order = sorted(range(len(checkins)), key=lambda i: (checkins[i].user, checkins[i].t, i))
    checkins = [checkins[i] for i in order]

    poi_ext = [None] * len(pois)
    for ext, idx in poi_idx.items():
        poi_ext[idx] = ext
    return CheckinCorpus(pois, checkins, reviews, poi_ext, user_ext)


def _fmt9(x: float) -> str:
    return format(float(x), ".9g")


def export(corpus: CheckinCorpus, path: str) -> None:
    """Write the corpus back out in the ingestion format (9 sig. digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.pois:
            rec = {"type": "poi", "id": corpus.poi_ext[p.id],
                   "lat": float(_fmt9(p.lat)), "lon": float(_fmt9(p.lon)),
                   "cat": p.category}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for c in corpus.checkins:
            rec = {"type": "checkin", "user": corpus.user_ext[c.user],
                   "poi": corpus.poi_ext[c.poi], "t": c.t}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for r in corpus.reviews:
            rec = {"type": "review", "user": corpus.user_ext[r.user],
                   "poi": corpus.poi_ext[r.poi], "text": r.text}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
