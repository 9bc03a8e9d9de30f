"""Per-edge and per-node feature encoders: geography, co-visits, text.

Edges carry a relative position (great-circle distance plus initial
bearing) featurized as [s / s_scale, sin theta, cos theta], and a co-visit
rate in [0, 1].  Both run through small two-layer affine stacks into the
model width.  Node text is the concatenation of the POI's reviews, hashed
into a fixed-width signed bag of words (or loaded from a precomputed
table).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import CheckinCorpus, CorpusError, bearing_rad, haversine_km
from .textops import tokenize


@dataclass(frozen=True)
class RelPos:
    """Distance (km) and initial bearing (radians, [0, 2*pi)) from i to j."""
    s_km: float
    theta: float


def relpos(corpus: CheckinCorpus, i: int, j: int) -> RelPos:
    if i == j:
        raise CorpusError("relative position of a node to itself is undefined")
    coords = corpus.coords()
    a = (coords[i, 0], coords[i, 1])
    b = (coords[j, 0], coords[j, 1])
    return RelPos(haversine_km(a, b), bearing_rad(a, b))


def relpos_features(r: RelPos, s_scale_km: float) -> np.ndarray:
    """[s / s_scale, sin theta, cos theta]; bounded angle channels."""
    if s_scale_km <= 0:
        raise CorpusError(f"s_scale_km must be > 0, got {s_scale_km}")
    return np.array([r.s_km / s_scale_km, math.sin(r.theta), math.cos(r.theta)])


# ---------------------------------------------------------------------------
# two-layer affine encoders


def uniform_init(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out))


def init_two_layer(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int,
                   prefix: str) -> dict:
    """Weights for an affine -> affine stack, biases start at zero."""
    return {
        f"{prefix}.w1": uniform_init(rng, d_in, d_hidden),
        f"{prefix}.b1": np.zeros(d_hidden),
        f"{prefix}.w2": uniform_init(rng, d_hidden, d_out),
        f"{prefix}.b2": np.zeros(d_out),
    }


def two_layer(x, params: dict, prefix: str):
    """Apply the affine -> affine stack to a (rows, d_in) tensor."""
    h = ad.affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    return ad.affine(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def encode_geo(params: dict, feats, prefix: str = "geo_enc"):
    """Edge geometry features (rows, 3) -> (rows, d_model)."""
    feats = feats if isinstance(feats, ad.Tensor) else ad.const(feats)
    if feats.data.ndim != 2 or feats.data.shape[1] != 3:
        raise ad.ShapeError(f"encode_geo: expected (rows, 3), got {feats.data.shape}")
    return two_layer(feats, params, prefix)


def encode_occ(params: dict, values, prefix: str = "occ_enc"):
    """Co-visit rates (rows, 1) in [0, 1] -> (rows, d_model)."""
    values = values if isinstance(values, ad.Tensor) else ad.const(values)
    if values.data.ndim != 2 or values.data.shape[1] != 1:
        raise ad.ShapeError(f"encode_occ: expected (rows, 1), got {values.data.shape}")
    if values.data.size and (values.data.min() < 0.0 or values.data.max() > 1.0):
        raise CorpusError("co-visit rate outside [0, 1]")
    return two_layer(values, params, prefix)


# ---------------------------------------------------------------------------
# text


def fuse_poi_text(corpus: CheckinCorpus, i: int) -> str:
    """All review text for POI i, ordered by (user id, review order)."""
    picked = [(r.user, pos, r.text) for pos, r in enumerate(corpus.reviews) if r.poi == i]
    picked.sort(key=lambda t: (t[0], t[1]))
    return " ".join(text for _, _, text in picked if text)


class HashingBow:
    """Signed feature hashing of token counts, L2-normalized.

    The bucket and the sign come from disjoint bit ranges of a salted
    blake2b digest, so the mapping is stable across processes and machines.
    Empty text maps to the zero vector.
    """

    def __init__(self, dim: int = 256, salt: str = "got-text-v1"):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.salt = salt

    def _hash(self, token: str) -> int:
        digest = hashlib.blake2b((self.salt + "\x1f" + token).encode("utf-8"),
                                 digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def encode_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            h = self._hash(tok)
            bucket = h % self.dim
            sign = 1.0 if (h >> 62) & 1 == 0 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def binary_buckets(self, text: str) -> np.ndarray:
        """1.0 wherever at least one token hashed into the bucket."""
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            vec[self._hash(tok) % self.dim] = 1.0
        return vec

    def embed_all(self, corpus: CheckinCorpus) -> np.ndarray:
        return np.array([self.encode_text(fuse_poi_text(corpus, i))
                         for i in range(corpus.n_pois)])

    def targets_all(self, corpus: CheckinCorpus) -> np.ndarray:
        return np.array([self.binary_buckets(fuse_poi_text(corpus, i))
                         for i in range(corpus.n_pois)])


class PrecomputedText:
    """External per-POI text vectors keyed by external id, unit-normalized."""

    def __init__(self, table: dict, dim: int):
        self.table = table
        self.dim = dim

    @classmethod
    def load(cls, path: str) -> "PrecomputedText":
        table: dict = {}
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    ext = rec["poi"]
                    vec = np.asarray(rec["vec"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise CorpusError(f"text vectors line {ln}: {exc}") from exc
                if vec.ndim != 1 or vec.size == 0:
                    raise CorpusError(f"text vectors line {ln}: bad vector shape")
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise CorpusError(
                        f"text vectors line {ln}: width {vec.size} != {dim}"
                    )
                norm = np.linalg.norm(vec)
                table[ext] = vec / norm if norm > 0 else vec
        if dim is None:
            raise CorpusError("text vector file is empty")
        return cls(table, dim)

    def embed_all(self, corpus: CheckinCorpus) -> np.ndarray:
        rows = []
        for ext in corpus.poi_ext:
            if ext not in self.table:
                raise CorpusError(f"no precomputed text vector for POI {ext!r}")
            rows.append(self.table[ext])
        return np.array(rows)
