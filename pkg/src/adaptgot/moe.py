"""Noisy top-k expert gating over the four per-strategy attention outputs.

Each node scores the four experts from its aggregated pre-attention
feature, keeps the k best (ties to the lower expert index), renormalizes
with a softmax, and mixes the expert outputs.  In training mode the scores
carry recorded Gaussian noise scaled by a learned softplus term; evaluation
uses the clean scores.  A Jensen-Shannon term ties the sparse mixture's
pooled distribution to the dense four-expert reference.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import N_EXPERTS
from .got_repr import uniform_init


def init_gate_params(rng: np.random.Generator, d_in: int) -> dict:
    return {
        "gate.w_g": uniform_init(rng, d_in, N_EXPERTS),
        "gate.w_n": uniform_init(rng, d_in, N_EXPERTS),
    }


def gate_scores(params: dict, x, noise: np.ndarray | None):
    """Clean scores plus recorded noise times a learned softplus scale.

    noise=None (or all zeros) is evaluation mode: the noise path is skipped
    entirely so no gradient reaches the noise weights.
    """
    clean = ad.matmul(x, params["gate.w_g"])
    if noise is None or not np.any(noise):
        return clean
    spread = ad.softplus(ad.matmul(x, params["gate.w_n"]))
    return ad.add(clean, ad.mul(ad.const(noise), spread))


def topk_keep_mask(scores: np.ndarray, k_experts: int) -> np.ndarray:
    """Boolean keep mask per row; ties resolve to the lower expert index."""
    if not 1 <= k_experts <= scores.shape[1]:
        raise ValueError(f"k_experts must be in 1..{scores.shape[1]}, got {k_experts}")
    order = np.argsort(-scores, axis=1, kind="stable")
    keep = np.zeros(scores.shape, dtype=bool)
    rows = np.arange(scores.shape[0])[:, None]
    keep[rows, order[:, :k_experts]] = True
    return keep


def gate(params: dict, x, k_experts: int, noise: np.ndarray | None):
    """Sparse gate weights: zeros off the kept set, kept entries sum to 1."""
    scores = gate_scores(params, x, noise)
    keep = topk_keep_mask(scores.data, k_experts)
    return ad.masked_softmax_rows(scores, keep), keep


def mix_experts(gates, expert_outputs: list):
    """Gate-weighted sum of the per-expert node matrices (pre-activation)."""
    if len(expert_outputs) != N_EXPERTS:
        raise ValueError(f"expected {N_EXPERTS} experts, got {len(expert_outputs)}")
    mixed = None
    for o, z in enumerate(expert_outputs):
        term = ad.scale_rows(z, ad.col(gates, o))
        mixed = term if mixed is None else ad.add(mixed, term)
    return mixed


def activate(x, name: str):
    if name == "sigmoid":
        return ad.sigmoid(x)
    if name == "tanh":
        return ad.tanh(x)
    if name == "identity":
        return x
    raise ValueError(f"unknown fusion activation {name!r}")


def fuse(gates, expert_outputs: list, activation: str = "sigmoid"):
    """Final fused node embedding h' = act(sum_o g_o * z_o)."""
    return activate(mix_experts(gates, expert_outputs), activation)


def graph_distribution(embeddings):
    """Mean-pool node vectors and softmax into a distribution over channels."""
    pooled = ad.mean0(embeddings if isinstance(embeddings, ad.Tensor)
                      else ad.const(embeddings))
    return ad.softmax_vec(pooled)


def importance_loss(gates):
    """Squared coefficient of variation of the per-expert gate mass."""
    return ad.cv_squared(ad.sum0(gates))


# ---------------------------------------------------------------------------
# Jensen-Shannon divergence


def js_divergence(p, q) -> float:
    """JS divergence of two probability vectors, natural log, in [0, ln 2].

    Validates shape and normalization; 0 * log(0/x) counts as 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or p.shape != q.shape:
        raise ValueError(f"js_divergence: shapes {p.shape} vs {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0):
            raise ValueError(f"js_divergence: {name} has negative entries")
        if abs(vec.sum() - 1.0) > 1e-9:
            raise ValueError(f"js_divergence: {name} sums to {vec.sum()!r}, not 1")
    m = 0.5 * (p + q)

    def half_kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    return 0.5 * half_kl(p) + 0.5 * half_kl(q)


def js_divergence_t(p, q):
    """Tape version for strictly positive softmax outputs."""
    m = ad.scale(ad.add(p, q), 0.5)
    log_m = ad.log(m)
    kl_p = ad.total_sum(ad.mul(p, ad.sub(ad.log(p), log_m)))
    kl_q = ad.total_sum(ad.mul(q, ad.sub(ad.log(q), log_m)))
    return ad.scale(ad.add(kl_p, kl_q), 0.5)
