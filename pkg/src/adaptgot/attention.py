"""Edge-conditioned multi-head attention over one sampled context graph.

Node features are the concatenation of summed neighbor geometry encodings,
summed neighbor co-visit encodings, and the node's own text vector.  Edge
scores multiply query, key, and per-head projections of both edge encodings
elementwise, then normalize over each source node's neighbor set.  A node
with no sampled neighbors passes its own value row through the output
projection unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .got_repr import uniform_init


@dataclass(frozen=True)
class AttentionDims:
    heads: int
    d_k: int
    d_model: int
    d_enh: int  # 2 * d_model + d_txt


def init_attention_params(rng: np.random.Generator, dims: AttentionDims) -> dict:
    params = {}
    for h in range(dims.heads):
        params[f"att.q{h}"] = uniform_init(rng, dims.d_enh, dims.d_k)
        params[f"att.k{h}"] = uniform_init(rng, dims.d_enh, dims.d_k)
        params[f"att.v{h}"] = uniform_init(rng, dims.d_enh, dims.d_k)
        params[f"att.geo{h}"] = uniform_init(rng, dims.d_model, dims.d_k)
        params[f"att.occ{h}"] = uniform_init(rng, dims.d_model, dims.d_k)
    params["att.w_o"] = uniform_init(rng, dims.heads * dims.d_k, dims.d_model)
    params["att.ln_gain"] = np.ones(dims.d_model)
    params["att.ln_bias"] = np.zeros(dims.d_model)
    return params


def aggregate_node_features(n_nodes: int, src, h_geo, h_occ, h_txt):
    """Per-node concat(sum of edge geo encodings, sum of edge occ encodings, text).

    src maps each edge row to its source node; nodes with no edges get zero
    sums, so their feature is just the text block.  Order of edges within a
    node does not matter beyond float addition order.
    """
    geo_sum = ad.segment_sum(h_geo, src, n_nodes)
    occ_sum = ad.segment_sum(h_occ, src, n_nodes)
    return ad.concat_cols([geo_sum, occ_sum, h_txt])


def extend_with_self_edges(n_nodes: int, src: np.ndarray, dst: np.ndarray):
    """Append a self-edge for every node without outgoing edges.

    Softmax over a singleton set is exactly one, so the synthetic edge turns
    the isolated-node case into "output my own value row" with no special
    branch downstream.  Returns (src', dst', n_synthetic).
    """
    present = np.zeros(n_nodes, dtype=bool)
    present[src] = True
    iso = np.flatnonzero(~present)
    if iso.size == 0:
        return src, dst, 0
    return (np.concatenate([src, iso]), np.concatenate([dst, iso]), int(iso.size))


def project_qkv(params: dict, head: int, x_enh, src, dst):
    """Per-edge query/key/value rows for one head."""
    q_nodes = ad.matmul(x_enh, params[f"att.q{head}"])
    k_nodes = ad.matmul(x_enh, params[f"att.k{head}"])
    v_nodes = ad.matmul(x_enh, params[f"att.v{head}"])
    return (ad.gather_rows(q_nodes, src),
            ad.gather_rows(k_nodes, dst),
            ad.gather_rows(v_nodes, dst))


def edge_condition(params: dict, head: int, h_geo, h_occ, n_synthetic: int, d_k: int,
                   plain: bool, n_edges_real: int):
    """Per-head projections of the edge encodings, ones when ablated.

    Synthetic self-edges get all-ones rows: their singleton softmax ignores
    the score anyway, and ones keep the elementwise product harmless.
    """
    if plain:
        total = n_edges_real + n_synthetic
        ones = ad.const(np.ones((total, d_k)))
        return ones, ones
    pg = ad.matmul(h_geo, params[f"att.geo{head}"])
    po = ad.matmul(h_occ, params[f"att.occ{head}"])
    if n_synthetic:
        pad = ad.const(np.ones((n_synthetic, d_k)))
        pg = ad.concat_rows([pg, pad])
        po = ad.concat_rows([po, pad])
    return pg, po


def got_scores(q, k, pg, po, src, n_nodes: int, d_k: int):
    """Edge scores and per-source softmax weights.

    score = sum(q * k * pg * po) / sqrt(d_k) per edge, normalized over the
    edges leaving each source node.
    """
    prod = ad.mul(ad.mul(q, k), ad.mul(pg, po))
    scores = ad.scale(ad.rowsum(prod), 1.0 / np.sqrt(d_k))
    weights = ad.segment_softmax(scores, src, n_nodes)
    return scores, weights


def attend(weights, v, src, n_nodes: int):
    """Convex combination of value rows per source node."""
    return ad.segment_sum(ad.scale_rows(v, weights), src, n_nodes)


@dataclass
class AttnInternals:
    """Numpy snapshots for invariant checks; not part of the tape."""
    src: np.ndarray
    n_synthetic: int
    weights: list   # per head, (E',)
    values: list    # per head, (E', d_k)
    z_heads: list   # per head, (n, d_k)


def attention_forward(params: dict, x_enh, src, dst, h_geo, h_occ, dims: AttentionDims,
                      ln_eps: float, plain: bool = False,
                      dropout_mask: np.ndarray | None = None,
                      dropout_p: float = 0.0):
    """Full block: per-head attention, concat, output projection, layernorm.

    src/dst are the real edge arrays; self-edges for isolated nodes are
    appended internally.  Pass a dropout mask only in training mode.
    Returns (z_final, AttnInternals).
    """
    src = np.asarray(src, dtype=np.intp)
    dst = np.asarray(dst, dtype=np.intp)
    n_nodes = x_enh.data.shape[0]
    ext_src, ext_dst, n_syn = extend_with_self_edges(n_nodes, src, dst)
    n_real = src.size

    head_outputs = []
    internals = AttnInternals(ext_src, n_syn, [], [], [])
    for h in range(dims.heads):
        q, k, v = project_qkv(params, h, x_enh, ext_src, ext_dst)
        pg, po = edge_condition(params, h, h_geo, h_occ, n_syn, dims.d_k, plain, n_real)
        _, weights = got_scores(q, k, pg, po, ext_src, n_nodes, dims.d_k)
        z = attend(weights, v, ext_src, n_nodes)
        head_outputs.append(z)
        internals.weights.append(weights.data.copy())
        internals.values.append(v.data.copy())
        internals.z_heads.append(z.data.copy())

    combined = ad.matmul(ad.concat_cols(head_outputs), params["att.w_o"])
    out = ad.layernorm_rows(combined, params["att.ln_gain"], params["att.ln_bias"], ln_eps)
    if dropout_mask is not None:
        out = ad.dropout(out, dropout_mask, dropout_p)
    return out, internals
