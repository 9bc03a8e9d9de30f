"""End-to-end forward pass: four context graphs in, fused embeddings and
masked-reconstruction losses out.

One call builds a fresh tape over the shared parameter dict, encodes edge
geometry and co-visit ratios, swaps masked rows for learned mask tokens,
runs the shared attention block once per sampling strategy, gates the four
outputs per node, and scores five loss terms (text, geometry, co-visit,
gate balance, distribution alignment) combined through learned softmax
weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import moe
from .attention import AttentionDims, attention_forward, aggregate_node_features
from .attention import init_attention_params
from .config import RunConfig, STRATEGY_ORDER
from .corpus import CheckinCorpus, cooccurrence
from .got_repr import encode_geo, encode_occ, init_two_layer, relpos, relpos_features


@dataclass
class GraphInputs:
    """One strategy's sampled edges with raw per-edge features."""
    strategy: str
    src: np.ndarray        # (E,) source node per edge
    dst: np.ndarray        # (E,) sampled neighbor per edge
    geo_feats: np.ndarray  # (E, 3) scaled distance, sin/cos bearing
    occ_vals: np.ndarray   # (E, 1) co-visit ratio of dst given src


@dataclass
class PipelineInputs:
    n_nodes: int
    graphs: list            # one GraphInputs per entry of STRATEGY_ORDER
    h_txt: np.ndarray       # (n, d_txt) text vectors
    txt_targets: np.ndarray  # (n, d_txt) 0/1 bucket indicators for reconstruction


@dataclass
class MaskSelection:
    """What the current epoch hides: node text rows and per-graph edges."""
    txt_nodes: np.ndarray   # unique node ids
    geo_edges: list         # per strategy, unique edge indices into that graph
    occ_edges: list


def empty_selection() -> MaskSelection:
    none = np.zeros(0, dtype=np.intp)
    return MaskSelection(none, [none] * len(STRATEGY_ORDER),
                         [none] * len(STRATEGY_ORDER))


@dataclass
class ReconTargets:
    """Full per-node target matrices; only masked rows enter the losses."""
    txt: np.ndarray  # (n, d_txt)
    geo: np.ndarray  # (n, 3) mean raw edge geometry over the node's masked edges
    occ: np.ndarray  # (n, 1)


@dataclass
class StepNoise:
    """Recorded randomness for one training step."""
    gate_eps: np.ndarray | None = None   # (n, 4)
    dropout_masks: list | None = None    # per strategy, (n, d_model) 0/1


@dataclass
class ForwardResult:
    tape: ad.Tape
    leaves: dict          # param name -> tape leaf tensor
    total: ad.Tensor      # scalar loss
    components: dict      # txt/geo/occ/imp/js -> float
    alphas: np.ndarray    # (5,) softmax loss weights snapshot
    gates: np.ndarray     # (n, 4) gate weights snapshot
    fused: ad.Tensor      # (n, d_model) final embeddings
    sparse_dist: np.ndarray
    dense_dist: np.ndarray


def attention_dims(config: RunConfig) -> AttentionDims:
    return AttentionDims(config.heads, config.d_k, config.d_model,
                         2 * config.d_model + config.d_txt)


def init_params(rng: np.random.Generator, config: RunConfig) -> dict:
    """All trainable arrays keyed by name; draw order is fixed."""
    dims = attention_dims(config)
    params = {}
    params.update(init_two_layer(rng, 3, config.d_hidden, config.d_model, "geo_enc"))
    params.update(init_two_layer(rng, 1, config.d_hidden, config.d_model, "occ_enc"))
    params.update(init_attention_params(rng, dims))
    gate_d_in = dims.d_enh if config.gate_input == "enh" else config.d_model
    params.update(moe.init_gate_params(rng, gate_d_in))
    params.update(init_two_layer(rng, config.d_model, config.d_hidden,
                                 config.d_txt, "dec_txt"))
    params.update(init_two_layer(rng, config.d_model, config.d_hidden, 3, "dec_geo"))
    params.update(init_two_layer(rng, config.d_model, config.d_hidden, 1, "dec_occ"))
    params["mask_txt"] = np.zeros(config.d_txt)
    params["mask_geo"] = np.zeros(config.d_model)
    params["mask_occ"] = np.zeros(config.d_model)
    params["loss_w"] = np.zeros(5)
    return params


def build_inputs(corpus: CheckinCorpus, graphs: dict, config: RunConfig,
                 h_txt: np.ndarray, txt_targets: np.ndarray) -> PipelineInputs:
    """Raw edge features for each sampled graph, in strategy order."""
    occ = cooccurrence(corpus, config.cooccur_window_secs)
    built = []
    for name in STRATEGY_ORDER:
        graph = graphs[name]
        src, dst = [], []
        for i, j, _rank in graph.edges():
            src.append(i)
            dst.append(j)
        src = np.asarray(src, dtype=np.intp)
        dst = np.asarray(dst, dtype=np.intp)
        geo = np.zeros((src.size, 3))
        vals = np.zeros((src.size, 1))
        for e, (i, j) in enumerate(zip(src, dst)):
            geo[e] = relpos_features(relpos(corpus, int(i), int(j)), config.s_scale_km)
            vals[e, 0] = occ[i, j]
        built.append(GraphInputs(name, src, dst, geo, vals))
    return PipelineInputs(len(corpus.pois), built, h_txt, txt_targets)


def derive_targets(inputs: PipelineInputs, selection: MaskSelection) -> ReconTargets:
    """Per-node reconstruction targets under a mask selection.

    Geometry and co-visit targets average the raw features of the node's
    masked edges across all four graphs; rows of unmasked nodes stay zero
    and never reach a loss.
    """
    n = inputs.n_nodes
    geo_acc = np.zeros((n, 3))
    geo_cnt = np.zeros(n)
    occ_acc = np.zeros((n, 1))
    occ_cnt = np.zeros(n)
    for graph, g_edges, o_edges in zip(inputs.graphs, selection.geo_edges,
                                       selection.occ_edges):
        if g_edges.size:
            np.add.at(geo_acc, graph.src[g_edges], graph.geo_feats[g_edges])
            np.add.at(geo_cnt, graph.src[g_edges], 1.0)
        if o_edges.size:
            np.add.at(occ_acc, graph.src[o_edges], graph.occ_vals[o_edges])
            np.add.at(occ_cnt, graph.src[o_edges], 1.0)
    geo = np.zeros((n, 3))
    hit = geo_cnt > 0
    geo[hit] = geo_acc[hit] / geo_cnt[hit, None]
    occ_t = np.zeros((n, 1))
    hit_o = occ_cnt > 0
    occ_t[hit_o] = occ_acc[hit_o] / occ_cnt[hit_o, None]
    return ReconTargets(inputs.txt_targets, geo, occ_t)


def masked_node_sets(inputs: PipelineInputs, selection: MaskSelection):
    """Sorted node ids holding at least one masked geo / occ edge."""
    n = inputs.n_nodes
    geo_hit = np.zeros(n, dtype=bool)
    occ_hit = np.zeros(n, dtype=bool)
    for graph, g_edges, o_edges in zip(inputs.graphs, selection.geo_edges,
                                       selection.occ_edges):
        geo_hit[graph.src[g_edges]] = True
        occ_hit[graph.src[o_edges]] = True
    return np.flatnonzero(geo_hit), np.flatnonzero(occ_hit)


def _replace_rows(base, rows: np.ndarray, token, n_rows: int):
    """Swap the given rows of a tape tensor for a broadcast learned token."""
    if rows.size == 0:
        return base
    keep = np.ones(n_rows)
    keep[rows] = 0.0
    kept = ad.scale_rows(base, ad.const(keep))
    scattered = ad.segment_sum(ad.broadcast_row(token, rows.size), rows, n_rows)
    return ad.add(kept, scattered)


def _decode(x, leaves: dict, prefix: str):
    """Two-layer reconstruction head with a tanh hidden layer."""
    hidden = ad.tanh(ad.affine(x, leaves[f"{prefix}.w1"], leaves[f"{prefix}.b1"]))
    return ad.affine(hidden, leaves[f"{prefix}.w2"], leaves[f"{prefix}.b2"])


_ZERO = np.zeros(1)


def forward(params: dict, inputs: PipelineInputs, config: RunConfig,
            selection: MaskSelection, noise: StepNoise | None = None,
            train: bool = False,
            recon_targets: ReconTargets | None = None) -> ForwardResult:
    if recon_targets is None:
        recon_targets = derive_targets(inputs, selection)
    if noise is None:
        noise = StepNoise()
    dims = attention_dims(config)
    n = inputs.n_nodes

    tape = ad.Tape()
    leaves = {name: tape.leaf(params[name]) for name in sorted(params)}

    h_txt = _replace_rows(ad.const(inputs.h_txt), selection.txt_nodes,
                          leaves["mask_txt"], n)

    x_enhs, z_finals = [], []
    for s, graph in enumerate(inputs.graphs):
        h_geo = encode_geo(leaves, ad.const(graph.geo_feats))
        h_occ = encode_occ(leaves, ad.const(graph.occ_vals))
        n_edges = graph.src.size
        h_geo = _replace_rows(h_geo, selection.geo_edges[s],
                              leaves["mask_geo"], n_edges)
        h_occ = _replace_rows(h_occ, selection.occ_edges[s],
                              leaves["mask_occ"], n_edges)
        x_enh = aggregate_node_features(n, graph.src, h_geo, h_occ, h_txt)
        drop = noise.dropout_masks[s] if (train and noise.dropout_masks
                                          and config.dropout > 0.0) else None
        z, _ = attention_forward(leaves, x_enh, graph.src, graph.dst, h_geo,
                                 h_occ, dims, config.ln_eps,
                                 plain=config.plain_attention,
                                 dropout_mask=drop,
                                 dropout_p=config.dropout if drop is not None else 0.0)
        x_enhs.append(x_enh)
        z_finals.append(z)

    pooled = x_enhs if config.gate_input == "enh" else z_finals
    gate_x = ad.scale(ad.add(ad.add(pooled[0], pooled[1]),
                             ad.add(pooled[2], pooled[3])), 0.25)
    eps = noise.gate_eps if train else None
    gates, _ = moe.gate(leaves, gate_x, config.k_experts, eps)
    mixed = moe.mix_experts(gates, z_finals)
    fused = moe.activate(mixed, config.fusion_activation)

    # dense four-expert reference mixture for the alignment term
    dense_gates, _ = moe.gate(leaves, gate_x, len(STRATEGY_ORDER), eps)
    dense_mixed = moe.mix_experts(dense_gates, z_finals)
    sparse_dist = moe.graph_distribution(mixed)
    dense_dist = moe.graph_distribution(dense_mixed)

    geo_nodes, occ_nodes = masked_node_sets(inputs, selection)
    if selection.txt_nodes.size:
        picked = ad.gather_rows(fused, selection.txt_nodes)
        loss_txt = ad.bce_logits(_decode(picked, leaves, "dec_txt"),
                                 recon_targets.txt[selection.txt_nodes])
    else:
        loss_txt = ad.const(_ZERO)
    if geo_nodes.size:
        picked = ad.gather_rows(fused, geo_nodes)
        loss_geo = ad.mse(_decode(picked, leaves, "dec_geo"),
                          recon_targets.geo[geo_nodes])
    else:
        loss_geo = ad.const(_ZERO)
    if occ_nodes.size:
        picked = ad.gather_rows(fused, occ_nodes)
        loss_occ = ad.mse(_decode(picked, leaves, "dec_occ"),
                          recon_targets.occ[occ_nodes])
    else:
        loss_occ = ad.const(_ZERO)
    loss_imp = moe.importance_loss(gates)
    loss_js = moe.js_divergence_t(sparse_dist, dense_dist)

    alphas = ad.softmax_vec(leaves["loss_w"])
    losses = ad.concat_vec([loss_txt, loss_geo, loss_occ, loss_imp, loss_js])
    total = ad.total_sum(ad.mul(alphas, losses))

    components = {
        "txt": loss_txt.item(), "geo": loss_geo.item(), "occ": loss_occ.item(),
        "imp": loss_imp.item(), "js": loss_js.item(),
    }
    return ForwardResult(tape, leaves, total, components, alphas.data.copy(),
                         gates.data.copy(), fused, sparse_dist.data.copy(),
                         dense_dist.data.copy())
