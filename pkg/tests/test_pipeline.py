"""Full forward pass: wiring, masking semantics, loss plumbing, gradients."""
import numpy as np

import adaptgot.autodiff as ad
from adaptgot import corpus as cp
from adaptgot import pipeline as pl
from adaptgot import sampling as sp
from adaptgot.config import RunConfig, STRATEGY_ORDER
from adaptgot.got_repr import HashingBow, relpos, relpos_features
from helpers import max_rel_err, numeric_gradient

from test_corpus import checkin_rec, poi_rec, write_corpus
from test_got_repr import review_rec


def tiny_config(**over) -> RunConfig:
    base = dict(k=2, heads=2, d_k=2, d_model=4, d_txt=8, d_hidden=3,
                dropout=0.0, epochs=3, seed=0)
    base.update(over)
    return RunConfig(**base).validate()


def tiny_corpus(tmp_path, n_pois=6):
    rng = np.random.default_rng(7)
    words = ["good", "bad", "coffee", "museum", "park", "noisy"]
    recs = [poi_rec(f"p{i}", float(rng.uniform(0, 0.5)), float(rng.uniform(0, 0.5)),
                    cat=f"c{i % 2}") for i in range(n_pois)]
    t = 0
    for u in range(3):
        for _ in range(6):
            t += 60
            poi = int(rng.integers(0, n_pois))
            recs.append(checkin_rec(f"u{u}", f"p{poi}", t))
    for i in range(n_pois):
        recs.append(review_rec("u0", f"p{i}", f"{words[i % 6]} {words[(i+1) % 6]}"))
    return cp.ingest(write_corpus(tmp_path / "tiny.jsonl", recs))


def build_setup(tmp_path, config=None, n_pois=6):
    config = config or tiny_config()
    corpus = tiny_corpus(tmp_path, n_pois)
    graphs = sp.build_all_subgraphs(corpus, config)
    bow = HashingBow(dim=config.d_txt, salt=config.text_salt)
    inputs = pl.build_inputs(corpus, graphs, config, bow.embed_all(corpus),
                             bow.targets_all(corpus))
    params = pl.init_params(np.random.default_rng(config.seed), config)
    return corpus, graphs, inputs, params, config


def small_selection(inputs, seed=3):
    rng = np.random.default_rng(seed)
    txt = np.sort(rng.choice(inputs.n_nodes, size=2, replace=False)).astype(np.intp)
    geo_edges, occ_edges = [], []
    for g in inputs.graphs:
        e = g.src.size
        geo_edges.append(np.sort(rng.choice(e, size=min(2, e), replace=False)).astype(np.intp))
        occ_edges.append(np.sort(rng.choice(e, size=min(2, e), replace=False)).astype(np.intp))
    return pl.MaskSelection(txt, geo_edges, occ_edges)


def test_build_inputs_matches_graph_edges_and_features(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    assert [g.strategy for g in inputs.graphs] == list(STRATEGY_ORDER)
    occ = cp.cooccurrence(corpus)
    for name, gin in zip(STRATEGY_ORDER, inputs.graphs):
        want_edges = [(s, d) for s, d, _ in graphs[name].edges()]
        assert list(zip(gin.src.tolist(), gin.dst.tolist())) == want_edges
        for e, (i, j) in enumerate(want_edges):
            feats = relpos_features(relpos(corpus, i, j), config.s_scale_km)
            assert np.array_equal(gin.geo_feats[e], feats)
            assert gin.occ_vals[e, 0] == occ[i, j]


def test_forward_shapes_and_initial_alphas(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    res = pl.forward(params, inputs, config, small_selection(inputs))
    n = inputs.n_nodes
    assert res.fused.data.shape == (n, config.d_model)
    assert res.gates.shape == (n, 4)
    assert np.array_equal((res.gates > 0).sum(axis=1), np.full(n, config.k_experts))
    # untrained loss weights are zero, so the combination is uniform
    assert np.max(np.abs(res.alphas - 0.2)) < 1e-15
    assert set(res.components) == {"txt", "geo", "occ", "imp", "js"}
    want = 0.2 * sum(res.components.values())
    assert abs(res.total.item() - want) < 1e-12


def test_empty_selection_zeroes_reconstruction_losses(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    res = pl.forward(params, inputs, config, pl.empty_selection())
    assert res.components["txt"] == 0.0
    assert res.components["geo"] == 0.0
    assert res.components["occ"] == 0.0
    assert res.components["imp"] > 0.0


def test_dense_gate_makes_alignment_term_exactly_zero(tmp_path):
    config = tiny_config(k_experts=4)
    corpus, graphs, inputs, params, config = build_setup(tmp_path, config)
    res = pl.forward(params, inputs, config, small_selection(inputs))
    assert res.components["js"] == 0.0
    assert np.array_equal(res.sparse_dist, res.dense_dist)


def test_derive_targets_averages_masked_edges(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    g0 = inputs.graphs[0]
    # two masked geo edges of the same source node
    src0 = g0.src[0]
    same = np.flatnonzero(g0.src == src0)[:2].astype(np.intp)
    sel = pl.empty_selection()
    sel = pl.MaskSelection(sel.txt_nodes,
                           [same] + [np.zeros(0, dtype=np.intp)] * 3,
                           list(sel.occ_edges))
    targets = pl.derive_targets(inputs, sel)
    want = g0.geo_feats[same].mean(axis=0)
    assert np.allclose(targets.geo[src0], want, atol=1e-15)
    other = np.ones(inputs.n_nodes, dtype=bool)
    other[src0] = False
    assert np.all(targets.geo[other] == 0.0)
    geo_nodes, occ_nodes = pl.masked_node_sets(inputs, sel)
    assert geo_nodes.tolist() == [src0]
    assert occ_nodes.size == 0


def test_losses_ignore_unmasked_target_rows(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    sel = small_selection(inputs)
    targets = pl.derive_targets(inputs, sel)
    base = pl.forward(params, inputs, config, sel, recon_targets=targets)

    rng = np.random.default_rng(9)
    geo_nodes, occ_nodes = pl.masked_node_sets(inputs, sel)
    perturbed = pl.ReconTargets(targets.txt.copy(), targets.geo.copy(),
                                targets.occ.copy())
    for i in range(inputs.n_nodes):
        if i not in sel.txt_nodes:
            perturbed.txt[i] = rng.integers(0, 2, size=targets.txt.shape[1])
        if i not in geo_nodes:
            perturbed.geo[i] = rng.normal(size=3)
        if i not in occ_nodes:
            perturbed.occ[i] = rng.normal(size=1)
    res = pl.forward(params, inputs, config, sel, recon_targets=perturbed)
    assert res.components == base.components
    assert res.total.item() == base.total.item()


def test_masked_rows_do_not_leak_their_inputs(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    sel = small_selection(inputs)
    targets = pl.derive_targets(inputs, sel)
    base = pl.forward(params, inputs, config, sel, recon_targets=targets)

    # overwrite the text vector of a masked node and the raw features of
    # masked edges: the learned tokens replace them, so nothing may move
    hacked = pl.PipelineInputs(
        inputs.n_nodes,
        [pl.GraphInputs(g.strategy, g.src, g.dst, g.geo_feats.copy(),
                        g.occ_vals.copy()) for g in inputs.graphs],
        inputs.h_txt.copy(), inputs.txt_targets)
    hacked.h_txt[sel.txt_nodes] = 123.456
    for g, edges in zip(hacked.graphs, sel.geo_edges):
        g.geo_feats[edges] = 77.7
    for g, edges in zip(hacked.graphs, sel.occ_edges):
        g.occ_vals[edges] = 1.0  # stay inside the validated [0, 1] range
    res = pl.forward(params, hacked, config, sel, recon_targets=targets)
    assert np.array_equal(res.fused.data, base.fused.data)
    assert res.components == base.components


def test_forward_is_deterministic(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    sel = small_selection(inputs)
    a = pl.forward(params, inputs, config, sel)
    b = pl.forward(params, inputs, config, sel)
    assert np.array_equal(a.fused.data, b.fused.data)
    assert a.components == b.components
    assert np.array_equal(a.gates, b.gates)


def test_training_noise_changes_the_gate(tmp_path):
    corpus, graphs, inputs, params, config = build_setup(tmp_path)
    sel = small_selection(inputs)
    rng = np.random.default_rng(5)
    noise = pl.StepNoise(gate_eps=rng.normal(size=(inputs.n_nodes, 4)))
    clean = pl.forward(params, inputs, config, sel)
    noisy = pl.forward(params, inputs, config, sel, noise=noise, train=True)
    assert not np.array_equal(clean.gates, noisy.gates)


def test_full_pipeline_gradients(tmp_path):
    config = tiny_config(d_txt=4, d_hidden=2)
    corpus, graphs, inputs, params, config = build_setup(tmp_path, config)
    sel = small_selection(inputs)
    targets = pl.derive_targets(inputs, sel)
    rng = np.random.default_rng(21)
    noise = pl.StepNoise(
        gate_eps=rng.normal(size=(inputs.n_nodes, 4)),
        dropout_masks=None)
    names = sorted(params)

    def run(arrays):
        p = {n: a for n, a in zip(names, arrays)}
        res = pl.forward(p, inputs, config, sel, noise=noise, train=True,
                         recon_targets=targets)
        return res.total.item()

    res = pl.forward(params, inputs, config, sel, noise=noise, train=True,
                     recon_targets=targets)
    grads = ad.backward(res.total)
    analytic = [grads.get(res.leaves[n], np.zeros_like(params[n])) for n in names]
    arrays = [params[n].copy() for n in names]
    numeric = numeric_gradient(run, arrays)
    worst_name, worst = None, 0.0
    for name, a, g in zip(names, analytic, numeric):
        err = max_rel_err(a, g)
        if err > worst:
            worst_name, worst = name, err
    assert worst < 1e-3, f"{worst_name}: rel err {worst:.2e}"
