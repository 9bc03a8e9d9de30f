"""Command-line front end: synth, ingest, sample, pretrain, embed, eval, wl-lab.

Every command that takes an output directory creates it, drops its artifacts
there, and echoes one "wrote <path>" line per artifact.  Commands that run
under a config also write config.lock, the canonical key=value echo of the
effective settings.

Exit codes: 0 success, 2 missing input or bad usage, 3 validation failure,
4 training divergence.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import corpus as cp
from . import pipeline as pl
from . import plots
from . import pretrain as pt
from . import sampling as sp
from . import wl_lab as wl
from .config import ConfigError, RunConfig, apply_settings, config_lock_text, load_config
from .evaluation import baseline_embeddings, evaluate, write_metrics_csv
from .got_repr import HashingBow, PrecomputedText
from .synth import SynthSpec, write_dataset

# (alphabet size, feature count) grid for the label-collision report
CONFLICT_GRID = ((2, 1), (2, 2), (2, 3), (2, 4),
                 (3, 1), (3, 2), (3, 3), (5, 1), (5, 2))


def _fail(code: int, msg: str) -> int:
    print(f"adaptgot: {msg}", file=sys.stderr)
    return code


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _note(path: str) -> None:
    print(f"wrote {path}")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _settings(pairs: list) -> dict:
    settings = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        settings[key.strip()] = val.strip()
    return settings


def _build_text(corpus, config: RunConfig, vectors_path, lock_dim: bool = False):
    """Per-POI text embeddings plus binary reconstruction targets.

    Precomputed vectors override d_txt; lock_dim refuses the override when
    existing parameters already fix the width.
    """
    if vectors_path:
        model = PrecomputedText.load(vectors_path)
        if lock_dim and model.dim != config.d_txt:
            raise ConfigError(f"checkpoint expects d_txt={config.d_txt}, "
                              f"text vectors are {model.dim} wide")
        config.d_txt = model.dim
        h = model.embed_all(corpus)
        # reconstruction asks which coordinates are active, not their values
        return h, (h > 0).astype(np.float64)
    bow = HashingBow(dim=config.d_txt, salt=config.text_salt)
    return bow.embed_all(corpus), bow.targets_all(corpus)


def _assemble(corpus, config: RunConfig, vectors_path=None, lock_dim: bool = False):
    """Corpus to model inputs: subgraphs, edge features, text features."""
    if config.materialize_distance:
        corpus.materialize_distances()
    lexicon = sp.load_lexicon(config.lexicon) if config.lexicon else None
    graphs = sp.build_all_subgraphs(corpus, config, lexicon)
    h_txt, targets = _build_text(corpus, config, vectors_path, lock_dim)
    return pl.build_inputs(corpus, graphs, config, h_txt, targets)


def _write_clean_outputs(out: str, corpus, params: dict, inputs, config: RunConfig):
    """embeddings.csv and gates.csv from a mask-free, noise-free pass."""
    embeddings, result = pt.evaluate_embeddings(params, inputs, config)
    emb_path = os.path.join(out, "embeddings.csv")
    pt.write_embeddings(emb_path, corpus.poi_ext, embeddings)
    _note(emb_path)
    gates_path = os.path.join(out, "gates.csv")
    pt.write_gates(gates_path, corpus.poi_ext, result.gates)
    _note(gates_path)
    return result


def _write_lock(out: str, config: RunConfig) -> None:
    path = os.path.join(out, "config.lock")
    _write_text(path, config_lock_text(config))
    _note(path)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(ns) -> int:
    spec = SynthSpec(n_pois=ns.pois, n_users=ns.users, n_clusters=ns.clusters,
                     checkins_per_user=ns.checkins_per_user,
                     reviews_per_poi=ns.reviews_per_poi,
                     in_cluster_prob=ns.in_cluster_prob,
                     category_flip_prob=ns.category_flip_prob,
                     cluster_spacing_deg=ns.spacing_deg,
                     poi_sigma_km=ns.sigma_km, seed=ns.seed).validate()
    corpus_path, lexicon_path = write_dataset(spec, _ensure_out(ns.out))
    _note(corpus_path)
    _note(lexicon_path)
    return 0


def cmd_ingest(ns) -> int:
    corpus = cp.ingest(ns.corpus)
    print(f"{corpus.n_pois} POIs, {corpus.n_users} users, "
          f"{corpus.n_checkins} check-ins, {len(corpus.reviews)} reviews")
    if ns.out:
        path = os.path.join(_ensure_out(ns.out), "corpus.jsonl")
        cp.export(corpus, path)
        _note(path)
    return 0


def cmd_sample(ns) -> int:
    config = load_config(ns.config, ns.set, ns.seed)
    if ns.lexicon:
        config.lexicon = ns.lexicon
    corpus = cp.ingest(ns.corpus)
    if config.materialize_distance:
        corpus.materialize_distances()
    lexicon = sp.load_lexicon(config.lexicon) if config.lexicon else None
    graphs = sp.build_all_subgraphs(corpus, config, lexicon)
    out = _ensure_out(ns.out)
    path = os.path.join(out, "graphs.json")
    sp.export_graphs(graphs, path)
    _note(path)
    _write_lock(out, config)
    for name, graph in graphs.items():
        n_edges = sum(len(nbrs) for nbrs in graph.neighbors)
        print(f"{name.value}: {graph.n_nodes()} nodes, {n_edges} edges")
    return 0


def cmd_pretrain(ns) -> int:
    if ns.checkpoint_every is not None and ns.checkpoint_every < 1:
        raise ConfigError("--checkpoint-every must be >= 1")
    if ns.resume:
        config, start_epoch, params, state, rng = pt.load_checkpoint(ns.resume)
        if ns.set:
            apply_settings(config, _settings(ns.set))
        if ns.seed is not None:
            config.seed = ns.seed
        config.validate()
    else:
        config, start_epoch = load_config(ns.config, ns.set, ns.seed), 0
        params = state = rng = None
    if ns.lexicon:
        config.lexicon = ns.lexicon
    corpus = cp.ingest(ns.corpus)
    inputs = _assemble(corpus, config, ns.text_vectors, lock_dim=ns.resume is not None)
    out = _ensure_out(ns.out)
    _write_lock(out, config)

    ckpt_path = os.path.join(out, "checkpoint.json")
    on_epoch = None
    if ns.checkpoint_every:
        def on_epoch(epoch, params, state, rng, row):
            if epoch % ns.checkpoint_every == 0:
                pt.save_checkpoint(ckpt_path, config, epoch, params, state, rng)

    loss_path = os.path.join(out, "loss.csv")
    try:
        params, state, rng, rows = pt.train(inputs, config, params, state, rng,
                                            start_epoch, on_epoch)
    except pt.TrainingDiverged as exc:
        # keep what finished so the run is still inspectable
        pt.write_loss_csv(loss_path, exc.rows)
        _note(loss_path)
        return _fail(4, str(exc))
    pt.write_loss_csv(loss_path, rows)
    _note(loss_path)
    pt.save_checkpoint(ckpt_path, config, config.epochs, params, state, rng)
    _note(ckpt_path)
    result = _write_clean_outputs(out, corpus, params, inputs, config)
    if rows:
        curve_path = os.path.join(out, "loss_curve.png")
        plots.loss_curve(rows, curve_path)
        _note(curve_path)
    usage_path = os.path.join(out, "expert_usage.png")
    plots.expert_usage(result.gates, usage_path)
    _note(usage_path)
    if rows:
        print(f"epoch {rows[-1]['epoch']}: total loss {rows[-1]['total']:.6f}")
    return 0


def cmd_embed(ns) -> int:
    config, _, params, _, _ = pt.load_checkpoint(ns.checkpoint)
    if ns.lexicon:
        config.lexicon = ns.lexicon
    corpus = cp.ingest(ns.corpus)
    inputs = _assemble(corpus, config, ns.text_vectors, lock_dim=True)
    out = _ensure_out(ns.out)
    _write_lock(out, config)
    _write_clean_outputs(out, corpus, params, inputs, config)
    return 0


def cmd_eval(ns) -> int:
    config = load_config(ns.config, ns.set, ns.seed)
    corpus = cp.ingest(ns.corpus)
    ids, embeddings = pt.load_embeddings(ns.embeddings)
    if ids != corpus.poi_ext:
        raise cp.CorpusError("embedding ids do not match the corpus POIs")
    ks = tuple(int(x) for x in ns.ks.split(",") if x.strip())
    if not ks:
        raise ConfigError(f"--ks has no cutoffs: {ns.ks!r}")
    tables = [(ns.label, embeddings)]
    for kind in (k.strip() for k in ns.baselines.split(",") if k.strip()):
        tables.append((kind, baseline_embeddings(kind, corpus.n_pois,
                                                 embeddings.shape[1], config.seed)))
    rows = []
    for label, table in tables:
        for row in evaluate(corpus, table, ks, config.probe_lambda):
            row["embedding"] = label
            row["seed"] = config.seed
            rows.append(row)
    out = _ensure_out(ns.out)
    metrics_path = os.path.join(out, "metrics.csv")
    write_metrics_csv(metrics_path, rows)
    _note(metrics_path)
    for metric in ("recall", "ndcg"):
        fig_path = os.path.join(out, f"{metric}.png")
        plots.metric_bars(rows, fig_path, metric)
        _note(fig_path)
    _write_lock(out, config)
    return 0


def cmd_wl_lab(ns) -> int:
    out = _ensure_out(ns.out)

    ladder = wl.entropy_ladder()
    ladder_path = os.path.join(out, "entropy_ladder.csv")
    with open(ladder_path, "w", encoding="utf-8") as fh:
        fh.write("name,entropy,expected\n")
        for row in ladder:
            fh.write(f"{row['name']},{row['entropy']!r},{row['expected']!r}\n")
    _note(ladder_path)
    ladder_fig = os.path.join(out, "entropy_ladder.png")
    plots.entropy_ladder_figure(ladder, ladder_fig)
    _note(ladder_fig)

    rng = np.random.default_rng([ns.seed, 1])
    entries = []
    for alphabet, d in CONFLICT_GRID:
        entries.append({"alphabet": alphabet, "d": d,
                        "exact": wl.conflict_probability_exact(alphabet, d),
                        "mc": wl.conflict_probability_mc(alphabet, d, ns.trials, rng)})
    conflict_path = os.path.join(out, "conflict.csv")
    with open(conflict_path, "w", encoding="utf-8") as fh:
        fh.write("alphabet,d,exact,mc,trials\n")
        for e in entries:
            fh.write(f"{e['alphabet']},{e['d']},{e['exact']!r},{e['mc']!r},"
                     f"{ns.trials}\n")
    _note(conflict_path)
    conflict_fig = os.path.join(out, "conflict.png")
    plots.conflict_figure(entries, conflict_fig)
    _note(conflict_fig)

    rng = np.random.default_rng([ns.seed, 2])
    violation = None
    dominance_path = os.path.join(out, "dominance.csv")
    with open(dominance_path, "w", encoding="utf-8") as fh:
        fh.write("instance,h_single,h_multi\n")
        for i in range(ns.instances):
            g, family = wl.random_instance(rng, ns.nodes)
            single, multi = wl.h_single(g, family), wl.h_multi(g, family)
            fh.write(f"{i},{single!r},{multi!r}\n")
            if multi < single - 1e-12 and violation is None:
                violation = (i, single, multi)
    _note(dominance_path)
    if violation is not None:
        i, single, multi = violation
        return _fail(3, f"dominance violated on instance {i}: "
                        f"combined {multi} < best single {single}")
    print(f"dominance holds on {ns.instances} instances of {ns.nodes} nodes")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", help="JSON or key=value settings file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one setting (repeatable)")
    sub.add_argument("--seed", type=int, help="override the run seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptgot",
        description="Contextual subgraph pretraining for POI check-in data.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate a clustered synthetic corpus")
    defaults = SynthSpec()
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pois", type=int, default=defaults.n_pois)
    p.add_argument("--users", type=int, default=defaults.n_users)
    p.add_argument("--clusters", type=int, default=defaults.n_clusters)
    p.add_argument("--checkins-per-user", type=int,
                   default=defaults.checkins_per_user)
    p.add_argument("--reviews-per-poi", type=int, default=defaults.reviews_per_poi)
    p.add_argument("--in-cluster-prob", type=float, default=defaults.in_cluster_prob)
    p.add_argument("--category-flip-prob", type=float,
                   default=defaults.category_flip_prob)
    p.add_argument("--spacing-deg", type=float, default=defaults.cluster_spacing_deg)
    p.add_argument("--sigma-km", type=float, default=defaults.poi_sigma_km)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a corpus and print its shape")
    p.add_argument("--corpus", required=True, help="JSONL corpus path")
    p.add_argument("--out", help="also write the normalized corpus here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="build the four context subgraphs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", help="word<TAB>polarity file for review weighting")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("pretrain", help="run masked pretraining end to end")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--text-vectors",
                   help="JSONL {poi, vec} file replacing hashed review text")
    p.add_argument("--resume", metavar="CHECKPOINT",
                   help="continue from a checkpoint (config file is ignored)")
    p.add_argument("--checkpoint-every", type=int, metavar="N",
                   help="also write checkpoint.json every N epochs")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="emit embeddings from a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--text-vectors")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="score embeddings on next-visit probes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True, help="embeddings.csv path")
    p.add_argument("--label", default="trained",
                   help="embedding column value for the scored table")
    p.add_argument("--ks", default="1,5,10", help="comma-separated cutoffs")
    p.add_argument("--baselines", default="random,onehot",
                   help="comma-separated reference tables; empty to skip")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("wl-lab", help="separation entropy and collision reports")
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=100_000,
                   help="Monte Carlo trials per collision cell")
    p.add_argument("--instances", type=int, default=200,
                   help="random instances for the dominance sweep")
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_wl_lab)

    return parser


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse printed its own message
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        return _fail(2, f"missing input: {exc}")
    except pt.TrainingDiverged as exc:
        return _fail(4, str(exc))
    except ValueError as exc:  # covers every domain validation error
        return _fail(3, str(exc))


if __name__ == "__main__":
    sys.exit(main())
