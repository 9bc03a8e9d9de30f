"""Masked self-supervised pretraining loop with resumable checkpoints.

Each epoch hides a fresh slice of the inputs (text rows per node, edge
features per graph), runs the forward pass with recorded gate noise and
dropout draws, and takes one Adam step on all parameters.  Mask selections
are a pure function of (seed, epoch), so a resumed run replays the exact
schedule; optimizer moments and the noise generator state travel inside
the checkpoint, making resume bit-identical to an uninterrupted run.
"""
from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .config import ConfigError, RunConfig, STRATEGY_ORDER
from .pipeline import (MaskSelection, PipelineInputs, StepNoise, empty_selection,
                       forward, init_params)

CHECKPOINT_FORMAT = "ADAPTGOT-CKPT-1"

LOSS_COLUMNS = ("epoch", "txt", "geo", "occ", "imp", "js", "total",
                "alpha_txt", "alpha_geo", "alpha_occ", "alpha_imp", "alpha_js")


class TrainingDiverged(RuntimeError):
    """A non-finite value surfaced during an update.

    Parameters stay at their last finite values; `rows` holds the loss
    history of the epochs that did complete.
    """

    def __init__(self, epoch: int, reason: str, rows: list | None = None):
        super().__init__(f"diverged at epoch {epoch}: {reason}")
        self.epoch = epoch
        self.rows = rows or []


def mask_count(n: int, ratio: float) -> int:
    """How many of n items one epoch hides: all-but-tiny sets take a fixed
    share, tiny sets still contribute one item."""
    if n == 0:
        return 0
    if n < 5:
        return 1
    return max(1, int(round(ratio * n)))


def make_selection(seed: int, epoch: int, inputs: PipelineInputs,
                   ratio: float) -> MaskSelection:
    """The epoch's mask, drawn from counter-keyed streams.

    Stream 0 picks text nodes; streams 1..4 and 5..8 pick geo and occ edges
    per strategy graph.  Selections are sorted, unique, and independent of
    any training-loop state.
    """
    rng = np.random.default_rng([seed, epoch, 0])
    n = inputs.n_nodes
    txt = np.sort(rng.choice(n, size=mask_count(n, ratio), replace=False))
    geo_edges, occ_edges = [], []
    for s, graph in enumerate(inputs.graphs):
        e = graph.src.size
        rng_g = np.random.default_rng([seed, epoch, 1 + s])
        geo_edges.append(np.sort(rng_g.choice(e, size=mask_count(e, ratio),
                                              replace=False)).astype(np.intp))
        rng_o = np.random.default_rng([seed, epoch, 5 + s])
        occ_edges.append(np.sort(rng_o.choice(e, size=mask_count(e, ratio),
                                              replace=False)).astype(np.intp))
    return MaskSelection(txt.astype(np.intp), geo_edges, occ_edges)


def draw_step_noise(rng: np.random.Generator, n_nodes: int,
                    config: RunConfig) -> StepNoise:
    """Gate noise and dropout masks for one step, in a fixed draw order."""
    gate_eps = rng.standard_normal((n_nodes, 4))
    masks = None
    if config.dropout > 0.0:
        masks = [(rng.random((n_nodes, config.d_model)) >= config.dropout)
                 .astype(np.float64) for _ in STRATEGY_ORDER]
    return StepNoise(gate_eps, masks)


def loss_row(epoch: int, result) -> dict:
    row = {"epoch": epoch, "total": result.total.item()}
    row.update(result.components)
    for name, a in zip(("txt", "geo", "occ", "imp", "js"), result.alphas):
        row[f"alpha_{name}"] = float(a)
    return row


def train(inputs: PipelineInputs, config: RunConfig, params: dict | None = None,
          state: ad.AdamState | None = None, rng: np.random.Generator | None = None,
          start_epoch: int = 0, on_epoch=None):
    """Run epochs [start_epoch, config.epochs); returns (params, state, rng, rows).

    on_epoch(epoch, params, state, rng, row) fires after each completed
    update, giving callers a hook for checkpoints and progress lines.
    """
    if params is None:
        params = init_params(np.random.default_rng(config.seed), config)
    if state is None:
        state = ad.AdamState(params)
    if rng is None:
        rng = np.random.default_rng([config.seed, 0xA11CE])
    rows = []
    for epoch in range(start_epoch, config.epochs):
        selection = make_selection(config.seed, epoch, inputs, config.mask_ratio)
        noise = draw_step_noise(rng, inputs.n_nodes, config)
        try:
            result = forward(params, inputs, config, selection, noise, train=True)
            grads = ad.backward(result.total)
            named = {name: grads.get(result.leaves[name]) for name in params}
            named = {k: v for k, v in named.items() if v is not None}
            ad.adam_step(params, named, state, config.lr, config.beta1,
                         config.beta2, config.adam_eps)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(epoch, str(exc), rows) from exc
        row = loss_row(epoch + 1, result)
        rows.append(row)
        if on_epoch is not None:
            on_epoch(epoch + 1, params, state, rng, row)
    return params, state, rng, rows


def evaluate_embeddings(params: dict, inputs: PipelineInputs, config: RunConfig):
    """Clean forward pass: no masks, no noise, no dropout."""
    result = forward(params, inputs, config, empty_selection(), train=False)
    return result.fused.data, result


# ---------------------------------------------------------------------------
# checkpoints


def _pack_arrays(arrays: dict) -> dict:
    return {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in arrays.items()}


def _unpack_arrays(packed: dict) -> dict:
    out = {}
    for name, rec in packed.items():
        out[name] = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
    return out


def save_checkpoint(path: str, config: RunConfig, epoch: int, params: dict,
                    state: ad.AdamState, rng: np.random.Generator) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {k: getattr(config, k) for k in config.__dataclass_fields__},
        "epoch": epoch,
        "params": _pack_arrays(params),
        "adam": {"step": state.step, "m": _pack_arrays(state.m),
                 "v": _pack_arrays(state.v)},
        "rng": rng.bit_generator.state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str):
    """Returns (config, epoch, params, adam state, rng) ready to resume."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a checkpoint file: {path}")
    config = RunConfig(**doc["config"]).validate()
    params = _unpack_arrays(doc["params"])
    state = ad.AdamState(params)
    state.step = doc["adam"]["step"]
    state.m = _unpack_arrays(doc["adam"]["m"])
    state.v = _unpack_arrays(doc["adam"]["v"])
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng"]
    return config, doc["epoch"], params, state, rng


# ---------------------------------------------------------------------------
# delimited outputs


def write_loss_csv(path: str, rows: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(LOSS_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row["epoch"])] + [repr(row[c]) for c in LOSS_COLUMNS[1:]]
            fh.write(",".join(cells) + "\n")


def write_embeddings(path: str, poi_ext: list, embeddings: np.ndarray) -> None:
    if len(poi_ext) != embeddings.shape[0]:
        raise ValueError(f"{len(poi_ext)} ids vs {embeddings.shape[0]} rows")
    with open(path, "w", encoding="utf-8") as fh:
        width = embeddings.shape[1]
        fh.write("poi," + ",".join(f"v{i}" for i in range(width)) + "\n")
        for ext, row in zip(poi_ext, embeddings):
            fh.write(ext + "," + ",".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path: str):
    """Returns (poi external ids, float matrix) from write_embeddings output."""
    ids, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("poi,"):
            raise ValueError(f"not an embeddings file: {path}")
        for line in fh:
            cells = line.rstrip("\n").split(",")
            ids.append(cells[0])
            rows.append([float(x) for x in cells[1:]])
    return ids, np.array(rows)


def write_gates(path: str, poi_ext: list, gates: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("poi," + ",".join(f"gate_{s}" for s in STRATEGY_ORDER) + "\n")
        for ext, row in zip(poi_ext, gates):
            fh.write(ext + "," + ",".join(repr(float(x)) for x in row) + "\n")
