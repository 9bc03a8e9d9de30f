"""Report figures rendered straight to files; no display backend needed."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .config import STRATEGY_ORDER

LOSS_SERIES = ("txt", "geo", "occ", "imp", "js", "total")


def loss_curve(rows: list, path: str) -> None:
    """Per-component training losses over epochs."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = [row["epoch"] for row in rows]
    for name in LOSS_SERIES:
        width = 2.0 if name == "total" else 1.0
        ax.plot(epochs, [row[name] for row in rows], label=name, linewidth=width)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("pretraining losses")
    ax.legend(ncol=3, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def expert_usage(gates: np.ndarray, path: str) -> None:
    """Mean gate mass per sampling strategy."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    mass = gates.mean(axis=0)
    ax.bar(range(len(STRATEGY_ORDER)), mass)
    ax.set_xticks(range(len(STRATEGY_ORDER)), STRATEGY_ORDER)
    ax.set_ylabel("mean gate weight")
    ax.set_title("expert utilization")
    ax.axhline(1.0 / len(STRATEGY_ORDER), linestyle="--", linewidth=1.0,
               color="gray")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def metric_bars(rows: list, path: str, metric: str = "recall") -> None:
    """Grouped bars over (probe, embedding) pairs, one group per cutoff."""
    pairs = sorted({(r["probe"], r["embedding"]) for r in rows})
    ks = sorted({r["K"] for r in rows})
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(pairs), 4))
    width = 0.8 / max(len(ks), 1)
    for slot, k in enumerate(ks):
        xs, ys = [], []
        for p, pair in enumerate(pairs):
            match = [r[metric] for r in rows
                     if (r["probe"], r["embedding"]) == pair and r["K"] == k]
            if match:
                xs.append(p + slot * width)
                ys.append(match[0])
        ax.bar(xs, ys, width=width, label=f"K={k}")
    ax.set_xticks([p + 0.4 - width / 2 for p in range(len(pairs))],
                  [f"{probe}\n{emb}" for probe, emb in pairs], fontsize=8)
    ax.set_ylabel(metric)
    ax.set_title(f"probe {metric}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def entropy_ladder_figure(ladder: list, path: str) -> None:
    """Measured coloring entropy against the pinned expectations."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(ladder))
    width = 0.38
    ax.bar(xs - width / 2, [row["entropy"] for row in ladder], width,
           label="measured")
    ax.bar(xs + width / 2, [row["expected"] for row in ladder], width,
           label="expected")
    ax.set_xticks(xs, [row["name"] for row in ladder], fontsize=8)
    ax.set_ylabel("entropy (bits)")
    ax.set_title("separation entropy ladder")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def conflict_figure(entries: list, path: str) -> None:
    """Label-collision rate versus feature count, MC dots on the analytic line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    alphabets = sorted({e["alphabet"] for e in entries})
    for a in alphabets:
        sub = sorted((e for e in entries if e["alphabet"] == a),
                     key=lambda e: e["d"])
        ds = [e["d"] for e in sub]
        ax.plot(ds, [e["exact"] for e in sub], linewidth=1.0,
                label=f"alphabet {a} analytic")
        ax.plot(ds, [e["mc"] for e in sub], "o", markersize=4,
                label=f"alphabet {a} sampled")
    ax.set_yscale("log")
    ax.set_xlabel("independent features")
    ax.set_ylabel("collision probability")
    ax.set_title("initial label collisions")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
