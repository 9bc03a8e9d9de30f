"""Tape-based reverse-mode differentiation over float64 numpy arrays.

The design is a Wengert list: every tracked tensor appends one record to a
Tape, and backward() replays the records in reverse exactly once.  Only the
operations the pipeline needs are provided; each op validates shapes up
front and refuses to emit non-finite values, so a NaN surfaces at the op
that produced it instead of at the end of training.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or infinity."""


class TapeError(RuntimeError):
    """Tape misuse: mixing tapes or differentiating a consumed tape."""


class Tensor:
    """A float64 array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "idx")

    def __init__(self, data, tape=None, idx=None):
        self.data = data
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        kind = "leaf" if (self.tape and self.idx is not None) else "const"
        return f"Tensor({kind}, shape={self.data.shape})"


class Tape:
    """Append-only record list; one forward pass, one backward pass."""

    def __init__(self):
        self.records = []  # (out_idx, input idxs, backward fn)
        self.n_nodes = 0
        self.consumed = False

    def _new_idx(self) -> int:
        idx = self.n_nodes
        self.n_nodes += 1
        return idx

    def leaf(self, data) -> Tensor:
        arr = _as_f64(data)
        _require_finite(arr, "leaf")
        return Tensor(arr, self, self._new_idx())


def const(data) -> Tensor:
    arr = _as_f64(data)
    _require_finite(arr, "const")
    return Tensor(arr)


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return np.ascontiguousarray(arr)


def _require_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in result")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(x)


def _tape_of(inputs) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands live on different tapes")
    return tape


def _emit(op: str, out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    """Register one op result.  backward_fn(g) returns per-input grads."""
    _require_finite(out_data, op)
    tape = _tape_of(inputs)
    out = Tensor(out_data, tape)
    if tape is not None:
        out.idx = tape._new_idx()
        in_idxs = tuple(t.idx for t in inputs)
        tape.records.append((out.idx, in_idxs, backward_fn))
    return out


def backward(loss: Tensor) -> dict:
    """Reverse sweep from a scalar loss.

    Returns a map from Tensor to gradient array; tensors the loss does not
    depend on are simply absent.  The tape is consumed: a second call on the
    same tape raises.
    """
    if loss.tape is None or loss.idx is None:
        raise TapeError("loss is not tracked on any tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = loss.tape
    if tape.consumed:
        raise TapeError("backward called twice on the same tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {loss.idx: np.ones_like(loss.data)}
    for out_idx, in_idxs, fn in reversed(tape.records):
        g = grads.get(out_idx)
        if g is None:
            continue
        for idx, gi in zip(in_idxs, fn(g)):
            if idx is None or gi is None:
                continue
            acc = grads.get(idx)
            grads[idx] = gi if acc is None else acc + gi
    return _GradMap(grads)


class _GradMap:
    """Gradient lookup keyed by Tensor."""

    def __init__(self, by_idx):
        self._by_idx = by_idx

    def get(self, t: Tensor, default=None):
        if t.idx is None:
            return default
        g = self._by_idx.get(t.idx)
        return default if g is None else g

    def __getitem__(self, t: Tensor):
        g = self.get(t)
        if g is None:
            raise KeyError("no gradient recorded for this tensor")
        return g


# ---------------------------------------------------------------------------
# elementwise and linear ops


def affine(x, w, b) -> Tensor:
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine: x {x.data.shape} incompatible with w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine: b {b.data.shape} incompatible with w {w.data.shape}")
    out = x.data @ w.data + b.data

    def bwd(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _emit("affine", out, (x, w, b), bwd)


def matmul(x, w) -> Tensor:
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"matmul: x {x.data.shape} incompatible with w {w.data.shape}")
    out = x.data @ w.data

    def bwd(g):
        return g @ w.data.T, x.data.T @ g

    return _emit("matmul", out, (x, w), bwd)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} vs {b.data.shape}")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} vs {b.data.shape}")
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data

    def bwd(g):
        return g * b.data, g * a.data

    return _emit("mul", out, (a, b), bwd)


def scale(x, c: float) -> Tensor:
    x = _wrap(x)
    c = float(c)
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def scale_rows(m, s) -> Tensor:
    """Multiply row i of m by s[i]."""
    m, s = _wrap(m), _wrap(s)
    if m.data.ndim != 2 or s.data.shape != (m.data.shape[0],):
        raise ShapeError(f"scale_rows: m {m.data.shape} vs s {s.data.shape}")
    out = m.data * s.data[:, None]

    def bwd(g):
        return g * s.data[:, None], (g * m.data).sum(axis=1)

    return _emit("scale_rows", out, (m, s), bwd)


def broadcast_row(v, n: int) -> Tensor:
    """Tile a vector into n identical rows."""
    v = _wrap(v)
    if v.data.ndim != 1:
        raise ShapeError(f"broadcast_row: expected 1-d, got {v.data.shape}")
    out = np.tile(v.data, (n, 1))
    return _emit("broadcast_row", out, (v,), lambda g: (g.sum(axis=0),))


def col(m, j: int) -> Tensor:
    m = _wrap(m)
    if m.data.ndim != 2 or not 0 <= j < m.data.shape[1]:
        raise ShapeError(f"col: index {j} out of range for {m.data.shape}")
    out = m.data[:, j].copy()

    def bwd(g):
        gm = np.zeros_like(m.data)
        gm[:, j] = g
        return (gm,)

    return _emit("col", out, (m,), bwd)


def rowsum(m) -> Tensor:
    m = _wrap(m)
    if m.data.ndim != 2:
        raise ShapeError(f"rowsum: expected 2-d, got {m.data.shape}")
    out = m.data.sum(axis=1)
    n_cols = m.data.shape[1]
    return _emit("rowsum", out, (m,), lambda g: (np.repeat(g[:, None], n_cols, axis=1),))


def sum0(m) -> Tensor:
    """Column sums: (n, d) -> (d,)."""
    m = _wrap(m)
    if m.data.ndim != 2:
        raise ShapeError(f"sum0: expected 2-d, got {m.data.shape}")
    out = m.data.sum(axis=0)
    n_rows = m.data.shape[0]
    return _emit("sum0", out, (m,), lambda g: (np.tile(g, (n_rows, 1)),))


def mean0(m) -> Tensor:
    m = _wrap(m)
    if m.data.ndim != 2 or m.data.shape[0] == 0:
        raise ShapeError(f"mean0: expected non-empty 2-d, got {m.data.shape}")
    n_rows = m.data.shape[0]
    out = m.data.mean(axis=0)
    return _emit("mean0", out, (m,), lambda g: (np.tile(g / n_rows, (n_rows, 1)),))


def total_sum(x) -> Tensor:
    x = _wrap(x)
    out = np.array([x.data.sum()])
    return _emit("total_sum", out, (x,), lambda g: (np.full_like(x.data, g[0]),))


def mean_all(x) -> Tensor:
    x = _wrap(x)
    if x.data.size == 0:
        raise ShapeError("mean_all: empty input")
    size = x.data.size
    out = np.array([x.data.mean()])
    return _emit("mean_all", out, (x,), lambda g: (np.full_like(x.data, g[0] / size),))


# ---------------------------------------------------------------------------
# gathers and segment reductions


def gather_rows(x, idx) -> Tensor:
    x = _wrap(x)
    index = np.asarray(idx, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-d, got {x.data.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.data.shape[0]} rows")
    out = x.data[index]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("gather_rows", out, (x,), bwd)


def segment_sum(x, groups, n_groups: int) -> Tensor:
    """Sum rows of x into n_groups buckets given per-row group ids."""
    x = _wrap(x)
    gid = np.asarray(groups, dtype=np.intp)
    if x.data.ndim != 2 or gid.shape != (x.data.shape[0],):
        raise ShapeError(f"segment_sum: x {x.data.shape} vs groups {gid.shape}")
    if gid.size and (gid.min() < 0 or gid.max() >= n_groups):
        raise ShapeError(f"segment_sum: group id out of range for {n_groups} groups")
    out = np.zeros((n_groups, x.data.shape[1]))
    np.add.at(out, gid, x.data)
    return _emit("segment_sum", out, (x,), lambda g: (g[gid],))


def segment_softmax(s, groups, n_groups: int) -> Tensor:
    """Softmax of a score vector within each group (empty groups allowed)."""
    s = _wrap(s)
    gid = np.asarray(groups, dtype=np.intp)
    if s.data.ndim != 1 or gid.shape != s.data.shape:
        raise ShapeError(f"segment_softmax: s {s.data.shape} vs groups {gid.shape}")
    if gid.size and (gid.min() < 0 or gid.max() >= n_groups):
        raise ShapeError(f"segment_softmax: group id out of range for {n_groups} groups")
    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, gid, s.data)
    ex = np.exp(s.data - gmax[gid])
    denom = np.zeros(n_groups)
    np.add.at(denom, gid, ex)
    out = ex / denom[gid]

    def bwd(g):
        dot = np.zeros(n_groups)
        np.add.at(dot, gid, g * out)
        return (out * (g - dot[gid]),)

    return _emit("segment_softmax", out, (s,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out = _sigmoid(x.data)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)
    return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(x) -> Tensor:
    x = _wrap(x)
    out = _softplus(x.data)
    return _emit("softplus", out, (x,), lambda g: (g * _sigmoid(x.data),))


def log(x) -> Tensor:
    x = _wrap(x)
    if np.any(x.data <= 0.0):
        raise NonFiniteError("log: non-positive input")
    out = np.log(x.data)
    return _emit("log", out, (x,), lambda g: (g / x.data,))


def softmax_rows(x) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-d, got {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _emit("softmax_rows", out, (x,), bwd)


def softmax_vec(x) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeError(f"softmax_vec: expected non-empty 1-d, got {x.data.shape}")
    ex = np.exp(x.data - x.data.max())
    out = ex / ex.sum()

    def bwd(g):
        dot = (g * out).sum()
        return (out * (g - dot),)

    return _emit("softmax_vec", out, (x,), bwd)


def layernorm_rows(x, gain, bias, eps: float = 1e-12) -> Tensor:
    """Row-wise layer normalization with trainable gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"layernorm_rows: expected 2-d, got {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layernorm_rows: gain {gain.data.shape} / bias {bias.data.shape} vs width {d}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        gxhat = g * gain.data
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit("layernorm_rows", out, (x, gain, bias), bwd)


def dropout(x, mask, p: float) -> Tensor:
    """Inverted dropout with a caller-supplied 0/1 mask (training mode only).

    The mask is recorded in the op closure, so backward reuses the exact
    draw.  Evaluation mode is "do not call this op".
    """
    x = _wrap(x)
    keep = np.asarray(mask, dtype=np.float64)
    if keep.shape != x.data.shape:
        raise ShapeError(f"dropout: mask {keep.shape} vs x {x.data.shape}")
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout: p must be in [0,1), got {p}")
    factor = keep / (1.0 - p)
    return _emit("dropout", x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# concatenation


def concat_cols(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols: no parts")
    n = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != n:
            raise ShapeError(
                f"concat_cols: row counts differ ({p.data.shape} vs {parts[0].data.shape})"
            )
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1))

    return _emit("concat_cols", out, tuple(parts), bwd)


def concat_rows(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: no parts")
    d = parts[0].data.shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != d:
            raise ShapeError(
                f"concat_rows: widths differ ({p.data.shape} vs {parts[0].data.shape})"
            )
    out = np.concatenate([p.data for p in parts], axis=0)
    heights = [p.data.shape[0] for p in parts]
    splits = np.cumsum(heights)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=0))

    return _emit("concat_rows", out, tuple(parts), bwd)


def concat_vec(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_vec: no parts")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat_vec: expected 1-d parts, got {p.data.shape}")
    out = np.concatenate([p.data for p in parts])
    sizes = [p.data.size for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits))

    return _emit("concat_vec", out, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# gating and losses


def masked_softmax_rows(x, keep) -> Tensor:
    """Row-wise softmax over the True entries of keep; zeros elsewhere.

    The keep mask is data-dependent but treated as a constant: gradients
    flow only through the kept scores, which is the usual top-k gate rule.
    """
    x = _wrap(x)
    mask = np.asarray(keep, dtype=bool)
    if x.data.ndim != 2 or mask.shape != x.data.shape:
        raise ShapeError(f"masked_softmax_rows: keep {mask.shape} vs x {x.data.shape}")
    if not mask.any(axis=1).all():
        raise ShapeError("masked_softmax_rows: every row must keep at least one entry")
    neg = np.where(mask, x.data, -np.inf)
    shifted = neg - neg.max(axis=1, keepdims=True)
    ex = np.where(mask, np.exp(shifted), 0.0)
    out = ex / ex.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _emit("masked_softmax_rows", out, (x,), bwd)


def mse(pred, target) -> Tensor:
    """Mean squared error against a constant target."""
    pred = _wrap(pred)
    tgt = _as_f64(target.data if isinstance(target, Tensor) else target)
    if tgt.shape != pred.data.shape:
        raise ShapeError(f"mse: target {tgt.shape} vs pred {pred.data.shape}")
    if pred.data.size == 0:
        raise ShapeError("mse: empty operands")
    diff = pred.data - tgt
    out = np.array([np.mean(diff * diff)])
    size = pred.data.size
    return _emit("mse", out, (pred,), lambda g: (g[0] * 2.0 * diff / size,))


def bce_logits(logits, target) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    logits = _wrap(logits)
    tgt = _as_f64(target.data if isinstance(target, Tensor) else target)
    if tgt.shape != logits.data.shape:
        raise ShapeError(f"bce_logits: target {tgt.shape} vs logits {logits.data.shape}")
    if logits.data.size == 0:
        raise ShapeError("bce_logits: empty operands")
    x = logits.data
    out = np.array([np.mean(_softplus(x) - tgt * x)])
    size = x.size
    return _emit("bce_logits", out, (logits,), lambda g: (g[0] * (_sigmoid(x) - tgt) / size,))


def cv_squared(x) -> Tensor:
    """Squared coefficient of variation of a vector (population variance)."""
    x = _wrap(x)
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeError(f"cv_squared: expected non-empty 1-d, got {x.data.shape}")
    n = x.data.size
    mu = x.data.mean()
    if mu == 0.0:
        raise NonFiniteError("cv_squared: zero mean")
    centered = x.data - mu
    var = np.mean(centered * centered)
    out = np.array([var / (mu * mu)])

    def bwd(g):
        dvar = 2.0 * centered / n
        dmu = np.full(n, 1.0 / n)
        gx = g[0] * (dvar / (mu * mu) - 2.0 * var / (mu ** 3) * dmu)
        return (gx,)

    return _emit("cv_squared", out, (x,), bwd)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on the params dict.

    Parameters missing from grads are treated as zero-gradient: their
    moments decay and the values stay put when the moments are zero.
    All updates are validated before any state mutates, so a non-finite
    update leaves params and moments exactly as they were.
    """
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_m, new_v, new_p = {}, {}, {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        elif g.shape != value.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {value.shape} for {name!r}")
        m = new_m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = new_v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        _require_finite(update, "adam_step")
        new_p[name] = value - update
    state.step = t
    state.m = new_m
    state.v = new_v
    params.update(new_p)
