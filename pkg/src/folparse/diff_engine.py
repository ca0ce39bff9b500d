"""Small reverse-mode autodiff over numpy float64 arrays.

Only the operations the parser models need are provided.  Shapes are
checked eagerly; the only implicit broadcasting is the bias row in
``linear``/``add_bias`` and constant masks.
"""

from __future__ import annotations

import contextlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Value", "Parameter", "NonScalarRoot", "ShapeError", "no_grad", "constant",
    "add", "sub", "mul", "scale", "add_bias", "linear", "matmul", "transpose",
    "sigmoid", "tanh", "softmax", "log_softmax", "concat", "slice_last", "stack",
    "embedding", "select", "lstm_step", "lstm_cell", "mix", "mul_const", "sum_all", "cross_entropy",
    "bce_with_logits", "backward", "gradient_check", "GradCheckReport",
    "Adam", "clip_grad_norm", "xavier_uniform", "save_params", "load_params",
    "CHECKPOINT_VERSION",
]

DTYPE = np.float64
_grad_enabled = True


class NonScalarRoot(ValueError):
    pass


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Value:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Value{tag} shape={self.data.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def Parameter(data, name=None) -> Value:
    return Value(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def constant(data) -> Value:
    return Value(data)


def _node(data, parents, backward_fn):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Value(data, parents, backward_fn, requires_grad=True)
    return Value(data)


def _same(a: Value, b: Value, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _acc(v: Value, g):
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        v.grad += g


# ---------------------------------------------------------------------------
# elementwise

def add(a: Value, b: Value) -> Value:
    _same(a, b, "add")

    def bw(g):
        _acc(a, g)
        _acc(b, g)
    return _node(a.data + b.data, (a, b), bw)


def sub(a: Value, b: Value) -> Value:
    _same(a, b, "sub")

    def bw(g):
        _acc(a, g)
        _acc(b, -g)
    return _node(a.data - b.data, (a, b), bw)


def mul(a: Value, b: Value) -> Value:
    _same(a, b, "mul")

    def bw(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)
    return _node(a.data * b.data, (a, b), bw)


def scale(a: Value, c: float) -> Value:
    def bw(g):
        _acc(a, g * c)
    return _node(a.data * c, (a,), bw)


def mul_const(a: Value, m) -> Value:
    """Multiply by a constant array (masks); ``m`` may broadcast against ``a``."""
    m = np.asarray(m, dtype=DTYPE)
    out = a.data * m
    if out.shape != a.shape:
        raise ShapeError(f"mul_const: mask {m.shape} does not fit {a.shape}")

    def bw(g):
        _acc(a, g * m)
    return _node(out, (a,), bw)


def sigmoid(a: Value) -> Value:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        _acc(a, g * out * (1.0 - out))
    return _node(out, (a,), bw)


def tanh(a: Value) -> Value:
    out = np.tanh(a.data)

    def bw(g):
        _acc(a, g * (1.0 - out * out))
    return _node(out, (a,), bw)


def mix(gate: Value, x: Value, y: Value) -> Value:
    """``gate * x + (1 - gate) * y`` with ``gate`` one rank lower than x, y."""
    _same(x, y, "mix")
    if gate.shape != x.shape[:-1]:
        raise ShapeError(f"mix: gate {gate.shape} vs inputs {x.shape}")
    gd = gate.data[..., None]
    out = gd * x.data + (1.0 - gd) * y.data

    def bw(g):
        _acc(gate, (g * (x.data - y.data)).sum(-1))
        _acc(x, g * gd)
        _acc(y, g * (1.0 - gd))
    return _node(out, (gate, x, y), bw)


def sum_all(a: Value) -> Value:
    def bw(g):
        _acc(a, np.broadcast_to(g, a.shape))
    return _node(a.data.sum(), (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra

def add_bias(a: Value, b: Value) -> Value:
    if b.data.ndim != 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: {a.shape} + {b.shape}")

    def bw(g):
        _acc(a, g)
        _acc(b, g.reshape(-1, b.shape[0]).sum(0))
    return _node(a.data + b.data, (a, b), bw)


def linear(x: Value, W: Value, b: Value | None = None) -> Value:
    """``x @ W.T (+ b)`` over the last axis; W has shape (out, in)."""
    if W.data.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: x {x.shape} with W {W.shape}")
    out = x.data @ W.data.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} for W {W.shape}")
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def bw(g):
        if x.requires_grad:
            _acc(x, g @ W.data)
        if W.requires_grad:
            _acc(W, g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
        if b is not None and b.requires_grad:
            _acc(b, g.reshape(-1, g.shape[-1]).sum(0))
    return _node(out, parents, bw)


def matmul(a: Value, b: Value) -> Value:
    """Batched matrix product with identical leading batch dims."""
    if a.data.ndim < 2 or a.data.ndim != b.data.ndim or a.shape[:-2] != b.shape[:-2] \
            or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _acc(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _acc(b, np.swapaxes(a.data, -1, -2) @ g)
    return _node(a.data @ b.data, (a, b), bw)


def transpose(a: Value) -> Value:
    def bw(g):
        _acc(a, np.swapaxes(g, -1, -2))
    return _node(np.swapaxes(a.data, -1, -2).copy(), (a,), bw)


# ---------------------------------------------------------------------------
# normalization

def softmax(a: Value, mask=None) -> Value:
    """Softmax over the last axis.  ``mask`` (bool) excludes entries; rows
    with nothing allowed come out as all zeros."""
    out = _softmax_np(a.data, mask)

    def bw(g):
        _acc(a, out * (g - (g * out).sum(-1, keepdims=True)))
    return _node(out, (a,), bw)


def _softmax_np(x, mask=None):
    if mask is None:
        z = x - x.max(-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(-1, keepdims=True)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    z = np.where(mask, x, -np.inf)
    top = z.max(-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x, 0.0) - top), 0.0)
    s = e.sum(-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def log_softmax(a: Value) -> Value:
    z = a.data - a.data.max(-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(-1, keepdims=True))
    p = np.exp(out)

    def bw(g):
        _acc(a, g - p * g.sum(-1, keepdims=True))
    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# structure

def concat(parts: list[Value], axis: int = -1) -> Value:
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            _acc(p, gp)
    return _node(out, tuple(parts), bw)


def slice_last(a: Value, start: int, stop: int) -> Value:
    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[..., start:stop] = g
            _acc(a, full)
    return _node(a.data[..., start:stop].copy(), (a,), bw)


def stack(parts: list[Value], axis: int = 1) -> Value:
    shape = parts[0].shape
    for p in parts:
        if p.shape != shape:
            raise ShapeError("stack: mismatched shapes")
    out = np.stack([p.data for p in parts], axis=axis)

    def bw(g):
        for k, p in enumerate(parts):
            _acc(p, np.take(g, k, axis=axis))
    return _node(out, tuple(parts), bw)


def embedding(W: Value, idx) -> Value:
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        if W.requires_grad:
            full = np.zeros_like(W.data)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, W.shape[1]))
            _acc(W, full)
    return _node(W.data[idx], (W,), bw)


def select(a: Value, index: int, axis: int) -> Value:
    """``a`` indexed at ``index`` along ``axis`` (that axis is dropped)."""
    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            sl[axis] = index
            full[tuple(sl)] = g
            _acc(a, full)
    return _node(np.take(a.data, index, axis=axis), (a,), bw)


def lstm_step(xw: Value, h: Value, c: Value, Wh: Value, b: Value) -> Value:
    """One LSTM step from a precomputed input projection ``xw = x @ Wx.T``.

    Returns ``[h'; c']`` along the last axis.  Gate blocks are ordered
    input, forget, cell, output.
    """
    H = h.shape[-1]
    if Wh.shape != (4 * H, H) or b.shape != (4 * H,) or c.shape != h.shape \
            or xw.shape != h.shape[:-1] + (4 * H,):
        raise ShapeError(f"lstm_step: xw {xw.shape} h {h.shape} Wh {Wh.shape} b {b.shape}")
    z = xw.data + h.data @ Wh.data.T + b.data
    i = 0.5 * (1.0 + np.tanh(0.5 * z[..., :H]))
    f = 0.5 * (1.0 + np.tanh(0.5 * z[..., H:2 * H]))
    gg = np.tanh(z[..., 2 * H:3 * H])
    o = 0.5 * (1.0 + np.tanh(0.5 * z[..., 3 * H:]))
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(g):
        gh, gc = g[..., :H], g[..., H:]
        gc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc * gg * i * (1.0 - i),
            gc * c.data * f * (1.0 - f),
            gc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        _acc(xw, dz)
        if Wh.requires_grad:
            _acc(Wh, dz.reshape(-1, 4 * H).T @ h.data.reshape(-1, H))
        if b.requires_grad:
            _acc(b, dz.reshape(-1, 4 * H).sum(0))
        if h.requires_grad:
            _acc(h, dz @ Wh.data)
        _acc(c, gc * f)
    return _node(np.concatenate([h_new, c_new], axis=-1), (xw, h, c, Wh, b), bw)


def lstm_cell(x: Value, h: Value, c: Value, Wx: Value, Wh: Value, b: Value) -> Value:
    """Full LSTM cell: ``lstm_step(linear(x, Wx), h, c, Wh, b)``."""
    return lstm_step(linear(x, Wx), h, c, Wh, b)


# ---------------------------------------------------------------------------
# losses

def cross_entropy(logits: Value, targets, weights=None, mask=None) -> Value:
    """``sum_i w_i * -log softmax(logits_i)[t_i]`` as a scalar.

    ``mask`` (bool, same shape as logits) restricts each softmax's support.
    """
    t = np.asarray(targets, dtype=np.int64)
    lead = logits.shape[:-1]
    if t.shape != lead:
        raise ShapeError(f"cross_entropy: targets {t.shape} vs logits {logits.shape}")
    w = np.ones(lead) if weights is None else np.asarray(weights, dtype=DTYPE)
    x = logits.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        # rows with zero weight may have an empty support
        mask = mask | (w == 0)[..., None]
    p = _softmax_np(x, mask)
    flat_p = p.reshape(-1, x.shape[-1])
    rows = np.arange(flat_p.shape[0])
    picked = flat_p[rows, t.reshape(-1)]
    wf = w.reshape(-1)
    with np.errstate(divide="ignore"):
        logp = np.where(wf != 0, np.log(np.where(wf != 0, picked, 1.0)), 0.0)
    out = -(wf * logp).sum()

    def bw(g):
        grad = flat_p.copy()
        grad[rows, t.reshape(-1)] -= 1.0
        grad *= wf[:, None]
        _acc(logits, g * grad.reshape(x.shape))
    return _node(out, (logits,), bw)


def bce_with_logits(logits: Value, targets, weights=None) -> Value:
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs logits {logits.shape}")
    w = np.ones(logits.shape) if weights is None else np.asarray(weights, dtype=DTYPE)
    x = logits.data
    # log(1 + exp(-|x|)) form avoids overflow
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    s = 0.5 * (1.0 + np.tanh(0.5 * x))

    def bw(g):
        _acc(logits, g * w * (s - t))
    return _node((w * loss).sum(), (logits,), bw)


# ---------------------------------------------------------------------------
# backward

def backward(root: Value) -> None:
    """Accumulate d(root)/d(leaf) into every leaf's ``grad``."""
    if root.data.size != 1:
        raise NonScalarRoot(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order: list[Value] = []
    seen: set[int] = set()
    stack_: list[tuple[Value, bool]] = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    for node in order:
        if node.backward_fn is not None:
            node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            node.grad = None


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def failures(self) -> dict[str, float]:
        return {k: e for k, e in self.errors.items() if e > self.tol}

    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def gradient_check(loss_fn, params: dict[str, Value], eps: float = 1e-5, tol: float = 1e-4,
                   max_entries: int | None = None, seed: int = 0,
                   floor: float = 1e-8) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    The error of an entry is ``|ga - fd| / max(|ga|, |fd|, floor)``: below
    ``floor`` the comparison is absolute, since central differences cannot
    resolve vanishing gradients beyond round-off.

    ``loss_fn()`` must rebuild the graph from the current parameter values
    and return a scalar Value.  With ``max_entries`` each parameter is
    checked on a seeded random subset of its entries.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    report = GradCheckReport(tol)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            worst = 0.0
            ga = analytic[name].reshape(-1)
            for k in idx:
                old = flat[k]
                flat[k] = old + eps
                up = float(loss_fn().data)
                flat[k] = old - eps
                down = float(loss_fn().data)
                flat[k] = old
                fd = (up - down) / (2 * eps)
                err = abs(ga[k] - fd) / max(abs(ga[k]), abs(fd), floor)
                worst = max(worst, err)
            report.errors[name] = worst
    for p in params.values():
        p.zero_grad()
    return report


# ---------------------------------------------------------------------------
# optimization

def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm is not None and total > max_norm:
        k = max_norm / (total + 1e-12)
        for g in grads:
            g *= k
    return total


class Adam:
    """Adam with decoupled weight decay (``decay_mode="weight"``) or
    inverse-time learning-rate decay (``decay_mode="lr"``)."""

    def __init__(self, params, lr: float = 1e-3, decay: float = 1e-4, decay_mode: str = "weight",
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if decay_mode not in ("weight", "lr"):
            raise ValueError(f"unknown decay_mode {decay_mode!r}")
        self.params = list(params)
        self.lr = lr
        self.decay = decay
        self.decay_mode = decay_mode
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        lr = self.lr
        if self.decay_mode == "lr":
            lr = self.lr / (1.0 + self.decay * self.t)
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.decay_mode == "weight" and self.decay:
                update = update + self.decay * p.data
            p.data -= lr * update
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_out, fan_in = shape[0], shape[1] if len(shape) > 1 else 1
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1
_MAGIC = b"FOLPCKPT"


def save_params(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays after a JSON header.

    Layout: magic, u32 version, u64 header length, header JSON, raw
    little-endian array bytes in header order.  Output is byte-for-byte
    deterministic for identical inputs.
    """
    names = sorted(arrays)
    header = {
        "version": CHECKPOINT_VERSION,
        "arrays": [{"name": n, "shape": list(np.shape(arrays[n])), "dtype": "<f8"} for n in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(DTYPE)
    return arrays, header.get("meta", {})
