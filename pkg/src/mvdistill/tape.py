"""Minimal reverse-mode autodiff over 2-D float64 arrays.

A Value is one node: a matrix plus its (lazily allocated) gradient. Ops
record a vector-Jacobian closure per input on the tape; backward replays the
records in exact reverse order, accumulating gradients additively. Every op
checks its output for NaN/Inf so numeric blowups fail loudly at the op that
produced them.

Gather indices must be strictly increasing: all call sites select sorted
unique rows (visibility masks, batch slices), and uniqueness lets the
backward scatter use plain fancy indexing instead of the much slower
ufunc.at path.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    EmptyInput,
    IndexOutOfRange,
    LabelOutOfRange,
    NonFiniteLoss,
    ShapeMismatch,
    TruncatedFile,
    UnsupportedVersion,
)

_CKPT_MAGIC = b"MVPT"
_CKPT_VERSION = 1


class Value:
    """A 2-D float64 matrix participating in a recorded computation."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch(f"values are 2-D matrices, got shape {arr.shape}")
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a 1x1 value, got {self.data.shape}")
        return float(self.data[0, 0])


def _checked(out: np.ndarray, op: str) -> Value:
    if not np.isfinite(out).all():
        raise NonFiniteLoss(f"non-finite output of {op}")
    return Value(out)


class Tape:
    """Ordered record of ops; backward visits them in reverse."""

    def __init__(self):
        self._records: list[tuple[Value, tuple]] = []

    def record(self, out: Value, *parent_vjps: tuple[Value, Callable]):
        self._records.append((out, parent_vjps))

    def backward(self, loss: Value) -> None:
        if loss.data.shape != (1, 1):
            raise ShapeMismatch("backward starts from a scalar (1x1) loss")
        loss.grad = np.ones((1, 1))
        for out, parent_vjps in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for parent, vjp in parent_vjps:
                parent.accumulate(vjp(g))

    def __len__(self):
        return len(self._records)


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------

def linear(tape: Tape, x: Value, w: Value, b: Value) -> Value:
    """y = x @ w + b with the bias broadcast over rows."""
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatch(f"linear: {x.data.shape} @ {w.data.shape}")
    if b.data.shape != (1, w.data.shape[1]):
        raise ShapeMismatch(f"linear: bias {b.data.shape} != (1, {w.data.shape[1]})")
    out = _checked(x.data @ w.data + b.data, "linear")
    xd, wd = x.data, w.data
    tape.record(
        out,
        (x, lambda g: g @ wd.T),
        (w, lambda g: xd.T @ g),
        (b, lambda g: g.sum(axis=0, keepdims=True)),
    )
    return out


def relu(tape: Tape, x: Value) -> Value:
    out = _checked(np.maximum(x.data, 0.0), "relu")
    mask = x.data > 0.0  # subgradient at 0 is 0
    tape.record(out, (x, lambda g: g * mask))
    return out


def channelwise_max(tape: Tape, x: Value) -> Value:
    """Column-wise max; ties route the gradient to the lowest row."""
    m, c = x.data.shape
    if m < 1:
        raise EmptyInput("channelwise_max over zero rows")
    arg = np.argmax(x.data, axis=0)  # first occurrence wins ties
    out = _checked(x.data[arg, np.arange(c)][None, :], "channelwise_max")

    def vjp(g):
        dx = np.zeros((m, c))
        dx[arg, np.arange(c)] = g[0]
        return dx

    tape.record(out, (x, vjp))
    return out


def gather_rows(tape: Tape, x: Value, indices) -> Value:
    """Select rows by a strictly increasing index array."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch("gather indices must be a flat array")
    if len(idx):
        if idx[0] < 0 or idx[-1] >= x.data.shape[0]:
            raise IndexOutOfRange(f"gather index out of [0, {x.data.shape[0]})")
        if (np.diff(idx) <= 0).any():
            raise ValueError("gather indices must be strictly increasing")
    out = _checked(x.data[idx], "gather_rows")
    shape = x.data.shape

    def vjp(g):
        dx = np.zeros(shape)
        dx[idx] = g
        return dx

    tape.record(out, (x, vjp))
    return out


def concat_rows(tape: Tape, parts: Sequence[Value]) -> Value:
    if not parts:
        raise EmptyInput("concat_rows of nothing")
    cols = parts[0].data.shape[1]
    for p in parts:
        if p.data.shape[1] != cols:
            raise ShapeMismatch("concat_rows: column counts differ")
    out = _checked(np.concatenate([p.data for p in parts], axis=0), "concat_rows")
    bounds = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def make_vjp(i):
        lo, hi = bounds[i], bounds[i + 1]
        return lambda g: g[lo:hi]

    tape.record(out, *[(p, make_vjp(i)) for i, p in enumerate(parts)])
    return out


def l1_loss(tape: Tape, a: Value, b: Value) -> Value:
    """Unreduced sum of absolute differences; sign(0) = 0 in the backward."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"l1_loss: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    out = _checked(np.array([[np.abs(diff).sum()]]), "l1_loss")
    sign = np.sign(diff)
    tape.record(out, (a, lambda g: g[0, 0] * sign), (b, lambda g: -g[0, 0] * sign))
    return out


def softmax_cross_entropy(tape: Tape, logits: Value, labels) -> Value:
    """Mean over the batch of -log softmax(logits)[label], max-shifted."""
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    bsz, ncls = logits.data.shape
    if len(lab) != bsz:
        raise ShapeMismatch(f"{len(lab)} labels for {bsz} logit rows")
    if len(lab) and (lab.min() < 0 or lab.max() >= ncls):
        raise LabelOutOfRange(f"labels must lie in [0, {ncls})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = _checked(np.array([[-logp[np.arange(bsz), lab].mean()]]), "softmax_cross_entropy")
    probs = np.exp(logp)

    def vjp(g):
        d = probs.copy()
        d[np.arange(bsz), lab] -= 1.0
        return g[0, 0] * d / bsz

    tape.record(out, (logits, vjp))
    return out


def weighted_sum(tape: Tape, parts: Sequence[Value], weights: Sequence[float]) -> Value:
    """Fixed-coefficient combination of same-shape values."""
    if not parts:
        raise EmptyInput("weighted_sum of nothing")
    if len(parts) != len(weights):
        raise ShapeMismatch("one weight per value")
    shape = parts[0].data.shape
    acc = np.zeros(shape)
    for p, w in zip(parts, weights):
        if p.data.shape != shape:
            raise ShapeMismatch("weighted_sum: shapes differ")
        acc += w * p.data
    out = _checked(acc, "weighted_sum")

    def make_vjp(w):
        return lambda g: w * g

    tape.record(out, *[(p, make_vjp(w)) for p, w in zip(parts, weights)])
    return out


def l2_normalize_rows(tape: Tape, x: Value, eps: float = 1e-12) -> Value:
    """Rows scaled to unit L2 norm; near-zero rows pass through unchanged."""
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, eps)
    tiny = norms[:, 0] < eps
    y = x.data / safe
    y[tiny] = x.data[tiny]
    out = _checked(y, "l2_normalize_rows")
    yd = out.data

    def vjp(g):
        dx = (g - yd * (g * yd).sum(axis=1, keepdims=True)) / safe
        dx[tiny] = g[tiny]
        return dx

    tape.record(out, (x, vjp))
    return out


# ---------------------------------------------------------------------------
# Parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Param:
    name: str
    value: Value
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros_like(self.value.data)
        self.v = np.zeros_like(self.value.data)


class ParamStore:
    """Named parameter tensors with matching gradient and Adam moments."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, data) -> Value:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        p = Param(name, Value(data))
        self._params[name] = p
        return p.value

    def __getitem__(self, name: str) -> Value:
        return self._params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def params(self) -> list[Param]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.value.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for p in self._params.values():
            g = p.value.grad
            out[p.name] = np.zeros_like(p.value.data) if g is None else g.copy()
        return out


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in store.params():
        g = p.value.grad
        if g is None:
            g = np.zeros_like(p.value.data)
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grads()


def save_checkpoint(store: ParamStore, path) -> None:
    parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(store.names()))]
    for p in store.params():
        name = p.name.encode("utf-8")
        rows, cols = p.value.data.shape
        parts.append(struct.pack("<I", len(name)))
        parts.append(name)
        parts.append(struct.pack("<II", rows, cols))
        parts.append(p.value.data.astype("<f8").tobytes())
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"wanted {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path) -> ParamStore:
    store = ParamStore()
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != _CKPT_MAGIC:
            raise BadMagic(f"expected {_CKPT_MAGIC!r}, got {magic!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != _CKPT_VERSION:
            raise UnsupportedVersion(f"checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", _read_exact(fh, 8))
            data = np.frombuffer(_read_exact(fh, 8 * rows * cols), dtype="<f8")
            # frombuffer yields a read-only view; keep parameters writable
            store.add(name, data.reshape(rows, cols).copy())
    return store


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    h: float
    tolerance: float
    per_tensor: dict[str, float]
    max_rel_err: float
    passed: bool

    def lines(self) -> list[str]:
        out = [f"{name}\tmax_rel_err={err:.3e}" for name, err in self.per_tensor.items()]
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"overall\tmax_rel_err={self.max_rel_err:.3e}\t{verdict}")
        return out


def grad_check(
    loss_fn: Callable[[], tuple[Tape, Value]],
    store: ParamStore,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    samples_per_tensor: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Central-difference check of every parameter tensor.

    Tensors with more than samples_per_tensor entries are subsampled with a
    seeded generator. Relative error uses max(|analytic|, |numeric|, 1e-3)
    as the denominator, so near-zero gradients degrade to an absolute check.
    """
    tape, loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss("loss is non-finite at the evaluation point")
    store.zero_grads()
    tape.backward(loss)
    analytic = store.grads()
    store.zero_grads()

    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    for p in store.params():
        data = p.value.data
        n = data.size
        if n <= samples_per_tensor:
            flat_idx = np.arange(n)
        else:
            flat_idx = np.sort(rng.choice(n, size=samples_per_tensor, replace=False))
        worst = 0.0
        a_flat = analytic[p.name].reshape(-1)
        d_flat = data.reshape(-1)
        for i in flat_idx:
            orig = d_flat[i]
            try:
                d_flat[i] = orig + h
                f_plus = loss_fn()[1].item()
                d_flat[i] = orig - h
                f_minus = loss_fn()[1].item()
            finally:
                d_flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteLoss(f"loss non-finite while perturbing {p.name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if rel > worst:
                worst = rel
        per_tensor[p.name] = worst
    max_rel = max(per_tensor.values()) if per_tensor else 0.0
    return GradCheckReport(h, tolerance, per_tensor, max_rel, max_rel < tolerance)
