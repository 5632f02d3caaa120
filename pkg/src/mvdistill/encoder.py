"""Shared-MLP point encoder and classification head.

Every point passes through the same linear+relu stack, so row i of the
embedding matrix always corresponds to input point i and any row permutation
of the input permutes the embeddings identically. The global descriptor is a
channel-wise max over rows, which makes the descriptor and the logits exactly
permutation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import ParamStore, Tape, Value, channelwise_max, linear, relu


@dataclass(frozen=True)
class EncoderConfig:
    layer_widths: tuple[int, ...] = (3, 64, 64, 128)
    num_classes: int = 4
    head_hidden: tuple[int, ...] = (64,)
    seed: int = 0

    def __post_init__(self):
        if self.layer_widths[0] != 3:
            raise ValueError("first encoder width must be 3 (xyz input)")
        if any(w < 1 for w in self.layer_widths + self.head_hidden):
            raise ValueError("all widths must be positive")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    @property
    def embed_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def head_widths(self) -> tuple[int, ...]:
        return (self.embed_dim,) + self.head_hidden + (self.num_classes,)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder_params(cfg: EncoderConfig, store: ParamStore | None = None) -> ParamStore:
    """Seeded encoder + head parameters: xavier-uniform weights, zero biases."""
    if store is None:
        store = ParamStore()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    widths = cfg.layer_widths
    for i in range(len(widths) - 1):
        store.add(f"enc.{i}.w", xavier_uniform(rng, widths[i], widths[i + 1]))
        store.add(f"enc.{i}.b", np.zeros((1, widths[i + 1])))
    head = cfg.head_widths
    for i in range(len(head) - 1):
        store.add(f"head.{i}.w", xavier_uniform(rng, head[i], head[i + 1]))
        store.add(f"head.{i}.b", np.zeros((1, head[i + 1])))
    return store


def num_encoder_layers(store: ParamStore, prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.w" in store:
        n += 1
    return n


def encode(tape: Tape, store: ParamStore, points: np.ndarray | Value) -> Value:
    """Per-point embeddings: row i of the result embeds point (row) i."""
    x = points if isinstance(points, Value) else Value(np.asarray(points, dtype=np.float64))
    for i in range(num_encoder_layers(store, "enc")):
        x = relu(tape, linear(tape, x, store[f"enc.{i}.w"], store[f"enc.{i}.b"]))
    return x


def global_descriptor(tape: Tape, embeddings: Value) -> Value:
    """Channel-wise max over all embedding rows (order-free)."""
    return channelwise_max(tape, embeddings)


def head_logits(tape: Tape, store: ParamStore, pooled: Value) -> Value:
    """Classification head applied to pooled descriptors (one row per shape)."""
    x = pooled
    n = num_encoder_layers(store, "head")
    for i in range(n):
        x = linear(tape, x, store[f"head.{i}.w"], store[f"head.{i}.b"])
        if i < n - 1:
            x = relu(tape, x)
    return x


def classify(tape: Tape, store: ParamStore, embeddings: Value) -> Value:
    """Logits for one shape from its embedding matrix."""
    return head_logits(tape, store, global_descriptor(tape, embeddings))
