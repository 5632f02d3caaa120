import math

import numpy as np
import pytest

from mvdistill.encoder import (
    EncoderConfig,
    classify,
    encode,
    global_descriptor,
    init_encoder_params,
)
from mvdistill.errors import EmptyInput
from mvdistill.tape import ParamStore, Tape, Value, grad_check, l1_loss, softmax_cross_entropy


def small_store(seed=0, num_classes=4):
    return init_encoder_params(EncoderConfig(num_classes=num_classes, seed=seed))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(layer_widths=(2, 64))
    with pytest.raises(ValueError):
        EncoderConfig(num_classes=0)


def test_encode_permutation_equivariance_bitexact():
    store = small_store()
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(100, 3))
    base = encode(Tape(), store, pts).data
    for _ in range(10):
        perm = rng.permutation(100)
        out = encode(Tape(), store, pts[perm]).data
        assert out.tobytes() == base[perm].tobytes()


def test_encode_single_point_shape():
    store = small_store()
    out = encode(Tape(), store, np.array([[0.1, 0.2, 0.3]]))
    assert out.shape == (1, 128)


def test_zero_weights_zero_embeddings():
    cfg = EncoderConfig()
    store = ParamStore()
    widths = cfg.layer_widths
    for i in range(len(widths) - 1):
        store.add(f"enc.{i}.w", np.zeros((widths[i], widths[i + 1])))
        store.add(f"enc.{i}.b", np.zeros((1, widths[i + 1])))
    out = encode(Tape(), store, np.random.default_rng(1).normal(size=(10, 3)))
    assert (out.data == 0).all()


def test_global_descriptor_invariances():
    store = small_store()
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(50, 3))
    tape = Tape()
    base = global_descriptor(tape, encode(tape, store, pts)).data
    perm_out = global_descriptor(tape, encode(tape, store, pts[rng.permutation(50)])).data
    assert perm_out.tobytes() == base.tobytes()
    dup_out = global_descriptor(
        tape, encode(tape, store, np.concatenate([pts, pts[:7]]))
    ).data
    assert dup_out.tobytes() == base.tobytes()
    single = encode(tape, store, pts[:1])
    assert np.array_equal(global_descriptor(tape, single).data, single.data)


def test_classify_permutation_invariant():
    store = small_store()
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(30, 3))
    tape = Tape()
    base = classify(tape, store, encode(tape, store, pts)).data
    out = classify(tape, store, encode(tape, store, pts[rng.permutation(30)])).data
    assert out.tobytes() == base.tobytes()


def test_zero_head_uniform_cross_entropy():
    cfg = EncoderConfig(num_classes=5)
    store = init_encoder_params(cfg)
    for name in store.names():
        if name.startswith("head."):
            store[name].data[:] = 0.0
    tape = Tape()
    logits = classify(tape, store, encode(tape, store, np.random.default_rng(4).normal(size=(20, 3))))
    assert np.array_equal(logits.data, np.zeros((1, 5)))
    loss = softmax_cross_entropy(tape, logits, [2])
    assert abs(loss.item() - math.log(5)) < 1e-12


def test_embedding_locality():
    store = small_store()
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(20, 3))
    base = encode(Tape(), store, pts).data
    moved = pts.copy()
    moved[7] += 0.5
    out = encode(Tape(), store, moved).data
    changed = np.flatnonzero(np.abs(out - base).sum(axis=1))
    assert list(changed) == [7]


def test_encode_classify_gradients():
    store = small_store(seed=1)
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(12, 3))
    labels = [1]

    def loss_fn():
        tape = Tape()
        logits = classify(tape, store, encode(tape, store, pts))
        return tape, softmax_cross_entropy(tape, logits, labels)

    report = grad_check(loss_fn, store, h=1e-5, tolerance=1e-4, samples_per_tensor=40, seed=0)
    assert report.passed, report.per_tensor
