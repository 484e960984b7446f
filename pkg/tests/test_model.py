import math

import numpy as np
import pytest

from k8ntext.model import (
    SequenceLabelNet,
    ShapeMismatch,
    focal_loss_and_grad,
    one_hot_targets,
)
from k8ntext.model.network import CheckpointError


@pytest.fixture
def tiny():
    net = SequenceLabelNet(n_features=3, m=4, label_len=2, hidden_scale=(2, 2),
                           dtype=np.float64, seed=1)
    net.layers["dropout"].rate = 0.0
    return net


def test_output_shape_and_normalization(tiny):
    rng = np.random.default_rng(0)
    x = rng.random((2, 4, 3))
    probs = tiny.forward(x, training=False)
    assert probs.shape == (2, 4, 2, 4)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


def test_zero_weights_give_uniform_distributions(tiny):
    for param in tiny.parameters().values():
        param[...] = 0.0
    # batch-norm scale back to 1 so the normalization stays well-defined
    tiny.layers["bn1"].params["gamma"][...] = 1.0
    tiny.layers["bn2"].params["gamma"][...] = 1.0
    probs = tiny.forward(np.random.default_rng(1).random((1, 4, 3)), training=False)
    assert np.allclose(probs, 0.25, atol=1e-9)


def test_inference_is_deterministic():
    net = SequenceLabelNet(n_features=5, m=6, seed=3)
    x = np.random.default_rng(2).random((2, 7, 5)).astype(np.float32)
    a = net.forward(x, training=False)
    b = net.forward(x, training=False)
    assert np.array_equal(a, b)


def test_forward_rejects_wrong_width(tiny):
    with pytest.raises(ShapeMismatch):
        tiny.forward(np.zeros((1, 4, 7)))


def test_parameter_count_default_architecture():
    # 39 features, m=59: two bidirectional layers (156/117 units per
    # direction), two batch norms, 295-wide head.
    net = SequenceLabelNet(39, 59)
    assert net.parameter_count() == 717_627


def test_parameter_count_independent_of_window():
    net = SequenceLabelNet(12, 59, seed=0)
    count = net.parameter_count()
    for w in (5, 60):
        x = np.zeros((1, w, 12), dtype=np.float32)
        net.forward(x, training=False)
        assert net.parameter_count() == count


# --- loss ----------------------------------------------------------------------


def test_loss_zero_for_perfect_prediction():
    probs = np.zeros((1, 1, 1, 3))
    probs[..., 1] = 1.0
    targets = np.array([[[1]]])
    loss, grad = focal_loss_and_grad(probs, targets, gamma=2.0)
    assert loss == pytest.approx(0.0, abs=1e-10)


def test_loss_gamma_zero_is_cross_entropy():
    rng = np.random.default_rng(0)
    logits = rng.random((2, 3, 2, 4))
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    targets = rng.integers(0, 4, size=(2, 3, 2))
    loss, _ = focal_loss_and_grad(probs, targets, gamma=0.0)
    idx = np.indices(targets.shape, sparse=True)
    expected = -np.log(probs[idx[0], idx[1], idx[2], targets]).mean()
    assert loss == pytest.approx(expected, rel=1e-9)


def test_loss_single_position_half_probability():
    probs = np.array([[[[0.5, 0.5]]]])
    targets = np.array([[[0]]])
    loss, _ = focal_loss_and_grad(probs, targets, gamma=2.0)
    assert loss == pytest.approx(0.25 * math.log(2), rel=1e-9)  # ~0.17329


def test_loss_masks_padded_positions():
    probs = np.full((1, 2, 1, 2), 0.5)
    targets = np.zeros((1, 2, 1), dtype=int)
    mask = np.array([[1.0, 0.0]])
    loss, grad = focal_loss_and_grad(probs, targets, mask, gamma=2.0)
    assert loss == pytest.approx(0.25 * math.log(2), rel=1e-9)
    assert np.all(grad[0, 1] == 0)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        focal_loss_and_grad(np.zeros((1, 2, 2, 3)), np.zeros((1, 3, 2), dtype=int))


def test_one_hot_targets():
    block = one_hot_targets(np.array([[1, 0]]), m=3)
    assert block.shape == (1, 2, 3)
    assert block[0, 0].tolist() == [0, 1, 0]
    assert block[0, 1].tolist() == [1, 0, 0]


# --- gradient check -----------------------------------------------------------


def test_gradients_match_finite_differences(tiny):
    rng = np.random.default_rng(42)
    x = rng.random((2, 4, 3))
    y = rng.integers(0, 4, size=(2, 4, 2))
    mask = np.ones((2, 4))
    mask[1, 3] = 0.0

    probs = tiny.forward(x, training=True)
    _, dlogits = focal_loss_and_grad(probs, y, mask, gamma=2.0)
    tiny.zero_grads()
    tiny.backward(dlogits)
    analytic = {k: g.copy() for k, g in tiny.grads().items()}

    def loss_now():
        p = tiny.forward(x, training=True)
        val, _ = focal_loss_and_grad(p, y, mask, gamma=2.0)
        return val

    eps = 1e-6
    rng_pick = np.random.default_rng(7)
    for name, arr in tiny.parameters().items():
        flat = arr.reshape(-1)
        # spot-check a handful of coordinates per parameter group
        for idx in rng_pick.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[idx]
            flat[idx] = old + eps
            lp = loss_now()
            flat[idx] = old - eps
            lm = loss_now()
            flat[idx] = old
            numeric = (lp - lm) / (2 * eps)
            ana = analytic[name].reshape(-1)[idx]
            assert abs(numeric - ana) <= 1e-4 * max(1.0, abs(numeric), abs(ana)), (
                f"{name}[{idx}]: analytic {ana} vs numeric {numeric}"
            )


# --- checkpointing --------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    net = SequenceLabelNet(4, 6, label_len=3, hidden_scale=(2, 1), seed=9)
    x = np.random.default_rng(1).random((2, 5, 4)).astype(np.float32)
    net.forward(x, training=True)  # move the batch-norm running stats
    before = net.forward(x, training=False)

    path = tmp_path / "model.ckpt"
    net.save(path, {"registry_hash": "r" * 64, "manifest_hash": "m" * 64})
    loaded = SequenceLabelNet.load(path, registry_hash="r" * 64, manifest_hash="m" * 64)
    after = loaded.forward(x, training=False)
    assert np.allclose(before, after, atol=1e-6)
    assert loaded.parameter_count() == net.parameter_count()


def test_checkpoint_hash_mismatch(tmp_path):
    net = SequenceLabelNet(4, 6, seed=0)
    path = tmp_path / "model.ckpt"
    net.save(path, {"registry_hash": "aaaa"})
    with pytest.raises(CheckpointError):
        SequenceLabelNet.load(path, registry_hash="bbbb")


def test_checkpoint_garbage_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        SequenceLabelNet.load(path)
