"""Training loop: adaptive-moment gradient descent on focal cross-entropy,
with early stopping and learning-rate reduction on validation plateau.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .network import SequenceLabelNet, focal_loss_and_grad
from .windows import window_starts


class EmptyTrainingSet(ValueError):
    """No training windows could be formed."""


class DivergedLoss(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.004
    gamma: float = 2.0
    max_epochs: int = 130
    early_stop_patience: int = 8
    lr_factor: float = 0.1
    lr_patience: int = 4
    batch_size: int = 32
    seed: int = 0
    # Offset between the training windows taken from the stride-1 set; 1 uses
    # every window, larger values subsample the heavily overlapping ones.
    train_stride: int = 1
    val_fraction: float = 0.1
    # Sample training windows in proportion to the rarity of the classes they
    # contain, so minority actions are seen often enough to be learned.
    balance_classes: bool = True


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float
    seconds: float

    def as_dict(self):
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "learning_rate": self.learning_rate,
            "seconds": self.seconds,
        }


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def as_dict(self):
        return {
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_early": self.stopped_early,
            "epochs": [r.as_dict() for r in self.history],
        }


class Adam:
    """Adaptive moment estimation with in-place parameter updates."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(p.dtype)


def _gather_windows(x, y, mask, starts, w):
    inputs = np.stack([x[s : s + w] for s in starts])
    targets = np.stack([y[s : s + w] for s in starts])
    masks = np.stack([mask[s : s + w] for s in starts])
    return inputs, targets, masks


def _window_weights(y, mask, starts, w):
    """Sampling weight per window start: the rarity of its rarest line."""
    radix = (1 << (12 * np.arange(y.shape[1] - 1, -1, -1))).astype(np.int64)
    packed = y.astype(np.int64) @ radix
    classes, inverse, counts = np.unique(packed, return_inverse=True, return_counts=True)
    line_w = (1.0 / counts)[inverse]
    line_w[mask <= 0] = 0.0
    window_w = np.lib.stride_tricks.sliding_window_view(line_w, w).max(axis=1)
    weights = window_w[starts]
    total = weights.sum()
    if total <= 0:
        return None
    return weights / total


def _run_epoch(net, opt, x, y, mask, starts, w, cfg, rng, n_sample=None, weights=None):
    if n_sample is not None and n_sample < len(starts):
        # Fresh subsample each epoch: rare lines get seen in many different
        # window alignments over the course of training.
        starts = rng.choice(starts, size=n_sample, replace=False, p=weights)
    order = rng.permutation(len(starts))
    total = 0.0
    batches = 0
    for lo in range(0, len(order), cfg.batch_size):
        chunk = starts[order[lo : lo + cfg.batch_size]]
        inputs, targets, masks = _gather_windows(x, y, mask, chunk, w)
        probs = net.forward(inputs, training=True)
        loss, dlogits = focal_loss_and_grad(probs, targets, masks, cfg.gamma)
        if not np.isfinite(loss):
            raise DivergedLoss(f"non-finite training loss at step {opt.t + 1}")
        net.zero_grads()
        net.backward(dlogits)
        opt.step(net.grads())
        total += loss
        batches += 1
    return total / max(1, batches)


def evaluate_loss(net, x, y, mask, starts, w, gamma, batch_size=64):
    total = 0.0
    weight = 0.0
    for lo in range(0, len(starts), batch_size):
        chunk = starts[lo : lo + batch_size]
        inputs, targets, masks = _gather_windows(x, y, mask, chunk, w)
        probs = net.forward(inputs, training=False)
        loss, _ = focal_loss_and_grad(probs, targets, masks, gamma)
        total += loss * len(chunk)
        weight += len(chunk)
    return total / max(1.0, weight)


def train(
    net: SequenceLabelNet,
    x: np.ndarray,
    y: np.ndarray,
    w: int,
    cfg: TrainConfig,
    line_mask: np.ndarray | None = None,
) -> TrainResult:
    """Train the network on a labeled line sequence.

    x: (N, F) feature vectors; y: (N, label_len) integer targets; line_mask
    zeroes lines that should not contribute to the loss (e.g. passthrough).
    The tail `val_fraction` of the lines is held out for validation; windows
    never cross the train/validation boundary. The network is left holding
    the parameters of the best validation epoch.
    """
    n = x.shape[0]
    if line_mask is None:
        line_mask = np.ones(n, dtype=np.float32)
    n_val = int(round(n * cfg.val_fraction))
    n_train = n - n_val
    if n_train < 1:
        raise EmptyTrainingSet("no lines left for training after the validation split")

    if n_train < w:
        raise EmptyTrainingSet(f"training split ({n_train} lines) shorter than window {w}")
    all_starts = window_starts(n_train, w)
    stride = max(1, cfg.train_stride)
    n_sample = max(1, len(all_starts) // stride) if stride > 1 else None
    if n_val >= w:
        val_starts = n_train + window_starts(n_val, w)[::stride]
    else:
        # Validation shorter than a window: reuse the training tail window.
        val_starts = np.array([n_train - w + max(1, n_val)])
    if len(all_starts) == 0:
        raise EmptyTrainingSet("no training windows")
    weights = None
    if cfg.balance_classes and n_sample is not None:
        weights = _window_weights(y[:n_train], line_mask[:n_train], all_starts, w)

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), cfg.learning_rate)
    result = TrainResult()
    best_params = {k: v.copy() for k, v in net.parameters().items()}
    wait_stop = 0
    wait_lr = 0

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        train_loss = _run_epoch(
            net, opt, x, y, line_mask, all_starts, w, cfg, rng, n_sample, weights
        )
        val_loss = evaluate_loss(net, x, y, line_mask, val_starts, w, cfg.gamma)
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        result.history.append(
            EpochRecord(epoch, train_loss, val_loss, opt.lr, time.perf_counter() - t0)
        )

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_params = {k: v.copy() for k, v in net.parameters().items()}
            wait_stop = 0
            wait_lr = 0
        else:
            wait_stop += 1
            wait_lr += 1
            if wait_lr >= cfg.lr_patience:
                opt.lr *= cfg.lr_factor
                wait_lr = 0
            if wait_stop >= cfg.early_stop_patience:
                result.stopped_early = True
                break

    net.set_parameters(best_params)
    return result
