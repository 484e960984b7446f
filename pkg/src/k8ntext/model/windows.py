"""Sliding-window batching and per-line majority voting.

Windows slide with stride 1, so a line appears in up to W windows; its final
label is the most frequent full-tuple prediction across those windows, the
earliest window winning ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .layers import ShapeMismatch


@dataclass(frozen=True)
class WindowConfig:
    """Window length for batching; the slide stride is fixed at 1."""

    w: int = 60
    stride: int = 1

    def __post_init__(self):
        if self.w < 1:
            raise ValueError(f"window size must be >= 1, got {self.w}")
        if self.stride != 1:
            raise ValueError("window stride is fixed at 1")


@dataclass
class WindowBatch:
    """One length-W slice of consecutive lines.

    targets hold integer tuple elements (W, label_len) when labels are known;
    mask is 0 on padded tail rows of a short stream.
    """

    inputs: np.ndarray
    start_index: int
    targets: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None

    def targets_one_hot(self, m: int) -> np.ndarray:
        from .network import one_hot_targets

        if self.targets is None:
            raise ValueError("window has no targets")
        return one_hot_targets(self.targets, m)


def window_starts(n_lines: int, w: int) -> np.ndarray:
    """Start offsets of the stride-1 windows over n_lines."""
    if n_lines >= w:
        return np.arange(n_lines - w + 1)
    return np.zeros(1, dtype=int)


def make_windows(vectors, labels=None, cfg: WindowConfig = WindowConfig()) -> list[WindowBatch]:
    """Cut a (N, F) feature sequence into stride-1 windows.

    Yields max(1, N - W + 1) windows; a stream shorter than W becomes one
    window zero-padded at the end with a padding mask.
    """
    x = np.asarray(vectors)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected (N, F) vectors, got {x.shape}")
    n = x.shape[0]
    if n == 0:
        raise ShapeMismatch("empty vector sequence")
    y = None
    if labels is not None:
        y = np.asarray(labels)
        if y.shape[0] != n:
            raise ShapeMismatch(f"{n} vectors but {y.shape[0]} labels")
    w = cfg.w

    if n < w:
        inputs = np.zeros((w, x.shape[1]), dtype=x.dtype)
        inputs[:n] = x
        mask = np.zeros(w, dtype=np.float32)
        mask[:n] = 1.0
        targets = None
        if y is not None:
            targets = np.zeros((w,) + y.shape[1:], dtype=y.dtype)
            targets[:n] = y
        return [WindowBatch(inputs=inputs, start_index=0, targets=targets, mask=mask)]

    return [
        WindowBatch(
            inputs=x[s : s + w],
            start_index=int(s),
            targets=None if y is None else y[s : s + w],
        )
        for s in window_starts(n, w)
    ]


def covering_windows(line_index: int, n_lines: int, w: int) -> range:
    """Start offsets of every window that contains the given line."""
    last_start = max(0, n_lines - w)
    return range(max(0, line_index - w + 1), min(line_index, last_start) + 1)


def _pack_tuples(window_tuples: np.ndarray) -> np.ndarray:
    """Pack (…, L) tuple components into single ints so votes hash cheaply.

    Valid whenever every component is < 2**12; class ids here are < m <= 59.
    """
    label_len = window_tuples.shape[-1]
    radix = (1 << (12 * np.arange(label_len - 1, -1, -1))).astype(np.int64)
    return window_tuples.astype(np.int64) @ radix


def _unpack_tuple(packed: int, label_len: int) -> tuple:
    out = []
    for _ in range(label_len):
        out.append(packed & 0xFFF)
        packed >>= 12
    return tuple(reversed(out))


def majority_vote(window_tuples: np.ndarray, starts: np.ndarray, n_lines: int):
    """Fuse per-window tuple predictions into one tuple per line.

    window_tuples: (n_windows, W, L) integer predictions, rows ordered by
    window start. Returns ((n_lines, L) tuples, (n_lines,) vote shares).
    For each line the most frequent full tuple wins; on ties, the tuple
    predicted by the earliest covering window.
    """
    n_windows, w, label_len = window_tuples.shape
    out = np.zeros((n_lines, label_len), dtype=np.int64)
    conf = np.zeros(n_lines, dtype=np.float64)
    row_of_start = {int(s): j for j, s in enumerate(starts)}
    packed = _pack_tuples(window_tuples)

    for i in range(n_lines):
        counts: dict[int, list] = {}
        order = 0
        for s in covering_windows(i, n_lines, w):
            key = int(packed[row_of_start[s], i - s])
            entry = counts.get(key)
            if entry is None:
                counts[key] = [1, order]
            else:
                entry[0] += 1
            order += 1
        best_key, (best_count, _) = min(
            counts.items(), key=lambda kv: (-kv[1][0], kv[1][1])
        )
        out[i] = _unpack_tuple(best_key, label_len)
        conf[i] = best_count / order
    return out, conf


def predict_lines(net, vectors, cfg: WindowConfig = WindowConfig(), batch_windows: int = 256):
    """Label every line of a feature sequence with the trained network.

    Runs every stride-1 window through the model in inference mode, takes the
    per-element argmax in each window, and majority-votes per line. Returns
    ((N, label_len) integer tuples, (N,) confidences).
    """
    x = np.asarray(vectors, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != net.n_features:
        raise ShapeMismatch(f"expected (N, {net.n_features}) vectors, got {x.shape}")
    n = x.shape[0]
    w = cfg.w

    if n < w:
        # One padded window; its per-position argmax is the (unanimous) vote.
        batch = make_windows(x, cfg=cfg)[0]
        probs = net.forward(batch.inputs[None], training=False)[0]
        votes = probs.argmax(axis=-1)
        return votes[:n].astype(np.int64), np.ones(n)

    starts = window_starts(n, w)
    votes = np.empty((len(starts), w, net.label_len), dtype=np.int16)
    for lo in range(0, len(starts), batch_windows):
        chunk = starts[lo : lo + batch_windows]
        stacked = np.stack([x[s : s + w] for s in chunk])
        probs = net.forward(stacked, training=False)
        votes[lo : lo + len(chunk)] = probs.argmax(axis=-1).astype(np.int16)
    tuples, conf = majority_vote(votes, starts, n)
    return tuples.astype(np.int64), conf


class StreamingVoter:
    """Incremental majority voting for live ingestion.

    Lines are fed one at a time; window k is evaluated as soon as line
    k + W - 1 exists, and line k finalizes at that point (every window that
    will ever cover it has voted). flush() finalizes the tail, reproducing
    exactly what batch predict_lines would have returned.
    """

    def __init__(self, net, cfg: WindowConfig = WindowConfig()):
        self.net = net
        self.cfg = cfg
        self._rows: list[np.ndarray] = []
        self._votes: list[np.ndarray] = []  # per computed window: (W, L) tuples
        self._emitted = 0

    def feed(self, vector) -> list[tuple[int, np.ndarray, float]]:
        """Add one line; returns newly finalized (line_index, tuple, confidence)."""
        self._rows.append(np.asarray(vector, dtype=np.float32))
        w = self.cfg.w
        n = len(self._rows)
        if n < w:
            return []
        start = n - w
        window = np.stack(self._rows[start:])
        probs = self.net.forward(window[None], training=False)[0]
        self._votes.append(probs.argmax(axis=-1).astype(np.int16))
        return self._finalize_through(start)

    def flush(self) -> list[tuple[int, np.ndarray, float]]:
        """Finalize all remaining lines as batch prediction would."""
        n = len(self._rows)
        if n == 0:
            return []
        w = self.cfg.w
        if n < w:
            x = np.stack(self._rows)
            tuples, conf = predict_lines(self.net, x, self.cfg)
            out = [(i, tuples[i], float(conf[i])) for i in range(self._emitted, n)]
            self._emitted = n
            return out
        return self._finalize_through(n - 1)

    def _finalize_through(self, last_line: int) -> list[tuple[int, np.ndarray, float]]:
        out = []
        n = len(self._rows)
        w = self.cfg.w
        for i in range(self._emitted, last_line + 1):
            counts: dict[tuple, list] = {}
            order = 0
            for s in covering_windows(i, n, w):
                if s >= len(self._votes):
                    break
                key = tuple(int(v) for v in self._votes[s][i - s])
                entry = counts.get(key)
                if entry is None:
                    counts[key] = [1, order]
                else:
                    entry[0] += 1
                order += 1
            if not counts:
                continue
            best_key, (best_count, _) = min(
                counts.items(), key=lambda kv: (-kv[1][0], kv[1][1])
            )
            out.append((i, np.asarray(best_key, dtype=np.int64), best_count / order))
        self._emitted = last_line + 1
        return out
