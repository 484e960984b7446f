"""Metrics and experiment harnesses: macro-F1 / majority accuracy over label
tuples, window-size sweeps, feature ablation, contiguous k-fold rotation,
context agreement, and clustering-rate histograms.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import labels
from .clustering import Context, reconstruct
from .features import FeatureEncoder, FeatureManifest
from .model import SequenceLabelNet, TrainConfig, WindowConfig, predict_lines, train

CLUSTER_BINS = ((1, 4), (5, 9), (10, 49), (50, 99), (100, None))


class LengthMismatch(ValueError):
    """Prediction and truth sequences have different lengths."""


class InsufficientData(ValueError):
    """A fold or split is too small for the window size."""


def _as_rows(seq) -> np.ndarray:
    arr = np.asarray(
        [t.as_tuple() if isinstance(t, labels.LabelTuple) else t for t in seq]
    )
    if arr.ndim == 1:  # already encoded ints
        return arr.reshape(-1, 1)
    return arr


def _encode_rows(rows: np.ndarray) -> np.ndarray:
    # Pack tuple rows into single ints so classes hash; 12 bits per element.
    radix = (1 << (12 * np.arange(rows.shape[1] - 1, -1, -1))).astype(np.int64)
    return rows.astype(np.int64) @ radix


def macro_f1(pred, true) -> float:
    """Unweighted mean over the distinct true tuples of 2PR/(P+R).

    Classes the model never predicts correctly contribute 0, which punishes
    poor performance on underrepresented classes.
    """
    pred_rows, true_rows = _as_rows(pred), _as_rows(true)
    if len(pred_rows) != len(true_rows):
        raise LengthMismatch(f"{len(pred_rows)} predictions vs {len(true_rows)} truths")
    if len(true_rows) == 0:
        return 0.0
    p, t = _encode_rows(pred_rows), _encode_rows(true_rows)
    scores = []
    for cls in np.unique(t):
        tp = int(((p == cls) & (t == cls)).sum())
        n_pred = int((p == cls).sum())
        n_true = int((t == cls).sum())
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / n_pred
        recall = tp / n_true
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def majority_accuracy(pred, true) -> float:
    """Exact-tuple accuracy over lines, after voting flattens batches."""
    pred_rows, true_rows = _as_rows(pred), _as_rows(true)
    if len(pred_rows) != len(true_rows):
        raise LengthMismatch(f"{len(pred_rows)} predictions vs {len(true_rows)} truths")
    if len(true_rows) == 0:
        return 0.0
    return float((_encode_rows(pred_rows) == _encode_rows(true_rows)).mean())


def per_class_f1(pred, true) -> dict[tuple, float]:
    pred_rows, true_rows = _as_rows(pred), _as_rows(true)
    if len(pred_rows) != len(true_rows):
        raise LengthMismatch(f"{len(pred_rows)} predictions vs {len(true_rows)} truths")
    p, t = _encode_rows(pred_rows), _encode_rows(true_rows)
    out = {}
    for cls, row in zip(_encode_rows(np.unique(true_rows, axis=0)), np.unique(true_rows, axis=0)):
        tp = int(((p == cls) & (t == cls)).sum())
        n_pred = int((p == cls).sum())
        n_true = int((t == cls).sum())
        if tp == 0:
            out[tuple(row)] = 0.0
        else:
            precision, recall = tp / n_pred, tp / n_true
            out[tuple(row)] = 2 * precision * recall / (precision + recall)
    return out


def confusion_summary(pred, true, top: int = 10) -> list[dict]:
    """Most frequent (true, predicted) mistakes."""
    pred_rows, true_rows = _as_rows(pred), _as_rows(true)
    mistakes = Counter()
    for p_row, t_row in zip(pred_rows, true_rows):
        if tuple(p_row) != tuple(t_row):
            mistakes[(tuple(t_row), tuple(p_row))] += 1
    return [
        {"true": list(t), "predicted": list(p), "count": n}
        for (t, p), n in mistakes.most_common(top)
    ]


@dataclass
class EvalReport:
    macro_f1: float = 0.0
    majority_accuracy: float = 0.0
    per_class: dict = field(default_factory=dict)
    confusion: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    clustering_bins: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "macro_f1": self.macro_f1,
            "majority_accuracy": self.majority_accuracy,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion,
            "timing": self.timing,
            "clustering_bins": self.clustering_bins,
        }


# --- shared experiment plumbing ------------------------------------------------


def corpus_arrays(store, truth, manifest: FeatureManifest | None = None):
    """Encode a labeled store into (X, y, mask, encoder)."""
    events = store.events
    encoder = FeatureEncoder(manifest).fit(events)
    X = encoder.transform(events)
    y, mask = truth.label_arrays(store)
    return X, y, mask, encoder


def train_and_score(
    X,
    y,
    mask,
    w: int,
    cfg: TrainConfig,
    test_fraction: float = 0.1,
    seed: int | None = None,
):
    """Hold out the timeline tail, train, and score per-line predictions."""
    if seed is not None:
        cfg = TrainConfig(**{**cfg.__dict__, "seed": seed})
    n = X.shape[0]
    n_test = int(round(n * test_fraction))
    if n - n_test < w or n_test < w:
        raise InsufficientData(f"{n} lines cannot give a window-{w} train/test split")
    net = SequenceLabelNet(X.shape[1], m=59, seed=cfg.seed)
    t0 = time.perf_counter()
    result = train(net, X[: n - n_test], y[: n - n_test], w, cfg, mask[: n - n_test])
    train_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred, _conf = predict_lines(net, X[n - n_test :], WindowConfig(w))
    infer_s = time.perf_counter() - t0
    sel = mask[n - n_test :] > 0
    f1 = macro_f1(pred[sel], y[n - n_test :][sel])
    acc = majority_accuracy(pred[sel], y[n - n_test :][sel])
    return {
        "f1": f1,
        "accuracy": acc,
        "train_s": train_s,
        "infer_ms_per_line": 1000.0 * infer_s / max(1, n_test),
        "net": net,
        "result": result,
    }


@dataclass
class SweepRow:
    w: int
    mean_f1: float
    std_f1: float
    mean_train_s: float
    std_train_s: float
    trials: int

    def as_dict(self):
        return self.__dict__.copy()


def window_sweep(store, truth, w_values, trials: int = 1, cfg: TrainConfig | None = None,
                 manifest: FeatureManifest | None = None) -> list[SweepRow]:
    """Train per window size, averaging F1 and training time over trials."""
    cfg = cfg or TrainConfig()
    X, y, mask, _ = corpus_arrays(store, truth, manifest)
    rows = []
    for w in w_values:
        f1s, times = [], []
        for trial in range(trials):
            out = train_and_score(X, y, mask, w, cfg, seed=cfg.seed + trial)
            f1s.append(out["f1"])
            times.append(out["train_s"])
        rows.append(
            SweepRow(
                w=w,
                mean_f1=float(np.mean(f1s)),
                std_f1=float(np.std(f1s)),
                mean_train_s=float(np.mean(times)),
                std_train_s=float(np.std(times)),
                trials=trials,
            )
        )
    return rows


def feature_ablation(store, truth, manifest: FeatureManifest | None = None,
                     w: int = 20, cfg: TrainConfig | None = None,
                     paths: list[str] | None = None) -> dict:
    """Retrain with one feature removed at a time; report the F1 deltas.

    paths limits which features are ablated (retraining per feature is the
    expensive part); default is the full manifest.
    """
    cfg = cfg or TrainConfig()
    manifest = manifest or FeatureManifest.default()
    X, y, mask, _ = corpus_arrays(store, truth, manifest)
    base = train_and_score(X, y, mask, w, cfg)
    report = {"baseline_f1": base["f1"], "deltas": {}}
    for path in paths if paths is not None else manifest.paths:
        reduced = manifest.without(path)
        Xr, yr, maskr, _ = corpus_arrays(store, truth, reduced)
        out = train_and_score(Xr, yr, maskr, w, cfg)
        report["deltas"][path] = out["f1"] - base["f1"]
    return report


def kfold_eval(store, truth, k: int, w: int = 20, cfg: TrainConfig | None = None,
               manifest: FeatureManifest | None = None) -> list[float]:
    """Contiguous k-fold rotation over the timeline, majority accuracy per fold.

    The two training segments around the held-out fold are concatenated; the
    handful of windows straddling the seam are tolerated.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    cfg = cfg or TrainConfig()
    X, y, mask, _ = corpus_arrays(store, truth, manifest)
    n = X.shape[0]
    if n // k < w:
        raise InsufficientData(f"fold size {n // k} is smaller than window {w}")
    bounds = [round(i * n / k) for i in range(k + 1)]
    accuracies = []
    for i in range(k):
        lo, hi = bounds[i], bounds[i + 1]
        Xtr = np.concatenate([X[:lo], X[hi:]])
        ytr = np.concatenate([y[:lo], y[hi:]])
        mtr = np.concatenate([mask[:lo], mask[hi:]])
        net = SequenceLabelNet(X.shape[1], m=59, seed=cfg.seed)
        train(net, Xtr, ytr, w, cfg, mtr)
        pred, _ = predict_lines(net, X[lo:hi], WindowConfig(w))
        sel = mask[lo:hi] > 0
        accuracies.append(majority_accuracy(pred[sel], y[lo:hi][sel]))
    return accuracies


# --- clustering metrics -----------------------------------------------------


def clustering_stats(contexts: list[Context]) -> dict[str, int]:
    """Histogram of labels by the mean number of lines their contexts hold."""
    sizes: dict[tuple, list[int]] = {}
    for ctx in contexts:
        sizes.setdefault(ctx.label.as_tuple(), []).append(len(ctx.members))
    bins = {_bin_name(lo, hi): 0 for lo, hi in CLUSTER_BINS}
    for label, counts in sizes.items():
        mean = float(np.mean(counts))
        for lo, hi in CLUSTER_BINS:
            if mean >= lo and (hi is None or mean <= hi):
                bins[_bin_name(lo, hi)] += 1
                break
    return bins


def _bin_name(lo, hi):
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def rand_agreement(truth_sets: dict[str, set], contexts: list[Context]) -> float:
    """Pairwise same-context agreement between truth and reconstruction."""
    t_assign = {}
    for cid, members in truth_sets.items():
        for audit_id in members:
            t_assign[audit_id] = cid
    p_assign = {}
    for ctx in contexts:
        for audit_id in ctx.members:
            p_assign[audit_id] = ctx.context_id
    ids = [a for a in t_assign if a in p_assign]
    n = len(ids)
    if n < 2:
        return 1.0
    pair, tc, pc = Counter(), Counter(), Counter()
    for a in ids:
        pair[(t_assign[a], p_assign[a])] += 1
        tc[t_assign[a]] += 1
        pc[p_assign[a]] += 1

    def c2(x):
        return x * (x - 1) // 2

    total = c2(n)
    concordant = total + 2 * sum(c2(v) for v in pair.values())
    concordant -= sum(c2(v) for v in tc.values()) + sum(c2(v) for v in pc.values())
    return concordant / total


def trigger_accuracy(truth, contexts: list[Context]) -> float:
    """Share of truth contexts whose best-overlap reconstruction picked the
    right triggering event."""
    truth_sets = truth.context_sets()
    triggers = truth.trigger_of_context()
    if not truth_sets:
        return 1.0
    ok = 0
    for cid, members in truth_sets.items():
        best = max(contexts, key=lambda c: len(c.members & members), default=None)
        if best is not None and best.trigger == triggers.get(cid):
            ok += 1
    return ok / len(truth_sets)


def context_report(store, truth, registry=None) -> dict:
    """Reconstruct from ground-truth labels and score against the truth."""
    from .clustering import predictions_from_truth

    contexts, warnings = reconstruct(store, predictions_from_truth(store, truth), registry)
    return {
        "contexts": contexts,
        "rand_agreement": rand_agreement(truth.context_sets(), contexts),
        "trigger_accuracy": trigger_accuracy(truth, contexts),
        "warnings": warnings,
        "bins": clustering_stats(contexts),
    }
