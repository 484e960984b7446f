"""The sequence labeling network: two bidirectional recurrent layers with
batch normalization, dropout, and a per-timestep affine head whose output is
reshaped to (window, label_len, m) and normalized per tuple element.

Parameter shapes depend only on the feature count and the label space, never
on the window size.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .layers import BatchNorm, BiLSTM, Dropout, ShapeMismatch, TimeDistributedDense

CHECKPOINT_FORMAT = "k8ntext-checkpoint/1"


class CheckpointError(ValueError):
    """Raised when a checkpoint is unreadable or inconsistent with the
    registry/manifest it is loaded against."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SequenceLabelNet:
    def __init__(
        self,
        n_features: int,
        m: int,
        label_len: int = 5,
        hidden_scale: tuple[int, int] = (4, 3),
        dropout: float = 0.4,
        dtype=np.float32,
        seed: int = 0,
    ):
        self.n_features = n_features
        self.m = m
        self.label_len = label_len
        self.hidden_scale = tuple(hidden_scale)
        self.dropout_rate = dropout
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        h1 = hidden_scale[0] * n_features
        h2 = hidden_scale[1] * n_features
        out = label_len * m
        self.layers = {
            "bilstm1": BiLSTM(n_features, h1, rng, dtype),
            "bn1": BatchNorm(2 * h1, dtype),
            "bilstm2": BiLSTM(2 * h1, h2, rng, dtype),
            "dropout": Dropout(dropout, rng),
            "dense": TimeDistributedDense(2 * h2, out, rng, dtype),
            "bn2": BatchNorm(out, dtype),
        }
        self._order = ["bilstm1", "bn1", "bilstm2", "dropout", "dense", "bn2"]

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            f"{lname}.{pname}": p
            for lname in self._order
            for pname, p in self.layers[lname].params.items()
        }

    def grads(self) -> dict[str, np.ndarray]:
        return {
            f"{lname}.{pname}": g
            for lname in self._order
            for pname, g in self.layers[lname].grads.items()
        }

    def zero_grads(self):
        for lname in self._order:
            self.layers[lname].zero_grads()

    def set_parameters(self, values: dict[str, np.ndarray]):
        for name, value in values.items():
            lname, pname = name.split(".", 1)
            target = self.layers[lname].params[pname]
            if target.shape != value.shape:
                raise ShapeMismatch(f"parameter {name}: {value.shape} != {target.shape}")
            target[...] = value

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers.values())

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for lname in self._order:
            for bname, b in self.layers[lname].buffers().items():
                out[f"{lname}.{bname}"] = b
        return out

    # -- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """(B, T, F) inputs to (B, T, label_len, m) per-element probabilities."""
        if x.ndim != 3 or x.shape[2] != self.n_features:
            raise ShapeMismatch(
                f"expected (B, T, {self.n_features}) inputs, got {x.shape}"
            )
        h = np.asarray(x, dtype=self.dtype)
        for lname in self._order:
            h = self.layers[lname].forward(h, training=training)
        B, T, _ = h.shape
        logits = h.reshape(B, T, self.label_len, self.m)
        return softmax(logits)

    def backward(self, dlogits: np.ndarray):
        """Backpropagate a gradient w.r.t. the pre-softmax logits."""
        B, T = dlogits.shape[:2]
        grad = dlogits.reshape(B, T, self.label_len * self.m).astype(self.dtype)
        for lname in reversed(self._order):
            grad = self.layers[lname].backward(grad)
        return grad

    # -- persistence -----------------------------------------------------------

    def sidecar_config(self) -> dict:
        return {
            "n_features": self.n_features,
            "m": self.m,
            "label_len": self.label_len,
            "hidden_scale": list(self.hidden_scale),
            "dropout": self.dropout_rate,
        }

    def save(self, path, extra: dict | None = None):
        """Write a self-describing checkpoint: a zip holding a JSON manifest
        plus one flat little-endian float32 blob of all weights."""
        params = self.parameters()
        buffers = self.buffers()
        order = sorted(params) + sorted(buffers)
        entries = []
        blob = io.BytesIO()
        for name in order:
            arr = params.get(name)
            kind = "param"
            if arr is None:
                arr = buffers[name]
                kind = "buffer"
            data = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"name": name, "shape": list(arr.shape), "kind": kind})
            blob.write(data.tobytes())
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "model": self.sidecar_config(),
            "entries": entries,
        }
        manifest.update(extra or {})
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
            zf.writestr("weights.bin", blob.getvalue())

    @classmethod
    def load(cls, path, registry_hash: str | None = None, manifest_hash: str | None = None):
        """Load a checkpoint; optional hashes are verified when given."""
        try:
            with zipfile.ZipFile(path) as zf:
                manifest = json.loads(zf.read("manifest.json"))
                raw = zf.read("weights.bin")
        except (OSError, zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
        for key, expected in (("registry_hash", registry_hash), ("manifest_hash", manifest_hash)):
            stored = manifest.get(key)
            if expected is not None and stored is not None and stored != expected:
                raise CheckpointError(
                    f"checkpoint {key} mismatch: trained with {stored[:12]}..., "
                    f"loading against {expected[:12]}..."
                )
        cfg = manifest["model"]
        net = cls(
            n_features=cfg["n_features"],
            m=cfg["m"],
            label_len=cfg["label_len"],
            hidden_scale=tuple(cfg["hidden_scale"]),
            dropout=cfg["dropout"],
        )
        params = net.parameters()
        buffers = net.buffers()
        offset = 0
        for entry in manifest["entries"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape)
            offset += size * 4
            target = params.get(entry["name"]) if entry["kind"] == "param" else buffers.get(entry["name"])
            if target is None or target.shape != shape:
                raise CheckpointError(f"unexpected checkpoint entry {entry['name']}")
            target[...] = arr.astype(target.dtype)
        net.checkpoint_manifest = manifest
        return net


def focal_loss_and_grad(
    probs: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray | None = None,
    gamma: float = 2.0,
):
    """Categorical focal cross-entropy, averaged over unmasked line/element
    positions, plus its gradient w.r.t. the logits.

    probs: (B, T, L, m) softmax outputs; targets: (B, T, L) integer classes;
    mask: (B, T) with 1 for real lines, 0 for padding.
    """
    if probs.shape[:3] != targets.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs targets {targets.shape}")
    B, T, L, m = probs.shape
    if mask is None:
        mask = np.ones((B, T), dtype=probs.dtype)
    elif mask.shape != (B, T):
        raise ShapeMismatch(f"mask {mask.shape} vs (B, T)=({B}, {T})")

    denom = float(mask.sum()) * L
    if denom == 0:
        return 0.0, np.zeros_like(probs)

    idx_b, idx_t, idx_l = np.indices(targets.shape, sparse=True)
    p_t = probs[idx_b, idx_t, idx_l, targets]
    p_t = np.clip(p_t, 1e-12, 1.0)
    one_minus = 1.0 - p_t
    log_p = np.log(p_t)
    per_pos = -(one_minus**gamma) * log_p

    w = (mask / denom)[:, :, None]
    loss = float((per_pos * w).sum())

    # d(loss)/d(p_t), then through softmax to the logits.
    if gamma == 0.0:
        g = -1.0 / p_t
    else:
        g = gamma * (one_minus ** (gamma - 1.0)) * log_p - (one_minus**gamma) / p_t
    a = g * p_t * w  # (B, T, L)
    dlogits = -a[..., None] * probs
    dlogits[idx_b, idx_t, idx_l, targets] += a
    return loss, dlogits


def one_hot_targets(targets: np.ndarray, m: int) -> np.ndarray:
    """(…, L) integer targets to (…, L, m) one-hot blocks."""
    out = np.zeros(targets.shape + (m,), dtype=np.float32)
    np.put_along_axis(out, targets[..., None], 1.0, axis=-1)
    return out
