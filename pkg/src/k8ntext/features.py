"""Feature extraction: flatten audit records and encode them as fixed-width
numeric vectors driven by a manifest of dotted paths.

Categorical values are mapped to per-feature integer indices and normalized
by the feature's cardinality, so every vector entry lands in [0, 1] and the
model input shape is exactly (window, n_features).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources as importlib_resources
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

# Explicit stand-in for absent values so vocabularies can treat absence as a
# first-class category (reserved index 0).
NULL = "__null__"

NULL_INDEX = 0
OOV_INDEX = 1
FIRST_VALUE_INDEX = 2


class EmptyStore(ValueError):
    """Raised when fitting vocabularies over an empty event store."""


class ManifestError(ValueError):
    """Raised for malformed feature manifest files."""


@dataclass(frozen=True)
class FeatureSpec:
    path: str
    kind: str = "categorical"  # or "numeric-categorical"


class FeatureManifest:
    """Ordered list of feature paths; its length fixes the model input width."""

    def __init__(self, specs: Iterable[FeatureSpec]):
        specs = list(specs)
        paths = [s.path for s in specs]
        if len(paths) != len(set(paths)):
            raise ManifestError("duplicate feature path in manifest")
        self.specs = specs

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    @property
    def paths(self) -> list[str]:
        return [s.path for s in self.specs]

    def without(self, path: str) -> "FeatureManifest":
        """Copy of this manifest with one feature removed (ablation runs)."""
        if path not in self.paths:
            raise ManifestError(f"manifest has no feature {path!r}")
        return FeatureManifest([s for s in self.specs if s.path != path])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for spec in self.specs:
            h.update(f"{spec.path} {spec.kind}\n".encode())
        return h.hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "FeatureManifest":
        specs = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) == 1:
                specs.append(FeatureSpec(parts[0]))
            elif len(parts) == 2 and parts[1] in ("numeric", "numeric-categorical"):
                specs.append(FeatureSpec(parts[0], "numeric-categorical"))
            else:
                raise ManifestError(f"line {lineno}: cannot parse {raw!r}")
        if not specs:
            raise ManifestError("manifest lists no features")
        return cls(specs)

    @classmethod
    def from_file(cls, path) -> "FeatureManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    @classmethod
    def default(cls) -> "FeatureManifest":
        text = importlib_resources.files("k8ntext.data").joinpath("default.manifest").read_text()
        return cls.from_text(text)


def _stringify(value) -> str:
    if value is None:
        return NULL
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def split_user_agent(agent: str) -> dict[str, str]:
    """Split a raw user agent into tool, version, extra.

    "kubectl/v1.28.2 (linux/amd64) kubernetes/89a4ea3" gives tool "kubectl",
    version "v1.28.2", extra "(linux/amd64) kubernetes/89a4ea3". Anything
    without a "/" is all tool.
    """
    out = {}
    tool, slash, rest = agent.partition("/")
    out["userAgent.tool"] = tool
    if slash:
        version, _, extra = rest.partition(" ")
        out["userAgent.version"] = version
        if extra:
            out["userAgent.extra"] = extra
    return out


def flatten(record: Mapping) -> dict[str, str]:
    """Flatten a nested record into a single-level dotted-path map.

    Arrays index as path[i]; all leaves are stringified; the userAgent and
    requestURI strings additionally expand into derived sub-fields.
    """
    flat: dict[str, str] = {}

    def walk(prefix: str, node):
        if isinstance(node, Mapping):
            for key, value in node.items():
                walk(f"{prefix}.{key}" if prefix else str(key), value)
        elif isinstance(node, (list, tuple)):
            for i, value in enumerate(node):
                walk(f"{prefix}[{i}]", value)
        else:
            flat[prefix] = _stringify(node)

    walk("", record)

    agent = record.get("userAgent")
    if isinstance(agent, str):
        flat.update(split_user_agent(agent))
    uri = record.get("requestURI")
    if isinstance(uri, str):
        path, qmark, query = uri.partition("?")
        flat["requestURI.path"] = path
        if qmark:
            flat["requestURI.query"] = query
    return flat


def fill_manifest_nulls(flat: dict[str, str], manifest: FeatureManifest) -> dict[str, str]:
    """Ensure every manifest path has an entry, defaulting to the null sentinel."""
    for path in manifest.paths:
        flat.setdefault(path, NULL)
    return flat


class Vocabulary:
    """Per-feature value-to-index maps.

    Index 0 is the null sentinel, 1 is out-of-vocabulary; observed values get
    indices from 2 in first-seen order, so fitting is deterministic given the
    store's iteration order.
    """

    def __init__(self, manifest: FeatureManifest):
        self.manifest = manifest
        self._maps: dict[str, dict[str, int]] = {p: {} for p in manifest.paths}

    def fit(self, events) -> "Vocabulary":
        count = 0
        for event in events:
            count += 1
            for path in self.manifest.paths:
                value = event.flat.get(path, NULL)
                if value == NULL:
                    continue
                vocab = self._maps[path]
                if value not in vocab:
                    vocab[value] = FIRST_VALUE_INDEX + len(vocab)
        if count == 0:
            raise EmptyStore("cannot fit vocabularies on an empty store")
        return self

    def index(self, path: str, value: str) -> int:
        if value == NULL:
            return NULL_INDEX
        return self._maps[path].get(value, OOV_INDEX)

    def cardinality(self, path: str) -> int:
        return FIRST_VALUE_INDEX + len(self._maps[path])

    def mapping(self, path: str) -> dict[str, int]:
        return dict(self._maps[path])

    def to_dict(self) -> dict:
        return {path: dict(self._maps[path]) for path in self.manifest.paths}

    @classmethod
    def from_dict(cls, manifest: FeatureManifest, data: dict) -> "Vocabulary":
        vocab = cls(manifest)
        for path in manifest.paths:
            vocab._maps[path] = {str(k): int(v) for k, v in data.get(path, {}).items()}
        return vocab


def encode_record(event, manifest: FeatureManifest, vocab: Vocabulary) -> np.ndarray:
    """Encode one event into a vector of len(manifest) values in [0, 1].

    Each slot is index/cardinality for that feature: null is 0, unseen values
    are 1/cardinality.
    """
    out = np.empty(len(manifest), dtype=np.float64)
    flat = event.flat
    for i, path in enumerate(manifest.paths):
        value = flat.get(path, NULL)
        out[i] = vocab.index(path, value) / vocab.cardinality(path)
    return out


class FeatureEncoder(BaseEstimator, TransformerMixin):
    """Sklearn-style transformer from parsed audit events to feature matrices.

    fit() builds per-feature vocabularies over the given events; transform()
    maps events to an (n_events, n_features) float array.
    """

    def __init__(self, manifest: FeatureManifest | None = None):
        self.manifest = manifest

    def fit(self, X, y=None):
        manifest = self.manifest if self.manifest is not None else FeatureManifest.default()
        self.manifest_ = manifest
        self.vocab_ = Vocabulary(manifest).fit(X)
        self.n_features_in_ = len(manifest)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "vocab_"):
            raise RuntimeError("FeatureEncoder.transform called before fit")
        rows = [encode_record(event, self.manifest_, self.vocab_) for event in X]
        if not rows:
            return np.empty((0, self.n_features_in_), dtype=np.float32)
        return np.asarray(rows, dtype=np.float32)
