"""End-to-end pipeline: encoder + labeler + clustering behind one object,
with a single checkpoint file carrying weights, vocabularies, and the
hashes of the registry/manifest it was trained against.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np

from . import labels
from .clustering import Context, predictions_from_arrays, reconstruct
from .events import EventStore
from .features import FeatureEncoder, FeatureManifest, Vocabulary
from .model import TrainConfig, WindowConfig, WindowedSequenceLabeler, predict_lines
from .model.network import CheckpointError


class Pipeline:
    """Fitted feature encoder plus trained sequence labeler."""

    def __init__(
        self,
        registry: labels.ActionRegistry,
        manifest: FeatureManifest,
        encoder: FeatureEncoder,
        labeler: WindowedSequenceLabeler,
    ):
        self.registry = registry
        self.manifest = manifest
        self.encoder = encoder
        self.labeler = labeler

    @classmethod
    def train_from_store(
        cls,
        store: EventStore,
        truth,
        window: int = 60,
        registry: labels.ActionRegistry | None = None,
        manifest: FeatureManifest | None = None,
        **labeler_params,
    ) -> "Pipeline":
        registry = registry or labels.build_registry()
        manifest = manifest or FeatureManifest.default()
        events = store.events
        encoder = FeatureEncoder(manifest).fit(events)
        X = encoder.transform(events)
        y, mask = truth.label_arrays(store)
        labeler = WindowedSequenceLabeler(window=window, m=registry.m, **labeler_params)
        labeler.fit(X, y, line_mask=mask)
        return cls(registry, manifest, encoder, labeler)

    # -- inference ------------------------------------------------------------

    def predict_store(self, store: EventStore):
        """Per-line tuples and confidences for the whole store, in order."""
        X = self.encoder.transform(store.events)
        return self.labeler.predict_with_confidence(X)

    def label_and_cluster(self, store: EventStore) -> tuple[list[Context], list[str]]:
        tuples, _conf = self.predict_store(store)
        predictions = predictions_from_arrays(store, tuples)
        return reconstruct(store, predictions, self.registry)

    # -- persistence ------------------------------------------------------------

    def save(self, path):
        self.labeler.save(
            path,
            registry_hash=self.registry.content_hash(),
            manifest_hash=self.manifest.content_hash(),
        )
        # Append the vocabulary and manifest next to the weights so a fresh
        # process can reproduce training-time encodings exactly.
        with zipfile.ZipFile(path, "a", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("vocab.json", json.dumps(self.encoder.vocab_.to_dict()))
            zf.writestr(
                "features.txt",
                "\n".join(
                    f"{s.path} numeric" if s.kind == "numeric-categorical" else s.path
                    for s in self.manifest
                ),
            )

    @classmethod
    def load(cls, path, registry: labels.ActionRegistry | None = None) -> "Pipeline":
        registry = registry or labels.build_registry()
        try:
            with zipfile.ZipFile(path) as zf:
                manifest = FeatureManifest.from_text(zf.read("features.txt").decode())
                vocab_data = json.loads(zf.read("vocab.json"))
        except (OSError, zipfile.BadZipFile, KeyError) as exc:
            raise CheckpointError(f"cannot read pipeline checkpoint {path}: {exc}") from None
        labeler = WindowedSequenceLabeler.from_checkpoint(
            path,
            registry_hash=registry.content_hash(),
            manifest_hash=manifest.content_hash(),
        )
        encoder = FeatureEncoder(manifest)
        encoder.manifest_ = manifest
        encoder.vocab_ = Vocabulary.from_dict(manifest, vocab_data)
        encoder.n_features_in_ = len(manifest)
        return cls(registry, manifest, encoder, labeler)

    @property
    def window(self) -> int:
        return self.labeler.window


class StreamingLabeler:
    """Live labeling for the webhook path: feed events as they arrive, get
    finalized (event, tuple, confidence) out once every covering window has
    voted."""

    def __init__(self, pipeline: Pipeline):
        from .model import StreamingVoter

        self.pipeline = pipeline
        self.voter = StreamingVoter(pipeline.labeler.net_, WindowConfig(pipeline.window))
        self.events: list = []

    def feed(self, event):
        from .features import encode_record

        self.events.append(event)
        vector = encode_record(event, self.pipeline.manifest, self.pipeline.encoder.vocab_)
        return [
            (self.events[i], labels.LabelTuple(*(int(v) for v in row)), conf)
            for i, row, conf in self.voter.feed(vector.astype(np.float32))
        ]

    def flush(self):
        return [
            (self.events[i], labels.LabelTuple(*(int(v) for v in row)), conf)
            for i, row, conf in self.voter.flush()
        ]
