"""Sklearn-style wrapper around the windowed sequence labeler so it composes
with pipelines, cloning, and parameter search."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ..validation import check_feature_matrix, check_label_matrix, check_line_mask
from .network import SequenceLabelNet
from .training import TrainConfig, train
from .windows import WindowConfig, predict_lines


class WindowedSequenceLabeler(BaseEstimator):
    """Per-line action labeling with a windowed recurrent network.

    fit() takes an (N, F) feature matrix and (N, 5) integer tuple targets in
    line order; predict() labels each line by majority vote over all stride-1
    windows containing it.
    """

    def __init__(
        self,
        window: int = 60,
        m: int = 59,
        label_len: int = 5,
        hidden_scale: tuple[int, int] = (4, 3),
        dropout: float = 0.4,
        learning_rate: float = 0.004,
        gamma: float = 2.0,
        max_epochs: int = 130,
        batch_size: int = 32,
        early_stop_patience: int = 8,
        lr_factor: float = 0.1,
        lr_patience: int = 4,
        train_stride: int = 1,
        val_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.window = window
        self.m = m
        self.label_len = label_len
        self.hidden_scale = hidden_scale
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.early_stop_patience = early_stop_patience
        self.lr_factor = lr_factor
        self.lr_patience = lr_patience
        self.train_stride = train_stride
        self.val_fraction = val_fraction
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            lr_factor=self.lr_factor,
            lr_patience=self.lr_patience,
            batch_size=self.batch_size,
            seed=self.seed,
            train_stride=self.train_stride,
            val_fraction=self.val_fraction,
        )

    def build_net(self, n_features: int) -> SequenceLabelNet:
        return SequenceLabelNet(
            n_features=n_features,
            m=self.m,
            label_len=self.label_len,
            hidden_scale=tuple(self.hidden_scale),
            dropout=self.dropout,
            seed=self.seed,
        )

    def fit(self, X, y, line_mask=None):
        X = check_feature_matrix(X)
        y = check_label_matrix(y, X.shape[0], self.label_len)
        if line_mask is not None:
            line_mask = check_line_mask(line_mask, X.shape[0])
        self.net_ = self.build_net(X.shape[1])
        self.train_result_ = train(self.net_, X, y, self.window, self._train_config(), line_mask)
        self.history_ = [r.as_dict() for r in self.train_result_.history]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        X = check_feature_matrix(X, getattr(self, "n_features_in_", None))
        tuples, _ = predict_lines(self.net_, X, WindowConfig(self.window))
        return tuples

    def predict_with_confidence(self, X):
        X = check_feature_matrix(X, getattr(self, "n_features_in_", None))
        return predict_lines(self.net_, X, WindowConfig(self.window))

    def score(self, X, y) -> float:
        """Fraction of lines whose full predicted tuple matches exactly."""
        pred = self.predict(X)
        y = check_label_matrix(y, pred.shape[0], self.label_len)
        return float((pred == y).all(axis=1).mean())

    def parameter_count(self) -> int:
        return self.net_.parameter_count()

    def save(self, path, registry_hash=None, manifest_hash=None, extra=None):
        meta = {"window": self.window, "gamma": self.gamma, "seed": self.seed}
        if registry_hash:
            meta["registry_hash"] = registry_hash
        if manifest_hash:
            meta["manifest_hash"] = manifest_hash
        meta.update(extra or {})
        self.net_.save(path, meta)

    @classmethod
    def from_checkpoint(cls, path, registry_hash=None, manifest_hash=None):
        net = SequenceLabelNet.load(path, registry_hash, manifest_hash)
        manifest = net.checkpoint_manifest
        est = cls(
            window=manifest.get("window", 60),
            m=net.m,
            label_len=net.label_len,
            hidden_scale=tuple(net.hidden_scale),
            dropout=net.dropout_rate,
            gamma=manifest.get("gamma", 2.0),
            seed=manifest.get("seed", 0),
        )
        est.net_ = net
        est.n_features_in_ = net.n_features
        return est
