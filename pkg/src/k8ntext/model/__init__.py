from .estimator import WindowedSequenceLabeler
from .layers import ShapeMismatch
from .network import CheckpointError, SequenceLabelNet, focal_loss_and_grad, one_hot_targets
from .training import Adam, DivergedLoss, EmptyTrainingSet, TrainConfig, TrainResult, train
from .windows import (
    StreamingVoter,
    WindowBatch,
    WindowConfig,
    covering_windows,
    majority_vote,
    make_windows,
    predict_lines,
    window_starts,
)

__all__ = [
    "Adam",
    "CheckpointError",
    "DivergedLoss",
    "EmptyTrainingSet",
    "SequenceLabelNet",
    "ShapeMismatch",
    "StreamingVoter",
    "TrainConfig",
    "TrainResult",
    "WindowBatch",
    "WindowConfig",
    "WindowedSequenceLabeler",
    "covering_windows",
    "focal_loss_and_grad",
    "majority_vote",
    "make_windows",
    "one_hot_targets",
    "predict_lines",
    "train",
    "window_starts",
]
