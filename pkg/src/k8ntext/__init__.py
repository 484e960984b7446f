"""k8ntext: context reconstruction for Kubernetes audit logs.

Parses audit streams, labels every line with the action type that caused it
using a windowed recurrent model with majority voting, groups lines into
per-action contexts, and answers boolean queries over triggering events.
"""

__version__ = "0.1.0"

from .events import AuditEvent, EventStore, normalize_stream, parse_line
from .features import FeatureEncoder, FeatureManifest, Vocabulary
from .labels import (
    ActionRegistry,
    LabelTuple,
    build_registry,
    decode_tuple,
    derive_label,
    encode_tuple,
    from_one_hot,
    one_hot,
)
from .model import WindowConfig, WindowedSequenceLabeler, make_windows, predict_lines

__all__ = [
    "ActionRegistry",
    "AuditEvent",
    "EventStore",
    "FeatureEncoder",
    "FeatureManifest",
    "LabelTuple",
    "Vocabulary",
    "WindowConfig",
    "WindowedSequenceLabeler",
    "build_registry",
    "decode_tuple",
    "derive_label",
    "encode_tuple",
    "from_one_hot",
    "make_windows",
    "normalize_stream",
    "one_hot",
    "parse_line",
    "predict_lines",
]
