import json

import pytest

from k8ntext import labels
from k8ntext.events import parse_line, read_lines
from k8ntext.features import FeatureManifest


@pytest.fixture(scope="session")
def registry():
    return labels.build_registry()


@pytest.fixture(scope="session")
def manifest():
    return FeatureManifest.default()


def make_record(**overrides):
    """A minimal well-formed audit record; override any top-level key."""
    record = {
        "kind": "Event",
        "apiVersion": "audit.k8s.io/v1",
        "level": "RequestResponse",
        "auditID": "aid-001",
        "stage": "ResponseComplete",
        "requestURI": "/api/v1/namespaces",
        "verb": "create",
        "user": {"username": "alice", "groups": ["system:authenticated", "developers"]},
        "userAgent": "kubectl/v1.30.2 (linux/amd64) kubernetes/5ae2d9e",
        "objectRef": {"resource": "namespaces", "apiVersion": "v1",
                      "namespace": "alpha", "name": "alpha"},
        "responseStatus": {"metadata": {}, "code": 201, "status": "Success"},
        "stageTimestamp": "2025-01-06T09:00:00.000000Z",
        "requestReceivedTimestamp": "2025-01-06T08:59:59.975000Z",
    }
    record.update(overrides)
    return record


def record_line(**overrides) -> str:
    return json.dumps(make_record(**overrides), sort_keys=True)


@pytest.fixture
def make_event(registry, manifest):
    def _make(line_no=1, **overrides):
        return parse_line(record_line(**overrides), registry, manifest, line_no)

    return _make


@pytest.fixture(scope="session")
def small_corpus(registry, manifest):
    """A deterministic interleaved corpus with ground truth."""
    from k8ntext.generate import generate_corpus

    store, truth, lines = generate_corpus("contexts", seed=11, registry=registry, manifest=manifest)
    return store, truth, lines


def parse_corpus(lines, registry, manifest):
    return read_lines(lines, registry, manifest)
