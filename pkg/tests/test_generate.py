import collections
import json

import numpy as np
import pytest

from k8ntext import labels
from k8ntext.events import read_lines
from k8ntext.generate import (
    GroundTruth,
    InvalidMix,
    InvalidParams,
    FileError,
    LabelMismatch,
    TruthRow,
    generate_corpus,
    generate_scenario,
    load_external,
    write_corpus,
)


def test_namespace_create_shape(registry):
    result = generate_scenario("namespace_create", {"name": "alpha"}, seed=1, registry=registry)
    assert len(result.records) >= 5
    contexts = {row.context_id for row in result.truth}
    assert len(contexts) == 1
    triggers = [row for row in result.truth if row.is_trigger]
    assert len(triggers) == 1
    trig_record = next(r for _, r in result.records if r["auditID"] == triggers[0].audit_id)
    assert trig_record["verb"] == "create"
    assert trig_record["objectRef"]["resource"] == "namespaces"


def test_deployment_owner_chain(registry):
    result = generate_scenario("deployment_create",
                               {"name": "web", "namespace": "prod", "replicas": 2,
                                "client_side_apply": False},
                               seed=3, registry=registry)
    pods = [r for _, r in result.records
            if r["objectRef"]["resource"] == "pods" and r["verb"] == "create"
            and not r["objectRef"].get("subresource")]
    assert len(pods) == 2
    rs = [r for _, r in result.records
          if r["objectRef"]["resource"] == "replicasets" and r["verb"] == "create"]
    assert len(rs) == 1
    rs_owner = rs[0]["responseObject"]["metadata"]["ownerReferences"][0]
    assert rs_owner["kind"] == "Deployment" and rs_owner["name"] == "web"
    for pod in pods:
        owner = pod["responseObject"]["metadata"]["ownerReferences"][0]
        assert owner["kind"] == "ReplicaSet"
        assert owner["name"] == rs[0]["objectRef"]["name"]


def test_heartbeat_count(registry):
    result = generate_scenario("heartbeat_noise", {"nodes": 3, "duration": 60}, seed=0,
                               registry=registry)
    assert len(result.records) == 18  # 3 nodes x 6 ten-second beats
    contexts = {row.context_id for row in result.truth}
    assert len(contexts) == 3  # one per lease object


def test_invalid_scenario_params(registry):
    with pytest.raises(InvalidParams):
        generate_scenario("deployment_create", {"replicas": 0}, registry=registry)
    with pytest.raises(InvalidParams):
        generate_scenario("no_such_kind", registry=registry)
    with pytest.raises(InvalidParams):
        generate_scenario("describe", {"resource": "mysteries"}, registry=registry)


def test_corpus_deterministic():
    a = generate_corpus("default", seed=42)
    b = generate_corpus("default", seed=42)
    assert a[2] == b[2]


def test_corpus_seed_changes_output():
    a = generate_corpus("default", seed=1)
    b = generate_corpus("default", seed=2)
    assert a[2] != b[2]


def test_interleaved_timespans_overlap():
    mix = [{"kind": "namespace_create", "count": 2}]
    store, truth, _ = generate_corpus(mix, interleave=True, seed=5, duration=4)
    spans = {}
    for event in store:
        cid = truth.context_of(event.audit_id)
        lo, hi = spans.get(cid, (event.stage_timestamp, event.stage_timestamp))
        spans[cid] = (min(lo, event.stage_timestamp), max(hi, event.stage_timestamp))
    (a0, a1), (b0, b1) = spans.values()
    assert a0 <= b1 and b0 <= a1  # overlapping timespans


def test_sequential_not_interleaved():
    mix = [{"kind": "namespace_create", "count": 2}]
    store, truth, _ = generate_corpus(mix, interleave=False, seed=5)
    spans = collections.defaultdict(list)
    for event in store:
        spans[truth.context_of(event.audit_id)].append(event.stage_timestamp)
    (first, second) = sorted((min(v), max(v)) for v in spans.values())
    assert first[1] < second[0]  # strictly one after the other


def test_long_tailed_class_histogram():
    store, truth, _ = generate_corpus("train", seed=1)
    counts = collections.Counter(
        row.label_int for row in truth.rows.values() if row.label_int is not None
    )
    assert len(counts) >= 40
    assert max(counts.values()) / min(counts.values()) >= 100
    assert 17000 <= len(store) <= 24000


def test_reparse_reproduces_events(small_corpus, registry, manifest):
    store, _, lines = small_corpus
    again = read_lines(lines, registry, manifest)
    assert len(again) == len(store)
    for a, b in zip(store, again):
        assert a.audit_id == b.audit_id
        assert a.record == b.record
        assert a.flat == b.flat


def test_trigger_labels_match_derive_label(small_corpus, registry):
    store, truth, _ = small_corpus
    for row in truth.rows.values():
        if not row.is_trigger:
            continue
        event = store.get(row.audit_id)
        derived = labels.derive_label(event, registry)
        assert labels.encode_tuple(derived) == row.label_int


def test_truth_is_partition_of_labeled_lines(small_corpus):
    store, truth, _ = small_corpus
    labeled = {a for a, row in truth.rows.items() if row.context_id is not None}
    union = set()
    for members in truth.context_sets().values():
        assert not (members & union)
        union |= members
    assert union == labeled
    # one trigger per context
    triggers = collections.Counter(
        row.context_id for row in truth.rows.values() if row.is_trigger
    )
    assert all(v == 1 for v in triggers.values())
    assert set(triggers) == set(truth.context_sets())


def test_crd_lines_are_passthrough_and_unlabeled():
    store, truth, _ = generate_corpus(
        [{"kind": "crd_noise", "count": 1, "params": {"count": 4}}], seed=0
    )
    assert len(store) == 4
    for event in store:
        assert event.passthrough
        assert truth.label_of(event.audit_id) is None
        assert truth.context_of(event.audit_id) is None


def test_invalid_mix():
    with pytest.raises(InvalidMix):
        generate_corpus([], seed=0)
    with pytest.raises(InvalidMix):
        generate_corpus([{"kind": "nope"}], seed=0)
    with pytest.raises(InvalidMix):
        generate_corpus("not-a-preset", seed=0)


# --- corpus files -----------------------------------------------------------------


def test_write_and_load_roundtrip(tmp_path, small_corpus, registry, manifest):
    store, truth, lines = small_corpus
    out = tmp_path / "corpus"
    write_corpus(out, store, truth, lines)
    loaded, loaded_truth, report = load_external(out, registry, manifest)
    assert len(loaded) == len(store)
    assert loaded_truth is not None
    assert len(loaded_truth) == len(truth)
    assert not report.errors


def test_load_without_sidecar(tmp_path, small_corpus, registry, manifest):
    _, _, lines = small_corpus
    path = tmp_path / "events.log"
    path.write_text("\n".join(lines) + "\n")
    store, truth, _ = load_external(path, registry, manifest)
    assert truth is None
    assert len(store) == len(lines)


def test_load_sidecar_with_stray_id(tmp_path, small_corpus, registry, manifest):
    store, truth, lines = small_corpus
    out = tmp_path / "corpus"
    write_corpus(out, store, truth, lines)
    stray = GroundTruth([TruthRow("no-such-id", 0, "ctx", True)])
    stray.write(out / "truth.jsonl")
    with pytest.raises(LabelMismatch) as err:
        load_external(out, registry, manifest)
    assert "no-such-id" in str(err.value)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileError):
        load_external(tmp_path / "nope.log")


def test_label_arrays_align_with_store(small_corpus):
    store, truth, _ = small_corpus
    y, mask = truth.label_arrays(store)
    assert y.shape == (len(store), 5)
    assert mask.shape == (len(store),)
    for i, event in enumerate(store.events):
        label_int = truth.label_of(event.audit_id)
        if label_int is None:
            assert mask[i] == 0
        else:
            assert mask[i] == 1
            assert labels.encode_tuple(labels.LabelTuple(*y[i])) == label_int
