from datetime import timedelta

import pytest

from k8ntext import labels
from k8ntext.clustering import (
    distribute_uniform,
    group_by_label,
    kind_to_resource,
    predictions_from_truth,
    reconstruct,
    select_trigger,
    split_by_object_ref,
    _Cluster,
)
from k8ntext.evaluate import rand_agreement, trigger_accuracy
from k8ntext.generate import generate_corpus


def test_kind_to_resource():
    assert kind_to_resource("Deployment") == "deployments"
    assert kind_to_resource("ReplicaSet") == "replicasets"
    assert kind_to_resource("NetworkPolicy") == "networkpolicies"
    assert kind_to_resource("StorageClass") == "storageclasses"
    assert kind_to_resource("Endpoints") == "endpoints"


def _label_of(event, registry):
    return labels.derive_label(event, registry)


def test_group_by_label_partitions(make_event, registry):
    a1 = make_event(auditID="a1", verb="get")
    a2 = make_event(auditID="a2", verb="get")
    b = make_event(auditID="b", verb="delete")
    preds = {e.audit_id: _label_of(e, registry) for e in (a1, a2, b)}
    groups, passthrough = group_by_label([a1, a2, b], preds)
    assert len(groups) == 2
    assert passthrough == []
    sizes = sorted(len(v) for v in groups.values())
    assert sizes == [1, 2]


def test_group_by_label_excludes_passthrough(make_event, registry):
    crd = make_event(auditID="crd", objectRef={"resource": "mycrds", "apiGroup": "example.com",
                                               "apiVersion": "v1", "name": "c"})
    ok = make_event(auditID="ok")
    preds = {"ok": _label_of(ok, registry)}
    groups, passthrough = group_by_label([crd, ok], preds)
    assert [e.audit_id for e in passthrough] == ["crd"]
    assert sum(len(v) for v in groups.values()) == 1


def test_split_by_object_ref_namespaces(make_event):
    a = make_event(auditID="x1", objectRef={"resource": "namespaces", "apiVersion": "v1",
                                            "namespace": "alpha", "name": "alpha"})
    b = make_event(auditID="x2", objectRef={"resource": "namespaces", "apiVersion": "v1",
                                            "namespace": "beta", "name": "beta"})
    parts = split_by_object_ref([a, b])
    assert len(parts) == 2


def test_split_by_object_ref_temporal_gap(make_event):
    early = make_event(auditID="e1", stageTimestamp="2025-01-06T09:00:00.000000Z")
    late = make_event(auditID="e2", stageTimestamp="2025-01-06T09:01:00.000000Z")
    assert len(split_by_object_ref([early, late], quiet_gap_s=30)) == 2
    assert len(split_by_object_ref([early, late], quiet_gap_s=120)) == 1


def test_split_singleton(make_event):
    assert len(split_by_object_ref([make_event()])) == 1


# --- uniform distribution ---------------------------------------------------------


def _cluster_at(make_event, ts, audit_id):
    event = make_event(auditID=audit_id, stageTimestamp=ts)
    cluster = _Cluster(anchored=True)
    cluster.absorb([event])
    cluster.trigger_time = event.stage_timestamp
    return cluster


def test_distribute_round_robin(make_event):
    c0 = _cluster_at(make_event, "2025-01-06T09:00:00.000000Z", "t0")
    c1 = _cluster_at(make_event, "2025-01-06T09:00:01.000000Z", "t1")
    events = [make_event(auditID=f"e{i}", stageTimestamp=f"2025-01-06T09:00:0{2+i}.000000Z")
              for i in range(4)]
    even = distribute_uniform(events, [c0, c1])
    assert even
    ids0 = {e.audit_id for e in c0.events}
    ids1 = {e.audit_id for e in c1.events}
    assert {"e0", "e2"} <= ids0
    assert {"e1", "e3"} <= ids1


def test_distribute_single_context_takes_all(make_event):
    c0 = _cluster_at(make_event, "2025-01-06T09:00:00.000000Z", "t0")
    events = [make_event(auditID=f"e{i}") for i in range(3)]
    assert distribute_uniform(events, [c0])
    assert len(c0.events) == 4


def test_distribute_remainder_flags_low_confidence(make_event):
    c0 = _cluster_at(make_event, "2025-01-06T09:00:00.000000Z", "t0")
    c1 = _cluster_at(make_event, "2025-01-06T09:00:10.000000Z", "t1")
    events = [make_event(auditID=f"e{i}", stageTimestamp=f"2025-01-06T09:00:0{i+1}.000000Z")
              for i in range(3)]
    even = distribute_uniform(events, [c0, c1])
    assert not even
    assert c0.flagged and c1.flagged
    assert len(c0.events) + len(c1.events) == 5


# --- trigger selection ---------------------------------------------------------


def test_select_trigger_prefers_user_over_controller(make_event, registry):
    trigger = make_event(auditID="user-line", stageTimestamp="2025-01-06T09:00:01.000000Z")
    system = make_event(auditID="sys-line", stageTimestamp="2025-01-06T09:00:00.500000Z",
                        user={"username": "system:kube-controller-manager", "groups": []})
    label = _label_of(trigger, registry)
    chosen, flagged = select_trigger([system, trigger], label, registry)
    assert chosen == "user-line"
    assert not flagged


def test_select_trigger_label_match_beats_position(make_event, registry):
    # client-side apply: a pre-fetch get lands before the actual create
    prefetch = make_event(auditID="prefetch", verb="get",
                          stageTimestamp="2025-01-06T09:00:00.000000Z")
    create = make_event(auditID="create", verb="create",
                        stageTimestamp="2025-01-06T09:00:00.300000Z")
    label = _label_of(create, registry)
    chosen, flagged = select_trigger([prefetch, create], label, registry)
    assert chosen == "create"


def test_select_trigger_singleton(make_event, registry):
    event = make_event(auditID="only")
    chosen, flagged = select_trigger([event], _label_of(event, registry), registry)
    assert chosen == "only"
    assert not flagged


def test_select_trigger_falls_back_to_earliest(make_event, registry):
    # nothing in the context matches the label: earliest member, flagged
    event = make_event(auditID="odd", verb="watch")
    label = labels.LabelTuple(0, 0, 0, 0, 0)
    chosen, flagged = select_trigger([event], label, registry)
    assert chosen == "odd"
    assert flagged


# --- full reconstruction -----------------------------------------------------------


def test_reconstruct_is_partition(small_corpus, registry):
    store, truth, _ = small_corpus
    contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    non_passthrough = {e.audit_id for e in store if not e.passthrough}
    seen = set()
    for ctx in contexts:
        assert ctx.trigger in ctx.members
        assert ctx.t0 <= ctx.t1
        assert not (ctx.members & seen)
        seen |= ctx.members
    assert seen == non_passthrough


def test_reconstruct_timespans_match_members(small_corpus, registry):
    store, truth, _ = small_corpus
    contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    for ctx in contexts:
        times = [store.get(a).stage_timestamp for a in ctx.members]
        assert ctx.t0 == min(times)
        assert ctx.t1 == max(times)


def test_reconstruct_owner_chain_two_hops(registry):
    # deployment -> replicaset -> pod via ownerReferences
    store, truth, _ = generate_corpus(
        [{"kind": "deployment_create", "count": 1, "params": {"replicas": 2}}],
        seed=9, duration=10,
    )
    contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    assert len(contexts) == 1
    pods = [a for a in contexts[0].members
            if (store.get(a).object_ref or {}).get("resource") == "pods"]
    assert pods  # pods joined through the two-hop chain


def test_reconstruct_interleaved_namespace_creations(registry):
    store, truth, _ = generate_corpus(
        [{"kind": "namespace_create", "count": 2,
          "params": {}}],
        seed=2, duration=6,
    )
    contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    truth_sets = truth.context_sets()
    if len(truth_sets) == 2:  # pooled names can collide; then contexts merge
        names = {tuple(sorted(m)) for m in truth_sets.values()}
        got = {tuple(sorted(c.members)) for c in contexts}
        if len({store.get(next(iter(m))).object_ref.get("name") for m in truth_sets.values()}) == 2:
            assert got == names


def test_reconstruct_heartbeats_one_context_per_lease(registry):
    store, truth, _ = generate_corpus(
        [{"kind": "heartbeat_noise", "count": 1, "params": {"nodes": 3, "duration": 60}}],
        seed=4,
    )
    contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    assert len(contexts) == 3
    for ctx in contexts:
        assert len(ctx.members) == 6


def test_reconstruct_empty_store(registry):
    from k8ntext.events import normalize_stream

    contexts, warnings = reconstruct(normalize_stream([]), {}, registry)
    assert contexts == []


def test_reconstruct_agreement_on_interleaved_mix(registry):
    mix = [
        {"kind": "namespace_create", "count": 1, "params": {"name": "alpha"}},
        {"kind": "deployment_create", "count": 1, "params": {"name": "web", "namespace": "prod"}},
        {"kind": "describe", "count": 1, "params": {"resource": "deployments", "name": "web",
                                                    "namespace": "prod"}},
        {"kind": "sa_token_noise", "count": 1},
        {"kind": "namespace_delete", "count": 1, "params": {"name": "beta"}},
    ]
    scores = []
    trig = []
    for seed in range(6):
        store, truth, _ = generate_corpus(mix, seed=seed, duration=30)
        contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
        scores.append(rand_agreement(truth.context_sets(), contexts))
        trig.append(trigger_accuracy(truth, contexts))
    assert sum(scores) / len(scores) >= 0.95
    assert sum(trig) / len(trig) >= 0.95
