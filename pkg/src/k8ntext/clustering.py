"""Context reconstruction: partition labeled lines into concrete contexts.

Within each predicted-label group, lines on the same object seed candidate
contexts, cascade lines attach through ownerReferences/claimRef/
involvedObject chains (and namespace containment for namespace-rooted
contexts), leftover lines are divided uniformly by occurrence, and finally
each context gets its triggering event selected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Optional

from . import labels
from .events import AuditEvent, EventStore

DEFAULT_QUIET_GAP_S = 30.0

# Kind names as they appear in ownerReferences/involvedObject, mapped to the
# resource names used in objectRef.
_IRREGULAR_KINDS = {
    "Endpoints": "endpoints",
    "NetworkPolicy": "networkpolicies",
}


def kind_to_resource(kind: str) -> str:
    if kind in _IRREGULAR_KINDS:
        return _IRREGULAR_KINDS[kind]
    low = kind.lower()
    if low.endswith("y"):
        return low[:-1] + "ies"
    if low.endswith(("s", "x", "ch", "sh")):
        return low + "es"
    return low + "s"


@dataclass
class Context:
    """A triggering event plus everything it caused."""

    context_id: str
    label: labels.LabelTuple
    trigger: str
    members: set[str]
    t0: datetime
    t1: datetime
    flagged: bool = False

    def __len__(self):
        return len(self.members)


@dataclass
class _Cluster:
    """Work-in-progress context inside one label group."""

    events: list[AuditEvent] = field(default_factory=list)
    anchored: bool = False
    trigger_time: Optional[datetime] = None
    trigger_ns: Optional[str] = None
    flagged: bool = False
    # Identity chain: uids and (resource, namespace, name) keys of every
    # object this context has touched, grown transitively.
    uids: set[str] = field(default_factory=set)
    keys: set[tuple] = field(default_factory=set)
    root_namespace: Optional[str] = None

    def absorb(self, events: Iterable[AuditEvent]):
        for event in events:
            self.events.append(event)
            for uid, key in _object_identities(event):
                if uid:
                    self.uids.add(uid)
                if key:
                    self.keys.add(key)


def _ref_identity(ref: dict) -> tuple:
    return (ref.get("resource") or "", ref.get("namespace") or "", ref.get("name") or "")


def _object_identities(event: AuditEvent):
    """(uid, key) pairs for the object the event acted on."""
    out = []
    ref = event.object_ref
    if ref and ref.get("name"):
        out.append((None, _ref_identity(ref)))
    for body in (event.record.get("responseObject"), event.record.get("requestObject")):
        if not isinstance(body, dict):
            continue
        meta = body.get("metadata")
        if not isinstance(meta, dict):
            continue
        uid = meta.get("uid")
        key = None
        if body.get("kind") and meta.get("name"):
            key = (
                kind_to_resource(body["kind"]),
                meta.get("namespace") or "",
                meta["name"],
            )
        out.append((uid, key))
    return out


def _linking_refs(event: AuditEvent):
    """(uid, key) pairs of *other* objects this event points at:
    ownerReferences, involvedObject, claimRef."""
    out = []
    ns_hint = ""
    if event.object_ref:
        ns_hint = event.object_ref.get("namespace") or ""
    for body in (event.record.get("responseObject"), event.record.get("requestObject")):
        if not isinstance(body, dict):
            continue
        meta = body.get("metadata")
        ns = ns_hint
        if isinstance(meta, dict):
            ns = meta.get("namespace") or ns_hint
            for owner in meta.get("ownerReferences") or []:
                if not isinstance(owner, dict):
                    continue
                key = None
                if owner.get("kind") and owner.get("name"):
                    key = (kind_to_resource(owner["kind"]), ns, owner["name"])
                out.append((owner.get("uid"), key))
        for field_name in ("involvedObject", "claimRef"):
            target = body.get(field_name)
            if isinstance(target, dict) and target.get("kind") and target.get("name"):
                key = (
                    kind_to_resource(target["kind"]),
                    target.get("namespace") or ns,
                    target["name"],
                )
                out.append((target.get("uid"), key))
    return out


def group_by_label(
    events: Iterable[AuditEvent],
    predictions: dict[str, labels.LabelTuple],
):
    """Partition events by predicted tuple, store order preserved.

    Returns (groups keyed by encoded label, passthrough list). Passthrough
    events never get a context.
    """
    groups: dict[int, list[AuditEvent]] = {}
    passthrough: list[AuditEvent] = []
    for event in events:
        if event.passthrough:
            passthrough.append(event)
            continue
        label = predictions.get(event.audit_id)
        if label is None:
            raise KeyError(f"no prediction for event {event.audit_id!r}")
        groups.setdefault(labels.encode_tuple(label), []).append(event)
    return groups, passthrough


def split_by_object_ref(
    group: list[AuditEvent],
    quiet_gap_s: float = DEFAULT_QUIET_GAP_S,
) -> list[list[AuditEvent]]:
    """Sub-partition a label group by the (namespace, name) of objectRef,
    starting a fresh candidate when the same object goes quiet for longer
    than the gap."""
    by_key: dict[tuple, list[AuditEvent]] = {}
    for event in group:
        ref = event.object_ref or {}
        key = (ref.get("namespace"), ref.get("name"))
        by_key.setdefault(key, []).append(event)

    gap = timedelta(seconds=quiet_gap_s)
    candidates = []
    for key, events in by_key.items():
        events.sort(key=lambda e: e.sort_key)
        current = [events[0]]
        for prev, event in zip(events, events[1:]):
            if event.stage_timestamp - prev.stage_timestamp > gap:
                candidates.append(current)
                current = []
            current.append(event)
        candidates.append(current)
    return candidates


def _self_label(event: AuditEvent, registry: labels.ActionRegistry) -> Optional[labels.LabelTuple]:
    try:
        return labels.derive_label(event, registry)
    except labels.UnknownAction:
        return None


def link_by_owner_refs(clusters: list[_Cluster], warnings: list[str]) -> list[_Cluster]:
    """Attach satellite clusters to anchored ones through object chains.

    A satellite joins a context when any of its events names (by uid or by
    resource/namespace/name) an object already in that context's chain, or
    lives inside the namespace a namespace-rooted context is about. Chains
    grow transitively; ambiguous matches go to the context with the nearest
    preceding trigger and are counted.
    """
    anchored = [c for c in clusters if c.anchored]
    satellites = [c for c in clusters if not c.anchored]
    if not anchored:
        return clusters

    changed = True
    while changed and satellites:
        changed = False
        remaining = []
        for sat in satellites:
            matches = []
            for ctx in anchored:
                hit = False
                for event in sat.events:
                    for uid, key in _linking_refs(event) + _object_identities(event):
                        if uid and uid in ctx.uids:
                            hit = True
                            break
                        if key and key in ctx.keys:
                            hit = True
                            break
                    if not hit and ctx.root_namespace:
                        ref = event.object_ref or {}
                        if ref.get("namespace") == ctx.root_namespace:
                            hit = True
                    if hit:
                        break
                if hit:
                    matches.append(ctx)
            if not matches:
                remaining.append(sat)
                continue
            target = matches[0]
            if len(matches) > 1:
                at = min(e.stage_timestamp for e in sat.events)
                preceding = [c for c in matches if c.trigger_time and c.trigger_time <= at]
                pool = preceding or matches
                target = min(
                    pool,
                    key=lambda c: abs((c.trigger_time - at).total_seconds())
                    if c.trigger_time
                    else float("inf"),
                )
                warnings.append(
                    f"ambiguous owner: {len(matches)} contexts claim "
                    f"{sat.events[0].audit_id}; kept nearest preceding trigger"
                )
            target.absorb(sat.events)
            changed = True
        satellites = remaining
    return anchored + satellites


def distribute_uniform(
    events: list[AuditEvent],
    contexts: list[_Cluster],
) -> bool:
    """Divide leftover events among contexts by occurrence order.

    Events are sorted by timestamp and dealt round-robin; when the count is
    not a multiple of the context count, the evenly dividing prefix is dealt
    and the remainder goes to the nearest-in-time context, flagging the
    contexts as low confidence. Returns True when the split was even.
    """
    if not events or not contexts:
        return True
    events = sorted(events, key=lambda e: e.sort_key)
    contexts = sorted(contexts, key=lambda c: c.trigger_time or c.events[0].stage_timestamp)
    k = len(contexts)
    even = len(events) - len(events) % k
    for i, event in enumerate(events[:even]):
        contexts[i % k].absorb([event])
    remainder = events[even:]
    if remainder:
        for event in remainder:
            target = min(
                contexts,
                key=lambda c: abs(
                    ((c.trigger_time or c.events[0].stage_timestamp) - event.stage_timestamp).total_seconds()
                ),
            )
            target.absorb([event])
        for ctx in contexts:
            ctx.flagged = True
    return not remainder


def select_trigger(
    events: list[AuditEvent],
    label: labels.LabelTuple,
    registry: labels.ActionRegistry,
) -> tuple[str, bool]:
    """Pick the triggering event: earliest member whose own action matches
    the context label and whose user is not a control-plane principal; the
    user test is dropped if nothing qualifies, and the earliest member is a
    flagged last resort."""
    ordered = sorted(events, key=lambda e: e.sort_key)
    matching = [e for e in ordered if _self_label(e, registry) == label]
    for event in matching:
        if not event.is_control_plane():
            return event.audit_id, False
    if matching:
        return matching[0].audit_id, False
    return ordered[0].audit_id, True


def _reconstruct_group(
    label_int: int,
    group: list[AuditEvent],
    registry: labels.ActionRegistry,
    quiet_gap_s: float,
    warnings: list[str],
) -> list[_Cluster]:
    label = labels.decode_tuple(label_int)

    if label.u == 1:
        raw_candidates = split_by_object_ref(group, quiet_gap_s)
    else:
        # No object identity to split on: every line that is itself an
        # action of this type seeds a context, the rest is cascade.
        raw_candidates = []
        pool = []
        for event in group:
            if _self_label(event, registry) == label:
                raw_candidates.append([event])
            else:
                pool.append(event)
        if pool:
            raw_candidates.append(pool)

    clusters = []
    for events in raw_candidates:
        cluster = _Cluster()
        cluster.absorb(events)
        self_labeled = [e for e in events if _self_label(e, registry) == label]
        if self_labeled:
            cluster.anchored = True
            cluster.trigger_time = min(e.stage_timestamp for e in self_labeled)
            first = min(self_labeled, key=lambda e: e.sort_key)
            ref = first.object_ref or {}
            cluster.trigger_ns = ref.get("namespace")
            if ref.get("resource") == "namespaces" and ref.get("name"):
                cluster.root_namespace = ref["name"]
        clusters.append(cluster)

    clusters = link_by_owner_refs(clusters, warnings)
    anchored = [c for c in clusters if c.anchored]
    leftovers = [c for c in clusters if not c.anchored]

    if not anchored:
        # Nothing trigger-capable predicted into this group: keep the lines
        # in one flagged residual context rather than dropping them.
        residual = _Cluster(flagged=True)
        for cluster in leftovers:
            residual.absorb(cluster.events)
        return [residual]

    # Divide the rest by occurrence, independently per action signature so
    # "the first get goes to the first context, the second to the second".
    # Contexts in another namespace than the leftover lines never compete.
    by_signature: dict[tuple, list[AuditEvent]] = {}
    for cluster in leftovers:
        for event in cluster.events:
            ref = event.object_ref or {}
            sig = (event.verb, ref.get("resource"), ref.get("subresource"), ref.get("namespace"))
            by_signature.setdefault(sig, []).append(event)
    for sig, events in sorted(by_signature.items(), key=lambda kv: str(kv[0])):
        ns = sig[3]
        pool = [c for c in anchored if c.trigger_ns == ns] or anchored
        distribute_uniform(events, pool)
    return anchored


def reconstruct(
    store: EventStore,
    predictions: dict[str, labels.LabelTuple],
    registry: labels.ActionRegistry | None = None,
    quiet_gap_s: float = DEFAULT_QUIET_GAP_S,
) -> tuple[list[Context], list[str]]:
    """Group every non-passthrough event into exactly one context.

    predictions maps audit_id to the (model or ground-truth) label tuple.
    Returns the contexts sorted by (t0, context_id) plus warning strings.
    """
    registry = registry or labels.build_registry()
    warnings: list[str] = []
    groups, _passthrough = group_by_label(store, predictions)

    clusters: list[tuple[int, _Cluster]] = []
    for label_int, group in groups.items():
        for cluster in _reconstruct_group(label_int, group, registry, quiet_gap_s, warnings):
            if cluster.events:
                clusters.append((label_int, cluster))

    built = []
    for label_int, cluster in clusters:
        label = labels.decode_tuple(label_int)
        trigger, flagged = select_trigger(cluster.events, label, registry)
        times = [e.stage_timestamp for e in cluster.events]
        built.append(
            Context(
                context_id="",
                label=label,
                trigger=trigger,
                members={e.audit_id for e in cluster.events},
                t0=min(times),
                t1=max(times),
                flagged=flagged or cluster.flagged,
            )
        )
    built.sort(key=lambda c: (c.t0, c.trigger))
    for i, ctx in enumerate(built, start=1):
        ctx.context_id = f"ctx-{i:05d}"
    return built, warnings


def predictions_from_truth(store: EventStore, truth) -> dict[str, labels.LabelTuple]:
    """Ground-truth labels in the prediction format reconstruct() expects."""
    out = {}
    for event in store:
        label_int = truth.label_of(event.audit_id)
        if label_int is not None:
            out[event.audit_id] = labels.decode_tuple(label_int)
    return out


def predictions_from_arrays(store: EventStore, tuples) -> dict[str, labels.LabelTuple]:
    """Per-line (N, 5) predicted tuples (store order) as a prediction map."""
    events = store.events
    out = {}
    for event, row in zip(events, tuples):
        if not event.passthrough:
            out[event.audit_id] = labels.LabelTuple(*(int(v) for v in row))
    return out
