"""Audit event ingestion: parse newline-delimited audit records, keep them in
a canonically ordered store, and export them in raw/stripped/compact form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional

from . import labels
from .features import FeatureManifest, fill_manifest_nulls, flatten

AUDIT_API_GROUP = "audit.k8s.io"
RETAINED_STAGE = "ResponseComplete"
CONTROL_PLANE_PREFIX = "system:"


class MalformedRecord(ValueError):
    """A line that looks like an audit record but cannot be used."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class MissingContexts(ValueError):
    """Export format requires contexts but none were supplied."""


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp to an aware UTC datetime."""
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no timezone")
    return dt.astimezone(timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    """Microsecond-precision UTC timestamp with a Z suffix."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass
class AuditEvent:
    """One parsed, flattened audit-log line."""

    audit_id: str
    stage_timestamp: datetime
    verb: str
    user_username: str
    user_groups: list[str]
    user_agent_raw: str
    object_ref: Optional[dict]
    response_status_code: Optional[int]
    record: dict
    flat: dict[str, str]
    passthrough: bool = False
    source_line_no: int = 0

    @property
    def sort_key(self):
        return (self.stage_timestamp, self.audit_id)

    def is_control_plane(self) -> bool:
        return self.user_username.startswith(CONTROL_PLANE_PREFIX)

    def serialize(self) -> str:
        """The canonical JSON line for this event (the original record)."""
        return json.dumps(self.record, separators=(",", ":"), sort_keys=True)


def parse_line(
    raw: str,
    registry: labels.ActionRegistry,
    manifest: FeatureManifest,
    line_no: int = 0,
) -> Optional[AuditEvent]:
    """Parse one input line.

    Returns an AuditEvent for usable audit records, None for lines to skip
    (comments, non-audit JSON, non-final stages), and raises MalformedRecord
    for records that are structurally broken. Resources or verbs the registry
    does not know are tagged passthrough so they still flow through the
    pipeline without getting a context.
    """
    stripped = raw.strip()
    if not stripped:
        return None
    try:
        record = json.loads(stripped)
    except json.JSONDecodeError:
        if stripped.startswith("{"):
            raise MalformedRecord("undecodable JSON record", line_no) from None
        return None
    if not isinstance(record, dict):
        return None
    if record.get("kind") != "Event":
        return None
    api_version = record.get("apiVersion", "")
    if not api_version.startswith(AUDIT_API_GROUP + "/"):
        return None
    stage = record.get("stage")
    if stage is not None and stage != RETAINED_STAGE:
        return None

    audit_id = record.get("auditID")
    if not audit_id or not isinstance(audit_id, str):
        raise MalformedRecord("missing auditID", line_no)
    ts_raw = record.get("stageTimestamp") or record.get("requestReceivedTimestamp")
    if not ts_raw:
        raise MalformedRecord("missing stageTimestamp", line_no)
    try:
        ts = parse_rfc3339(ts_raw)
    except ValueError as exc:
        raise MalformedRecord(f"bad stageTimestamp: {exc}", line_no) from None
    verb = record.get("verb")
    if not verb:
        raise MalformedRecord("missing verb", line_no)

    user = record.get("user") or {}
    object_ref = record.get("objectRef")
    status = record.get("responseStatus") or {}
    code = status.get("code")

    flat = fill_manifest_nulls(flatten(record), manifest)

    passthrough = True
    if object_ref and object_ref.get("resource"):
        known = registry.knows_resource(
            object_ref.get("apiGroup") or "core",
            object_ref.get("apiVersion") or "v1",
            object_ref.get("resource") or "",
            object_ref.get("subresource") or "",
        )
        passthrough = not (known and verb in registry.verbs)

    return AuditEvent(
        audit_id=audit_id,
        stage_timestamp=ts,
        verb=verb,
        user_username=user.get("username", ""),
        user_groups=list(user.get("groups", [])),
        user_agent_raw=record.get("userAgent", ""),
        object_ref=object_ref,
        response_status_code=code,
        record=record,
        flat=flat,
        passthrough=passthrough,
        source_line_no=line_no,
    )


class EventStore:
    """Append-only event collection iterated in (stage_timestamp, audit_id)
    order; duplicate audit ids are rejected and counted."""

    def __init__(self):
        self._events: list[AuditEvent] = []
        self._by_id: dict[str, AuditEvent] = {}
        self._sorted = True
        self.dup_count = 0

    def append(self, event: AuditEvent) -> bool:
        if event.audit_id in self._by_id:
            self.dup_count += 1
            return False
        self._by_id[event.audit_id] = event
        if self._events and event.sort_key < self._events[-1].sort_key:
            self._sorted = False
        self._events.append(event)
        return True

    def extend(self, events: Iterable[AuditEvent]) -> int:
        return sum(1 for e in events if self.append(e))

    def _ensure_sorted(self):
        if not self._sorted:
            self._events.sort(key=lambda e: e.sort_key)
            self._sorted = True

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[AuditEvent]:
        self._ensure_sorted()
        return iter(self._events)

    def __contains__(self, audit_id: str) -> bool:
        return audit_id in self._by_id

    def get(self, audit_id: str) -> Optional[AuditEvent]:
        return self._by_id.get(audit_id)

    @property
    def events(self) -> list[AuditEvent]:
        self._ensure_sorted()
        return list(self._events)


def normalize_stream(events: Iterable[AuditEvent]) -> EventStore:
    """Collect events into a store; ordering and dedup happen in the store."""
    store = EventStore()
    store.extend(events)
    return store


@dataclass
class ParseReport:
    parsed: int = 0
    skipped: int = 0
    errors: list[str] = field(default_factory=list)


def read_lines(
    lines: Iterable[str],
    registry: labels.ActionRegistry,
    manifest: FeatureManifest,
    report: Optional[ParseReport] = None,
) -> EventStore:
    """Parse a line iterable into a normalized store, tallying skips/errors."""
    report = report if report is not None else ParseReport()
    store = EventStore()
    for line_no, raw in enumerate(lines, start=1):
        try:
            event = parse_line(raw, registry, manifest, line_no)
        except MalformedRecord as exc:
            report.errors.append(str(exc))
            continue
        if event is None:
            report.skipped += 1
            continue
        report.parsed += 1
        store.append(event)
    return store


def read_file(path, registry, manifest, report=None) -> EventStore:
    with open(path, encoding="utf-8") as fh:
        return read_lines(fh, registry, manifest, report)


def _trigger_summary(context, store: EventStore) -> dict:
    event = store.get(context.trigger)
    ref = event.object_ref or {}
    return {
        "user": event.user_username,
        "verb": event.verb,
        "resource": ref.get("resource"),
        "namespace": ref.get("namespace"),
        "name": ref.get("name"),
        "timestamp": format_rfc3339(event.stage_timestamp),
    }


def export(store: EventStore, contexts=None, fmt: str = "raw") -> Iterator[bytes]:
    """Serialize the store as newline-delimited records.

    raw: every record, annotated with contextID/label when contexts are given.
    stripped: raw minus control-plane ("system:") lines, except each
    context's triggering event.
    compact: one record per context with a trigger summary and member ids.
    """
    if fmt not in ("raw", "stripped", "compact"):
        raise ValueError(f"unknown export format {fmt!r}")
    if fmt in ("stripped", "compact") and contexts is None:
        raise MissingContexts(f"export format {fmt!r} requires contexts")

    membership: dict[str, object] = {}
    triggers: set[str] = set()
    if contexts is not None:
        for ctx in contexts:
            triggers.add(ctx.trigger)
            for audit_id in ctx.members:
                membership[audit_id] = ctx

    if fmt == "compact":
        for ctx in contexts:
            row = {
                "contextID": ctx.context_id,
                "label": labels.encode_tuple(ctx.label),
                "labelTuple": list(ctx.label.as_tuple()),
                "trigger": _trigger_summary(ctx, store),
                "memberCount": len(ctx.members),
                "members": sorted(ctx.members),
                "t0": format_rfc3339(ctx.t0),
                "t1": format_rfc3339(ctx.t1),
            }
            yield json.dumps(row, separators=(",", ":")).encode() + b"\n"
        return

    for event in store:
        if fmt == "stripped" and event.is_control_plane() and event.audit_id not in triggers:
            continue
        record = dict(event.record)
        if contexts is not None:
            ctx = membership.get(event.audit_id)
            record["contextID"] = ctx.context_id if ctx else None
            record["label"] = labels.encode_tuple(ctx.label) if ctx else None
        yield json.dumps(record, separators=(",", ":"), sort_keys=True).encode() + b"\n"


def export_to(fh, store: EventStore, contexts=None, fmt: str = "raw") -> int:
    """Write an export to a binary file object; returns the record count."""
    count = 0
    for chunk in export(store, contexts, fmt):
        fh.write(chunk)
        count += 1
    return count
