"""Audit-webhook receiver: accept EventList POSTs and append the items to an
event store, never stalling the API server on partially bad batches.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import labels
from .events import EventStore, MalformedRecord, parse_line
from .features import FeatureManifest

AUDIT_PATH = "/audit"


class BadBody(ValueError):
    """Request body is not a decodable EventList document."""


def _parse_batch(body: bytes, registry, manifest) -> tuple[list, int]:
    """Decode an EventList body into parsed events plus a bad-item count."""
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadBody(f"cannot decode request body: {exc}") from None
    if not isinstance(doc, dict) or doc.get("kind") != "EventList":
        raise BadBody("request body is not an EventList")
    items = doc.get("items")
    if items is None:
        raise BadBody("EventList has no items array")
    if not isinstance(items, list):
        raise BadBody("EventList items is not an array")

    api_version = doc.get("apiVersion", "audit.k8s.io/v1")
    errors = 0
    events = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            errors += 1
            continue
        record = dict(item)
        record.setdefault("kind", "Event")
        record.setdefault("apiVersion", api_version)
        line = json.dumps(record, separators=(",", ":"), sort_keys=True)
        try:
            event = parse_line(line, registry, manifest, line_no=i + 1)
        except MalformedRecord:
            errors += 1
            continue
        if event is not None:
            events.append(event)
    return events, errors


def receive_webhook_batch(
    body: bytes,
    store: EventStore,
    registry: labels.ActionRegistry,
    manifest: FeatureManifest,
    lock: threading.Lock | None = None,
) -> tuple[int, int]:
    """Parse an EventList body and append its items; returns (accepted, errors).

    Malformed items are counted, not fatal; an undecodable body or a non
    EventList document raises BadBody. Appends are serialized by the lock.
    """
    events, errors = _parse_batch(body, registry, manifest)
    if lock is None:
        accepted = store.extend(events)
    else:
        with lock:
            accepted = store.extend(events)
    return accepted, errors


class AuditWebhookServer:
    """Minimal threaded HTTP server exposing POST /audit.

    Responds 200 {"accepted": N, "errors": M} on full or partial acceptance
    and 400 on an undecodable body. An optional on_accept callback sees each
    batch of newly appended events (used for streaming inference).
    """

    def __init__(
        self,
        store: EventStore,
        registry: labels.ActionRegistry,
        manifest: FeatureManifest,
        host: str = "127.0.0.1",
        port: int = 0,
        on_accept=None,
    ):
        self.store = store
        self.registry = registry
        self.manifest = manifest
        self.on_accept = on_accept
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                if self.path != AUDIT_PATH:
                    self._reply(404, {"error": f"no handler for {self.path}"})
                    return
                length = int(self.headers.get("content-length", 0))
                body = self.rfile.read(length)
                try:
                    events, errors = _parse_batch(body, outer.registry, outer.manifest)
                except BadBody as exc:
                    self._reply(400, {"error": str(exc)})
                    return
                with outer._lock:
                    added = [e for e in events if outer.store.append(e)]
                    if outer.on_accept is not None and added:
                        outer.on_accept(added)
                self._reply(200, {"accepted": len(added), "errors": errors})

            def _reply(self, code, payload):
                data = json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self.httpd.serve_forever()

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
