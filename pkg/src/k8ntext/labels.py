"""Action labels: the (r, s, v, n, u) tuple, its codecs, and the registry
mapping API resources/verbs to dense integer ids.

The label of a log line identifies the *type of action* whose cascade the
line belongs to: resource id, subresource id, verb id, and two booleans for
"object is namespaced" and "action targets a single object".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources as importlib_resources

import numpy as np

# Fixed radices of the integer encoding. Independent of any registry so that
# encoded labels stay stable when the catalog grows.
SUBRESOURCE_RADIX = 64
VERB_RADIX = 64

LABEL_LEN = 5

# Placeholder for "no subresource" in catalog files.
NO_SUBRESOURCE = "-"


class CatalogError(ValueError):
    """Raised for malformed or duplicated catalog rows."""


class UnknownAction(KeyError):
    """Raised when an event's resource/verb is not in the registry."""


class OutOfRange(ValueError):
    """Raised when a tuple component exceeds its codec or registry bound."""


@dataclass(frozen=True)
class LabelTuple:
    """Action identity (r, s, v, n, u); n and u are 0/1 flags."""

    r: int
    s: int
    v: int
    n: int
    u: int

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.r, self.s, self.v, self.n, self.u)

    def validate(self) -> "LabelTuple":
        if self.r < 0 or self.s < 0 or self.v < 0:
            raise OutOfRange(f"negative component in {self.as_tuple()}")
        if self.s >= SUBRESOURCE_RADIX:
            raise OutOfRange(f"subresource id {self.s} >= {SUBRESOURCE_RADIX}")
        if self.v >= VERB_RADIX:
            raise OutOfRange(f"verb id {self.v} >= {VERB_RADIX}")
        if self.n not in (0, 1) or self.u not in (0, 1):
            raise OutOfRange(f"n/u flags must be 0 or 1 in {self.as_tuple()}")
        return self


class ActionRegistry:
    """Dense-id registry for (group, version, resource, subresource) rows
    and verbs.

    Resource ids are assigned by ascending lexicographic order of the catalog
    rows, subresource ids likewise with the empty subresource pinned to 0,
    and verb ids follow catalog order. `m` is one past the largest id in any
    position; with the shipped default catalog m == 59.
    """

    def __init__(self, rows, verbs):
        rows = [tuple(r) for r in rows]
        if len(rows) != len(set(rows)):
            seen = set()
            for row in rows:
                if row in seen:
                    raise CatalogError(f"duplicate catalog row: {row!r}")
                seen.add(row)
        if len(verbs) != len(set(verbs)):
            raise CatalogError("duplicate verb in catalog")

        ordered = sorted(rows)
        resource_keys = []
        for group, version, resource, _sub in ordered:
            key = (group, version, resource)
            if key not in resource_keys:
                resource_keys.append(key)
        sub_names = sorted({sub for _, _, _, sub in ordered if sub != ""})

        self._resource_ids = {k: i for i, k in enumerate(resource_keys)}
        self._sub_ids = {"": 0}
        self._sub_ids.update({name: i + 1 for i, name in enumerate(sub_names)})
        self._verb_ids = {verb: i for i, verb in enumerate(verbs)}
        self._rows = {
            (g, v, r, s): (self._resource_ids[(g, v, r)], self._sub_ids[s])
            for g, v, r, s in ordered
        }
        self.m = 1 + max(
            max(self._resource_ids.values()),
            max(self._sub_ids.values()),
            max(self._verb_ids.values()),
            1,  # n and u occupy {0, 1}
        )

    def lookup(self, group: str, version: str, resource: str, subresource: str = "") -> tuple[int, int]:
        """Map an action target to (r, s); unknown rows raise UnknownAction."""
        group = group or "core"
        key = (group, version, resource, subresource or "")
        try:
            return self._rows[key]
        except KeyError:
            raise UnknownAction(f"no catalog row for {key!r}") from None

    def knows_resource(self, group: str, version: str, resource: str, subresource: str = "") -> bool:
        group = group or "core"
        return (group, version, resource, subresource or "") in self._rows

    def verb_id(self, verb: str) -> int:
        try:
            return self._verb_ids[verb]
        except KeyError:
            raise UnknownAction(f"unknown verb {verb!r}") from None

    @property
    def rows(self):
        return dict(self._rows)

    @property
    def verbs(self):
        return dict(self._verb_ids)

    def content_hash(self) -> str:
        """Stable digest of the registry contents, for checkpoint manifests."""
        h = hashlib.sha256()
        for key in sorted(self._rows):
            h.update(" ".join(key).encode() + b"\n")
        h.update(b"|verbs|")
        for verb, vid in sorted(self._verb_ids.items(), key=lambda kv: kv[1]):
            h.update(f"{verb}={vid}\n".encode())
        return h.hexdigest()


def parse_catalog(text: str) -> tuple[list[tuple[str, str, str, str]], list[str]]:
    """Parse catalog text into (resource rows, verb list)."""
    rows: list[tuple[str, str, str, str]] = []
    verbs: list[str] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[resources]":
            section = "resources"
            continue
        if line == "[verbs]":
            section = "verbs"
            continue
        if section == "resources":
            parts = line.split()
            if len(parts) != 4:
                raise CatalogError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            group, version, resource, sub = parts
            rows.append((group, version, resource, "" if sub == NO_SUBRESOURCE else sub))
        elif section == "verbs":
            verbs.append(line)
        else:
            raise CatalogError(f"line {lineno}: content before any section header")
    if not rows or not verbs:
        raise CatalogError("catalog needs a [resources] and a [verbs] section")
    return rows, verbs


def build_registry(path=None) -> ActionRegistry:
    """Build an ActionRegistry from a catalog file (default: shipped catalog)."""
    if path is None:
        text = importlib_resources.files("k8ntext.data").joinpath("default.catalog").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rows, verbs = parse_catalog(text)
    return ActionRegistry(rows, verbs)


def derive_label(event, registry: ActionRegistry) -> LabelTuple:
    """Label an event from its own fields.

    (r, s) come from the registry row of the object reference, v from the
    verb, n/u from the presence of a non-null namespace/name. Raises
    UnknownAction for resources or verbs outside the registry (the caller
    treats such events as passthrough).
    """
    ref = event.object_ref
    if ref is None:
        raise UnknownAction("event has no objectRef")
    r, s = registry.lookup(
        ref.get("apiGroup") or "core",
        ref.get("apiVersion") or "v1",
        ref.get("resource") or "",
        ref.get("subresource") or "",
    )
    v = registry.verb_id(event.verb)
    n = 1 if ref.get("namespace") else 0
    u = 1 if ref.get("name") else 0
    return LabelTuple(r, s, v, n, u)


def encode_tuple(t: LabelTuple) -> int:
    """Pack a tuple into one integer: (((r*64 + s)*64 + v)*2 + n)*2 + u."""
    t.validate()
    return (((t.r * SUBRESOURCE_RADIX + t.s) * VERB_RADIX + t.v) * 2 + t.n) * 2 + t.u


def decode_tuple(l: int) -> LabelTuple:
    """Invert encode_tuple exactly."""
    if l < 0:
        raise OutOfRange(f"encoded label must be >= 0, got {l}")
    l, u = divmod(l, 2)
    l, n = divmod(l, 2)
    l, v = divmod(l, VERB_RADIX)
    r, s = divmod(l, SUBRESOURCE_RADIX)
    return LabelTuple(r, s, v, n, u)


def one_hot(t: LabelTuple, registry: ActionRegistry) -> np.ndarray:
    """One-hot encode each tuple element into a (5, m) block."""
    t.validate()
    m = registry.m
    values = t.as_tuple()
    for i, value in enumerate(values):
        if value >= m:
            raise OutOfRange(f"component {i} value {value} >= m={m}")
    block = np.zeros((LABEL_LEN, m), dtype=np.float32)
    block[np.arange(LABEL_LEN), values] = 1.0
    return block


def from_one_hot(block: np.ndarray) -> LabelTuple:
    """Recover a tuple from a (5, m) block by per-row argmax."""
    if block.ndim != 2 or block.shape[0] != LABEL_LEN:
        raise OutOfRange(f"expected a ({LABEL_LEN}, m) block, got {block.shape}")
    r, s, v, n, u = (int(i) for i in block.argmax(axis=1))
    return LabelTuple(r, s, v, n, u)
