"""Synthetic audit-log corpora with per-line ground truth.

Each scenario renders the log lines a real cluster would emit for one action
(the user's triggering call plus the controller/kubelet cascade), stamps them
with jittered timestamps so in-context order is nondeterministic, and records
the ground-truth label, context id, and trigger mark for every line.
Corpora are deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from . import labels
from .events import EventStore, ParseReport, read_lines
from .features import FeatureManifest

DEFAULT_BASE_TIME = datetime(2025, 1, 6, 9, 0, 0, tzinfo=timezone.utc)

KUBE_VERSION = "v1.30.2"
_UA_SUFFIX = f"{KUBE_VERSION} (linux/amd64) kubernetes/5ae2d9e"
UA_KUBECTL = f"kubectl/{_UA_SUFFIX}"
UA_KUBELET = f"kubelet/{_UA_SUFFIX}"
UA_SCHEDULER = f"kube-scheduler/{_UA_SUFFIX}"


def ua_controller(name: str) -> str:
    return f"kube-controller-manager/{_UA_SUFFIX}/system:serviceaccount:kube-system:{name}"


HUMAN_USERS = ["alice", "bob", "carol", "dave", "erin"]
HUMAN_GROUPS = ["system:authenticated", "developers"]
KCM_USER = "system:kube-controller-manager"
SCHED_USER = "system:kube-scheduler"
APISERVER_USER = "system:apiserver"

# Clusters reuse object names heavily (the same deployments get created,
# inspected, and deleted over and over), so names come from small pools with
# an occasional novel one mixed in.
NAMESPACE_POOL = ["default", "dev", "staging", "prod", "monitoring",
                  "team-a", "team-b", "web", "data", "infra"]
WORKLOAD_POOL = ["web", "api", "backend", "frontend", "worker", "cache", "queue", "auth"]
_NAME_SUFFIXES = ["alpha", "beta", "gamma", "delta"]
NOVEL_NAME_RATE = 0.05


def _response_status(code: int) -> dict:
    status = {"metadata": {}, "code": code}
    if code >= 400:
        status["status"] = "Failure"
        status["reason"] = {404: "NotFound", 409: "AlreadyExists", 500: "InternalError"}.get(code, "Unknown")
    else:
        status["status"] = "Success"
    return status


def _pooled_name(rng: np.random.Generator, prefix: str) -> str:
    if rng.random() < NOVEL_NAME_RATE:
        return f"{prefix}-{rng.integers(0, 10**6):x}"
    return f"{prefix}-{rng.choice(_NAME_SUFFIXES)}"

SCENARIO_KINDS = (
    "namespace_create",
    "deployment_create",
    "deployment_update",
    "namespace_delete",
    "describe",
    "heartbeat_noise",
    "sa_token_noise",
    "crd_noise",
    "direct_action",
)

# Jitter added to every nominal event offset; wide enough that in-context
# order is genuinely nondeterministic.
JITTER_S = 0.5

RESOURCE_KIND = {
    "namespaces": "Namespace",
    "pods": "Pod",
    "deployments": "Deployment",
    "replicasets": "ReplicaSet",
    "serviceaccounts": "ServiceAccount",
    "configmaps": "ConfigMap",
    "secrets": "Secret",
    "services": "Service",
    "events": "Event",
    "leases": "Lease",
    "nodes": "Node",
    "jobs": "Job",
    "cronjobs": "CronJob",
    "statefulsets": "StatefulSet",
    "daemonsets": "DaemonSet",
    "persistentvolumeclaims": "PersistentVolumeClaim",
    "persistentvolumes": "PersistentVolume",
    "endpoints": "Endpoints",
    "endpointslices": "EndpointSlice",
    "networkpolicies": "NetworkPolicy",
    "roles": "Role",
    "rolebindings": "RoleBinding",
    "clusterroles": "ClusterRole",
    "clusterrolebindings": "ClusterRoleBinding",
    "storageclasses": "StorageClass",
    "resourcequotas": "ResourceQuota",
    "limitranges": "LimitRange",
    "horizontalpodautoscalers": "HorizontalPodAutoscaler",
    "poddisruptionbudgets": "PodDisruptionBudget",
    "ingresses": "Ingress",
}

GROUP_OF = {
    "deployments": ("apps", "v1"),
    "replicasets": ("apps", "v1"),
    "statefulsets": ("apps", "v1"),
    "daemonsets": ("apps", "v1"),
    "controllerrevisions": ("apps", "v1"),
    "jobs": ("batch", "v1"),
    "cronjobs": ("batch", "v1"),
    "leases": ("coordination.k8s.io", "v1"),
    "roles": ("rbac.authorization.k8s.io", "v1"),
    "rolebindings": ("rbac.authorization.k8s.io", "v1"),
    "clusterroles": ("rbac.authorization.k8s.io", "v1"),
    "clusterrolebindings": ("rbac.authorization.k8s.io", "v1"),
    "networkpolicies": ("networking.k8s.io", "v1"),
    "ingresses": ("networking.k8s.io", "v1"),
    "ingressclasses": ("networking.k8s.io", "v1"),
    "storageclasses": ("storage.k8s.io", "v1"),
    "endpointslices": ("discovery.k8s.io", "v1"),
    "horizontalpodautoscalers": ("autoscaling", "v2"),
    "poddisruptionbudgets": ("policy", "v1"),
    "priorityclasses": ("scheduling.k8s.io", "v1"),
}


class InvalidParams(ValueError):
    """Bad scenario parameters."""


class InvalidMix(ValueError):
    """Bad corpus mix description."""


class FileError(OSError):
    """Corpus file missing or unreadable."""


class LabelMismatch(ValueError):
    """Ground-truth side-car references an unknown audit id."""


@dataclass
class TruthRow:
    audit_id: str
    label_int: int | None
    context_id: str | None
    is_trigger: bool

    def as_dict(self):
        return {
            "audit_id": self.audit_id,
            "label_int": self.label_int,
            "context_id": self.context_id,
            "is_trigger": self.is_trigger,
        }


class GroundTruth:
    """Per-line truth: encoded label, context id, trigger flag.

    Passthrough (CRD) lines carry no label or context.
    """

    def __init__(self, rows: list[TruthRow] | None = None):
        self.rows: dict[str, TruthRow] = {}
        for row in rows or []:
            self.add(row)

    def add(self, row: TruthRow):
        self.rows[row.audit_id] = row

    def __len__(self):
        return len(self.rows)

    def label_of(self, audit_id: str) -> int | None:
        row = self.rows.get(audit_id)
        return row.label_int if row else None

    def context_of(self, audit_id: str) -> str | None:
        row = self.rows.get(audit_id)
        return row.context_id if row else None

    def context_sets(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {}
        for row in self.rows.values():
            if row.context_id is not None:
                out.setdefault(row.context_id, set()).add(row.audit_id)
        return out

    def trigger_of_context(self) -> dict[str, str]:
        return {
            row.context_id: row.audit_id
            for row in self.rows.values()
            if row.is_trigger and row.context_id is not None
        }

    def label_arrays(self, store: EventStore, label_len: int = labels.LABEL_LEN):
        """Targets and mask aligned to store order; unlabeled lines masked 0."""
        events = store.events
        y = np.zeros((len(events), label_len), dtype=np.int64)
        mask = np.zeros(len(events), dtype=np.float32)
        for i, event in enumerate(events):
            lbl = self.label_of(event.audit_id)
            if lbl is None:
                continue
            y[i] = labels.decode_tuple(lbl).as_tuple()
            mask[i] = 1.0
        return y, mask

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows.values():
                fh.write(json.dumps(row.as_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def read(cls, path) -> "GroundTruth":
        truth = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                truth.add(
                    TruthRow(
                        audit_id=d["audit_id"],
                        label_int=d.get("label_int"),
                        context_id=d.get("context_id"),
                        is_trigger=bool(d.get("is_trigger")),
                    )
                )
        return truth


@dataclass
class ScenarioResult:
    """Rendered records (with float second offsets) plus their truth rows."""

    records: list[tuple[float, dict]] = field(default_factory=list)
    truth: list[TruthRow] = field(default_factory=list)

    @property
    def span(self) -> float:
        if not self.records:
            return 0.0
        return max(t for t, _ in self.records)


class _Emitter:
    """Builds audit records for one scenario instance."""

    def __init__(self, rng: np.random.Generator, registry: labels.ActionRegistry, context_id: str | None):
        self.rng = rng
        self.registry = registry
        self.context_id = context_id
        self.result = ScenarioResult()

    def uid(self) -> str:
        return "-".join(
            self.rng.bytes(n).hex() for n in (4, 2, 2, 2, 6)
        )

    def audit_id(self) -> str:
        return self.uid()

    def emit(
        self,
        offset: float,
        user: str,
        agent: str,
        verb: str,
        resource: str,
        name: str | None = None,
        namespace: str | None = None,
        subresource: str | None = None,
        code: int = 200,
        groups: list[str] | None = None,
        response_object: dict | None = None,
        request_object: dict | None = None,
        trigger: bool = False,
        jitter: bool = True,
        label_override: labels.LabelTuple | None = None,
        passthrough: bool = False,
        api_group: str | None = None,
        api_version: str | None = None,
        query: str | None = None,
    ):
        if api_group is None or api_version is None:
            api_group, api_version = GROUP_OF.get(resource, ("", "v1"))
        if groups is None:
            groups = (
                ["system:masters", "system:authenticated"]
                if user.startswith("system:")
                else HUMAN_GROUPS
            )
        ref: dict = {"resource": resource, "apiVersion": api_version}
        if api_group:
            ref["apiGroup"] = api_group
        if namespace:
            ref["namespace"] = namespace
        if name:
            ref["name"] = name
        if subresource:
            ref["subresource"] = subresource

        uri = "/apis/" + api_group if api_group else "/api"
        uri += f"/{api_version}"
        if namespace:
            uri += f"/namespaces/{namespace}"
        uri += f"/{resource}"
        if name and verb not in ("create",):
            uri += f"/{name}"
        if subresource:
            uri += f"/{subresource}"
        if query is not None:
            uri += f"?{query}"
        elif verb == "list":
            uri += "?limit=500"
        elif verb == "watch":
            uri += "?watch=true"

        off = float(offset)
        if jitter:
            off += float(self.rng.uniform(0.0, JITTER_S))
        record = {
            "kind": "Event",
            "apiVersion": "audit.k8s.io/v1",
            "level": "RequestResponse",
            "auditID": self.audit_id(),
            "stage": "ResponseComplete",
            "requestURI": uri,
            "verb": verb,
            "user": {"username": user, "groups": groups},
            "userAgent": agent,
            "objectRef": ref,
            "responseStatus": _response_status(code),
            "annotations": {
                "authorization.k8s.io/decision": "allow",
                "authorization.k8s.io/reason": "RBAC: allowed",
            },
        }
        if request_object is not None:
            record["requestObject"] = request_object
        if response_object is not None:
            record["responseObject"] = response_object

        if passthrough:
            label_int = None
            context_id = None
        else:
            if label_override is not None:
                label = label_override
            else:
                # Truth label defaults to the line's own action; cascade
                # scenarios pass label_override with the trigger's label.
                r, s = self.registry.lookup(api_group or "core", api_version, resource, subresource or "")
                label = labels.LabelTuple(
                    r, s, self.registry.verb_id(verb), 1 if namespace else 0, 1 if name else 0
                )
            label_int = labels.encode_tuple(label)
            context_id = self.context_id
        self.result.records.append((off, record))
        self.result.truth.append(
            TruthRow(record["auditID"], label_int, context_id, trigger)
        )
        return record

    def object_body(self, resource, name, namespace=None, owner=None, uid=None, generate_name=None, phase=None, extra=None):
        group, version = GROUP_OF.get(resource, ("", "v1"))
        body = {
            "kind": RESOURCE_KIND.get(resource, resource.capitalize()),
            "apiVersion": f"{group}/{version}" if group else version,
            "metadata": {"name": name, "uid": uid or self.uid()},
        }
        if namespace:
            body["metadata"]["namespace"] = namespace
        if generate_name:
            body["metadata"]["generateName"] = generate_name
        if owner:
            kind, oname, ouid = owner
            body["metadata"]["ownerReferences"] = [
                {
                    "apiVersion": "apps/v1" if kind in ("Deployment", "ReplicaSet") else "v1",
                    "kind": kind,
                    "name": oname,
                    "uid": ouid,
                    "controller": True,
                    "blockOwnerDeletion": True,
                }
            ]
        if phase:
            body["status"] = {"phase": phase}
        if extra:
            body.update(extra)
        return body


def _scenario_label(registry, resource, verb, namespaced, single, subresource="") -> labels.LabelTuple:
    group, version = GROUP_OF.get(resource, ("", "v1"))
    r, s = registry.lookup(group or "core", version, resource, subresource)
    return labels.LabelTuple(r, s, registry.verb_id(verb), int(namespaced), int(single))


# --- scenario renderers -----------------------------------------------------
#
# Each returns a ScenarioResult whose record offsets are seconds relative to
# the scenario start. Cascade line offsets are chosen so that members spread
# over several seconds: close enough that a wide window sees the trigger,
# far enough that a narrow one usually does not.


def _gen_namespace_create(em: _Emitter, params: dict):
    name = params.get("name") or str(em.rng.choice(NAMESPACE_POOL))
    user = params.get("user") or str(em.rng.choice(HUMAN_USERS))
    label = _scenario_label(em.registry, "namespaces", "create", True, True)
    ns_uid = em.uid()

    em.emit(
        0.0, user, UA_KUBECTL, "create", "namespaces", name=name, namespace=name,
        code=201, trigger=True, label_override=label,
        request_object={"kind": "Namespace", "apiVersion": "v1", "metadata": {"name": name}},
        response_object=em.object_body("namespaces", name, uid=ns_uid, phase="Active"),
    )
    spread = float(params.get("spread", 4.0))
    em.emit(
        spread * 0.1, KCM_USER, ua_controller("namespace-controller"), "get",
        "namespaces", name=name, namespace=name, label_override=label,
        response_object=em.object_body("namespaces", name, uid=ns_uid, phase="Active"),
    )
    # Token grant for the serviceaccount controller: same shape as the
    # standalone token-request noise, only context tells them apart.
    em.emit(
        spread * 0.25, KCM_USER, ua_controller("service-account-controller"), "create",
        "serviceaccounts", name="default", namespace=name, subresource="token",
        code=201, label_override=label,
    )
    em.emit(
        spread * 0.45, KCM_USER, ua_controller("service-account-controller"), "create",
        "serviceaccounts", name="default", namespace=name, code=201, label_override=label,
        response_object=em.object_body("serviceaccounts", "default", namespace=name),
    )
    em.emit(
        spread * 0.7, KCM_USER, ua_controller("root-ca-cert-publisher"), "create",
        "configmaps", name="kube-root-ca.crt", namespace=name, code=201, label_override=label,
        response_object=em.object_body("configmaps", "kube-root-ca.crt", namespace=name),
    )
    node = f"node-{em.rng.integers(0, int(params.get('nodes', 3)))}"
    em.emit(
        spread, f"system:node:{node}", UA_KUBELET, "watch",
        "namespaces", name=name, namespace=name, label_override=label,
    )


def _deployment_cascade(em, label, ns, name, dep_uid, replicas, base, spread, nodes, fail=False):
    """Controller/scheduler/kubelet lines shared by create and update flows."""
    rs_name = f"{name}-{em.rng.bytes(4).hex()[:9]}"
    rs_uid = em.uid()
    em.emit(
        base + spread * 0.08, KCM_USER, ua_controller("deployment-controller"), "create",
        "replicasets", name=rs_name, namespace=ns, code=201, label_override=label,
        response_object=em.object_body(
            "replicasets", rs_name, namespace=ns, uid=rs_uid,
            owner=("Deployment", name, dep_uid), generate_name=f"{name}-",
        ),
    )
    em.emit(
        base + spread * 0.18, KCM_USER, ua_controller("deployment-controller"), "update",
        "deployments", name=name, namespace=ns, subresource="status", label_override=label,
        response_object=em.object_body("deployments", name, namespace=ns, uid=dep_uid),
    )
    for i in range(replicas):
        pod = f"{rs_name}-{em.rng.bytes(3).hex()[:5]}"
        pod_uid = em.uid()
        node = f"node-{em.rng.integers(0, nodes)}"
        at = base + spread * (0.25 + 0.6 * (i + 1) / (replicas + 1))
        em.emit(
            at, KCM_USER, ua_controller("replicaset-controller"), "create",
            "pods", name=pod, namespace=ns, code=201, label_override=label,
            response_object=em.object_body(
                "pods", pod, namespace=ns, uid=pod_uid,
                owner=("ReplicaSet", rs_name, rs_uid), generate_name=f"{rs_name}-",
                phase="Pending",
            ),
        )
        em.emit(
            at + spread * 0.08, SCHED_USER, UA_SCHEDULER, "create",
            "pods", name=pod, namespace=ns, subresource="binding", code=201,
            label_override=label,
        )
        em.emit(
            at + spread * 0.2, f"system:node:{node}", UA_KUBELET, "patch",
            "pods", name=pod, namespace=ns, subresource="status",
            code=500 if fail else 200, label_override=label,
            response_object=em.object_body(
                "pods", pod, namespace=ns, uid=pod_uid,
                owner=("ReplicaSet", rs_name, rs_uid),
                phase="Failed" if fail else "Running",
            ),
        )
        em.emit(
            at + spread * 0.14, f"system:node:{node}", UA_KUBELET, "create",
            "events", name=f"{pod}.{em.rng.bytes(4).hex()}", namespace=ns, code=201,
            label_override=label,
            response_object={
                "kind": "Event", "apiVersion": "v1",
                "metadata": {"name": f"{pod}.evt", "namespace": ns, "uid": em.uid()},
                "involvedObject": {"kind": "Pod", "namespace": ns, "name": pod,
                                   "uid": pod_uid, "apiVersion": "v1"},
                "reason": "FailedMount" if fail else "Started",
                "type": "Warning" if fail else "Normal",
            },
        )
    em.emit(
        base + spread * 0.95, KCM_USER, ua_controller("replicaset-controller"), "update",
        "replicasets", name=rs_name, namespace=ns, subresource="status", label_override=label,
        response_object=em.object_body(
            "replicasets", rs_name, namespace=ns, uid=rs_uid,
            owner=("Deployment", name, dep_uid),
        ),
    )
    return rs_name, rs_uid


def _gen_deployment_create(em: _Emitter, params: dict):
    ns = params.get("namespace") or str(em.rng.choice(NAMESPACE_POOL))
    name = params.get("name") or str(em.rng.choice(WORKLOAD_POOL))
    user = params.get("user") or str(em.rng.choice(HUMAN_USERS))
    replicas = int(params.get("replicas", 2))
    if replicas < 1:
        raise InvalidParams("replicas must be >= 1")
    nodes = int(params.get("nodes", 3))
    spread = float(params.get("spread", 8.0))
    fail = bool(params.get("fail", False))
    label = _scenario_label(em.registry, "deployments", "create", True, True)
    dep_uid = em.uid()

    if params.get("client_side_apply", em.rng.random() < 0.5):
        # kubectl pre-fetch: lands before the mutating call, same label.
        em.emit(
            0.0, user, UA_KUBECTL, "get", "deployments", name=name, namespace=ns,
            code=404, label_override=label, jitter=False,
        )
    em.emit(
        0.3, user, UA_KUBECTL, "create", "deployments", name=name, namespace=ns,
        code=201, trigger=True, label_override=label, jitter=False,
        request_object={"kind": "Deployment", "apiVersion": "apps/v1",
                        "metadata": {"name": name, "namespace": ns},
                        "spec": {"replicas": replicas}},
        response_object=em.object_body("deployments", name, namespace=ns, uid=dep_uid),
    )
    _deployment_cascade(em, label, ns, name, dep_uid, replicas, 0.3, spread, nodes, fail)


def _gen_deployment_update(em: _Emitter, params: dict):
    ns = params.get("namespace") or str(em.rng.choice(NAMESPACE_POOL))
    name = params.get("name") or str(em.rng.choice(WORKLOAD_POOL))
    user = params.get("user") or str(em.rng.choice(HUMAN_USERS))
    replicas = int(params.get("replicas", 2))
    nodes = int(params.get("nodes", 3))
    spread = float(params.get("spread", 8.0))
    verb = params.get("verb", "patch")
    if verb not in ("patch", "update"):
        raise InvalidParams(f"deployment_update verb must be patch or update, got {verb!r}")
    label = _scenario_label(em.registry, "deployments", verb, True, True)
    dep_uid = em.uid()
    old_rs = f"{name}-{em.rng.bytes(4).hex()[:9]}"
    old_rs_uid = em.uid()

    em.emit(
        0.0, user, UA_KUBECTL, verb, "deployments", name=name, namespace=ns,
        trigger=True, label_override=label, jitter=False,
        request_object={"kind": "Deployment", "apiVersion": "apps/v1",
                        "metadata": {"name": name, "namespace": ns}},
        response_object=em.object_body("deployments", name, namespace=ns, uid=dep_uid),
    )
    # New replica set comes up, old one scales down.
    _deployment_cascade(em, label, ns, name, dep_uid, replicas, 0.0, spread, nodes,
                        fail=bool(params.get("fail", False)))
    em.emit(
        spread * 0.5, KCM_USER, ua_controller("deployment-controller"), "update",
        "replicasets", name=old_rs, namespace=ns, subresource="scale", label_override=label,
        response_object=em.object_body(
            "replicasets", old_rs, namespace=ns, uid=old_rs_uid,
            owner=("Deployment", name, dep_uid),
        ),
    )
    for i in range(replicas):
        pod = f"{old_rs}-{em.rng.bytes(3).hex()[:5]}"
        em.emit(
            spread * (0.55 + 0.3 * (i + 1) / (replicas + 1)), KCM_USER,
            ua_controller("replicaset-controller"), "delete",
            "pods", name=pod, namespace=ns, label_override=label,
            response_object=em.object_body(
                "pods", pod, namespace=ns,
                owner=("ReplicaSet", old_rs, old_rs_uid), phase="Running",
            ),
        )


def _gen_namespace_delete(em: _Emitter, params: dict):
    name = params.get("name") or str(em.rng.choice(NAMESPACE_POOL))
    user = params.get("user") or str(em.rng.choice(HUMAN_USERS))
    pods = int(params.get("pods", 3))
    secrets = int(params.get("secrets", 2))
    configmaps = int(params.get("configmaps", 2))
    spread = float(params.get("spread", 10.0))
    label = _scenario_label(em.registry, "namespaces", "delete", True, True)
    ns_uid = em.uid()

    em.emit(
        0.0, user, UA_KUBECTL, "delete", "namespaces", name=name, namespace=name,
        trigger=True, label_override=label,
        response_object=em.object_body("namespaces", name, uid=ns_uid, phase="Terminating"),
    )
    ctrl = ua_controller("namespace-controller")
    em.emit(spread * 0.05, KCM_USER, ctrl, "get", "namespaces", name=name,
            namespace=name, label_override=label,
            response_object=em.object_body("namespaces", name, uid=ns_uid, phase="Terminating"))
    em.emit(spread * 0.1, KCM_USER, ctrl, "update", "namespaces", name=name,
            namespace=name, subresource="status", label_override=label)
    listed = ["pods", "secrets", "configmaps", "serviceaccounts", "deployments",
              "replicasets", "services", "events", "persistentvolumeclaims"]
    for i, resource in enumerate(listed):
        em.emit(spread * (0.12 + 0.2 * i / len(listed)), KCM_USER, ctrl, "list",
                resource, namespace=name, label_override=label, query="")
    for i in range(pods):
        pod = f"{em.rng.choice(WORKLOAD_POOL)}-{em.rng.bytes(3).hex()[:5]}"
        at = spread * (0.35 + 0.3 * i / max(1, pods))
        em.emit(at, KCM_USER, ctrl, "delete", "pods", name=pod, namespace=name,
                label_override=label)
        node = f"node-{em.rng.integers(0, int(params.get('nodes', 3)))}"
        em.emit(at + spread * 0.05, f"system:node:{node}", UA_KUBELET, "patch",
                "pods", name=pod, namespace=name, subresource="status",
                label_override=label)
    for i in range(secrets):
        em.emit(spread * (0.55 + 0.1 * i / max(1, secrets)), KCM_USER, ctrl, "delete",
                "secrets", name=_pooled_name(em.rng, "sec"), namespace=name,
                label_override=label)
    for i in range(configmaps):
        em.emit(spread * (0.62 + 0.1 * i / max(1, configmaps)), KCM_USER, ctrl, "delete",
                "configmaps", name=_pooled_name(em.rng, "cm"), namespace=name,
                label_override=label)
    em.emit(spread * 0.7, KCM_USER, ctrl, "delete", "serviceaccounts", name="default",
            namespace=name, label_override=label)
    em.emit(spread * 0.75, KCM_USER, ctrl, "deletecollection", "limitranges",
            namespace=name, label_override=label)
    em.emit(spread * 0.85, KCM_USER, ctrl, "update", "namespaces", name=name,
            namespace=name, subresource="finalize", label_override=label)
    em.emit(spread * 0.95, KCM_USER, ctrl, "delete", "namespaces", name=name,
            namespace=name, label_override=label,
            response_object=em.object_body("namespaces", name, uid=ns_uid, phase="Terminating"))


DESCRIBE_PLANS = {
    "deployments": ["replicasets", "pods", "events"],
    "pods": ["events"],
    "services": ["endpointslices", "events"],
    "statefulsets": ["controllerrevisions", "pods", "events"],
    "nodes": ["pods", "events"],
    "replicasets": ["pods", "events"],
    "jobs": ["pods", "events"],
    "cronjobs": ["jobs", "events"],
    "persistentvolumeclaims": ["events"],
    "configmaps": [],
    "secrets": [],
}


def _gen_describe(em: _Emitter, params: dict):
    resource = params.get("resource", "deployments")
    if resource not in DESCRIBE_PLANS:
        raise InvalidParams(f"describe does not support resource {resource!r}")
    ns = params.get("namespace") or str(em.rng.choice(NAMESPACE_POOL))
    name = params.get("name") or (
        f"node-{em.rng.integers(0, 3)}" if resource == "nodes"
        else _pooled_name(em.rng, resource[:3])
    )
    user = params.get("user") or str(em.rng.choice(HUMAN_USERS))
    spread = float(params.get("spread", 2.5))
    namespaced = resource != "nodes"
    label = _scenario_label(em.registry, resource, "get", namespaced, True)

    em.emit(
        0.0, user, UA_KUBECTL, "get", resource, name=name,
        namespace=ns if namespaced else None, trigger=True, label_override=label,
    )
    for i, related in enumerate(DESCRIBE_PLANS[resource]):
        if related == "events":
            query = f"fieldSelector=involvedObject.name%3D{name}"
        else:
            query = f"labelSelector=app%3D{name}"
        em.emit(
            spread * (0.3 + 0.7 * i / max(1, len(DESCRIBE_PLANS[resource]))),
            user, UA_KUBECTL, "list", related,
            namespace=None if resource == "nodes" else ns,
            label_override=label, query=query,
        )


def _gen_heartbeat_noise(em: _Emitter, params: dict):
    nodes = int(params.get("nodes", 3))
    duration = float(params.get("duration", 60.0))
    period = float(params.get("period", 10.0))
    if nodes < 1 or duration <= 0 or period <= 0:
        raise InvalidParams("heartbeat_noise needs nodes >= 1 and positive duration/period")
    beats = int(duration // period)
    base_context = em.context_id
    for node_i in range(nodes):
        node = f"node-{node_i}"
        em.context_id = f"{base_context}/{node}"
        for beat in range(beats):
            em.emit(
                period * beat + float(em.rng.uniform(0, period / 10)),
                f"system:node:{node}", UA_KUBELET, "patch",
                "leases", name=node, namespace="kube-node-lease",
                trigger=beat == 0,
                response_object={
                    "kind": "Lease", "apiVersion": "coordination.k8s.io/v1",
                    "metadata": {"name": node, "namespace": "kube-node-lease", "uid": f"lease-{node}"},
                },
            )
    em.context_id = base_context


def _gen_sa_token_noise(em: _Emitter, params: dict):
    count = int(params.get("count", 1))
    gap = float(params.get("gap", 45.0))
    base_context = em.context_id
    for i in range(count):
        em.context_id = f"{base_context}/{i}"
        ns = str(em.rng.choice(["kube-system", "default", "monitoring"]))
        sa = str(em.rng.choice(["default", "coredns", "metrics-server", "prometheus"]))
        em.emit(
            gap * i, KCM_USER, ua_controller("token-cleaner"), "create",
            "serviceaccounts", name=sa, namespace=ns, subresource="token",
            code=201, trigger=True,
        )
    em.context_id = base_context


def _gen_crd_noise(em: _Emitter, params: dict):
    count = int(params.get("count", 3))
    group = params.get("group", "example.com")
    resource = params.get("resource", "mycrds")
    gap = float(params.get("gap", 5.0))
    for i in range(count):
        verb = str(em.rng.choice(["get", "list", "create", "update"]))
        em.emit(
            gap * i, str(em.rng.choice(HUMAN_USERS)), UA_KUBECTL, verb,
            resource, name=f"crd-obj-{i}" if verb != "list" else None,
            namespace="default", passthrough=True,
            api_group=group, api_version="v1",
        )


# Single direct CRUD calls with no cascade; the long tail of action classes,
# weighted like real kubectl usage (listing pods dwarfs everything else).
DIRECT_ACTIONS = [
    ("pods", "list", True, False, 300),
    ("deployments", "list", True, False, 150),
    ("secrets", "get", True, True, 120),
    ("configmaps", "get", True, True, 100),
    ("pods", "get", True, True, 90),
    ("nodes", "list", False, False, 80),
    ("services", "list", True, False, 70),
    ("pods", "delete", True, True, 60),
    ("secrets", "create", True, True, 55),
    ("configmaps", "create", True, True, 50),
    ("nodes", "get", False, True, 45),
    ("services", "create", True, True, 40),
    ("jobs", "create", True, True, 35),
    ("configmaps", "update", True, True, 30),
    ("secrets", "delete", True, True, 28),
    ("deployments", "delete", True, True, 25),
    ("roles", "create", True, True, 22),
    ("rolebindings", "create", True, True, 20),
    ("clusterroles", "list", False, False, 18),
    ("persistentvolumeclaims", "create", True, True, 16),
    ("networkpolicies", "create", True, True, 15),
    ("ingresses", "create", True, True, 14),
    ("cronjobs", "create", True, True, 13),
    ("storageclasses", "list", False, False, 12),
    ("clusterrolebindings", "create", False, True, 11),
    ("resourcequotas", "create", True, True, 10),
    ("limitranges", "list", True, False, 9),
    ("horizontalpodautoscalers", "create", True, True, 8),
    ("poddisruptionbudgets", "create", True, True, 7),
    ("replicasets", "update", True, True, 6),
]


def _gen_direct_action(em: _Emitter, params: dict):
    resource = params["resource"]
    verb = params["verb"]
    namespaced = bool(params.get("namespaced", True))
    single = bool(params.get("single", True))
    user = params.get("user") or str(em.rng.choice(HUMAN_USERS))
    ns = (params.get("namespace") or str(em.rng.choice(NAMESPACE_POOL))) if namespaced else None
    name = None
    if single:
        if resource == "nodes":
            name = params.get("name") or f"node-{em.rng.integers(0, 3)}"
        elif resource == "deployments":
            name = params.get("name") or str(em.rng.choice(WORKLOAD_POOL))
        else:
            name = params.get("name") or _pooled_name(em.rng, resource[:3])
    label = _scenario_label(em.registry, resource, verb, namespaced, single)
    code = 201 if verb == "create" else 200
    response_object = None
    if verb == "create" and name:
        if resource == "storageclasses":
            response_object = em.object_body(resource, name, extra={"volumeBindingMode": "WaitForFirstConsumer"})
        else:
            response_object = em.object_body(resource, name, namespace=ns)
    em.emit(
        0.0, user, UA_KUBECTL, verb, resource, name=name, namespace=ns,
        code=code, trigger=True, label_override=label, response_object=response_object,
    )


_SCENARIO_FNS = {
    "namespace_create": _gen_namespace_create,
    "deployment_create": _gen_deployment_create,
    "deployment_update": _gen_deployment_update,
    "namespace_delete": _gen_namespace_delete,
    "describe": _gen_describe,
    "heartbeat_noise": _gen_heartbeat_noise,
    "sa_token_noise": _gen_sa_token_noise,
    "crd_noise": _gen_crd_noise,
    "direct_action": _gen_direct_action,
}


def generate_scenario(
    kind: str,
    params: dict | None = None,
    seed: int = 0,
    registry: labels.ActionRegistry | None = None,
    context_id: str | None = None,
) -> ScenarioResult:
    """Render one scenario into records (with relative offsets) and truth."""
    if kind not in _SCENARIO_FNS:
        raise InvalidParams(f"unknown scenario kind {kind!r}")
    registry = registry or labels.build_registry()
    rng = np.random.default_rng(seed)
    em = _Emitter(rng, registry, context_id or f"{kind}-{seed}")
    _SCENARIO_FNS[kind](em, params or {})
    return em.result


# --- corpus assembly ---------------------------------------------------------


def _normalize_mix(mix) -> list[dict]:
    if isinstance(mix, str):
        if mix not in PRESETS:
            raise InvalidMix(f"unknown preset {mix!r}; have {sorted(PRESETS)}")
        mix = PRESETS[mix]()
    entries = []
    for entry in mix:
        if "kind" not in entry or entry["kind"] not in _SCENARIO_FNS:
            raise InvalidMix(f"bad mix entry {entry!r}")
        entries.append(
            {"kind": entry["kind"], "count": int(entry.get("count", 1)),
             "params": dict(entry.get("params", {}))}
        )
    if not entries:
        raise InvalidMix("mix is empty")
    return entries


def generate_corpus(
    mix,
    interleave: bool = True,
    seed: int = 0,
    registry: labels.ActionRegistry | None = None,
    manifest: FeatureManifest | None = None,
    base_time: datetime = DEFAULT_BASE_TIME,
    duration: float | None = None,
):
    """Schedule a scenario mix on a timeline and build the event store.

    Returns (EventStore, GroundTruth, raw_lines). Continuous noise scenarios
    span the whole corpus; the rest start at seeded-random offsets when
    interleave is on, or strictly one after another (with a quiet gap) when
    off. Identical seeds give identical corpora.
    """
    if duration is None and isinstance(mix, str):
        duration = PRESET_DURATIONS.get(mix)
    entries = _normalize_mix(mix)
    registry = registry or labels.build_registry()
    manifest = manifest or FeatureManifest.default()

    instances = []
    for entry in entries:
        for i in range(entry["count"]):
            instances.append((entry["kind"], dict(entry["params"])))

    root = np.random.SeedSequence(seed)
    sched_rng = np.random.default_rng(root.spawn(1)[0])
    child_seeds = root.spawn(len(instances) + 1)[1:]

    if duration is None:
        # Rough default: enough room that cascades overlap but stay sparse.
        duration = max(60.0, 14.0 * len(instances))

    rendered: list[tuple[float, ScenarioResult]] = []
    cursor = 0.0
    for idx, ((kind, params), child) in enumerate(zip(instances, child_seeds)):
        context_id = f"{kind}-{idx:05d}"
        if kind == "heartbeat_noise" and "duration" not in params:
            params["duration"] = duration
        rng = np.random.default_rng(child)
        em = _Emitter(rng, registry, context_id)
        _SCENARIO_FNS[kind](em, params)
        result = em.result
        if kind in ("heartbeat_noise",):
            start = 0.0
        elif interleave:
            start = float(sched_rng.uniform(0.0, max(1e-3, duration - result.span)))
        else:
            start = cursor
            cursor += result.span + 35.0
        rendered.append((start, result))

    stamped: list[tuple[float, str, dict]] = []
    truth = GroundTruth()
    for start, result in rendered:
        for offset, record in result.records:
            at = start + offset
            ts = base_time + timedelta(seconds=at)
            record["stageTimestamp"] = ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
            record["requestReceivedTimestamp"] = (ts - timedelta(milliseconds=25)).strftime(
                "%Y-%m-%dT%H:%M:%S.%fZ"
            )
            stamped.append((at, record["auditID"], record))
        for row in result.truth:
            truth.add(row)

    stamped.sort(key=lambda item: (item[0], item[1]))
    lines = [json.dumps(record, separators=(",", ":"), sort_keys=True) for _, _, record in stamped]
    report = ParseReport()
    store = read_lines(lines, registry, manifest, report)
    if report.errors:
        raise InvalidMix(f"generator produced unparseable records: {report.errors[:3]}")
    return store, truth, lines


def write_corpus(out_dir, store: EventStore, truth: GroundTruth, lines: list[str]):
    """Write events.log plus the ground-truth side-car into a directory."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    events_path = os.path.join(out_dir, "events.log")
    truth_path = os.path.join(out_dir, "truth.jsonl")
    with open(events_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    truth.write(truth_path)
    return events_path, truth_path


def load_external(
    path,
    registry: labels.ActionRegistry | None = None,
    manifest: FeatureManifest | None = None,
):
    """Load an externally captured corpus, with its label side-car if present.

    `path` is either an events file (side-car expected at <path>.truth.jsonl
    or truth.jsonl next to it) or a directory holding events.log/truth.jsonl.
    Corpora without a side-car load for inference only (truth is None).
    """
    import os

    registry = registry or labels.build_registry()
    manifest = manifest or FeatureManifest.default()

    if os.path.isdir(path):
        events_path = os.path.join(path, "events.log")
        sidecars = [os.path.join(path, "truth.jsonl")]
    else:
        events_path = path
        sidecars = [str(path) + ".truth.jsonl",
                    os.path.join(os.path.dirname(str(path)) or ".", "truth.jsonl")]
    if not os.path.exists(events_path):
        raise FileError(f"no corpus at {events_path}")

    report = ParseReport()
    with open(events_path, encoding="utf-8") as fh:
        store = read_lines(fh, registry, manifest, report)

    truth = None
    for sidecar in sidecars:
        if os.path.exists(sidecar):
            truth = GroundTruth.read(sidecar)
            for audit_id in truth.rows:
                if audit_id not in store:
                    raise LabelMismatch(f"side-car references unknown audit id {audit_id!r}")
            break
    return store, truth, report


# --- preset mixes -------------------------------------------------------------


def _scaled_mix(scale: float, nodes_hb: int, min_count: int = 1) -> list[dict]:
    """Common corpus shape: heartbeat floor, cascade scenarios, a long tail
    of direct actions. `scale` multiplies every instance count."""

    def n(base):
        return max(min_count, int(round(base * scale)))

    mix = [
        {"kind": "heartbeat_noise", "count": 1, "params": {"nodes": nodes_hb}},
        {"kind": "namespace_create", "count": n(190)},
        {"kind": "namespace_delete", "count": n(66)},
        {"kind": "deployment_create", "count": n(150)},
        {"kind": "deployment_create", "count": n(12), "params": {"fail": True}},
        {"kind": "deployment_update", "count": n(95), "params": {"verb": "patch"}},
        {"kind": "deployment_update", "count": n(56), "params": {"verb": "update"}},
        {"kind": "sa_token_noise", "count": n(330), "params": {"count": 1}},
        {"kind": "crd_noise", "count": n(10), "params": {"count": 5}},
    ]
    describe_counts = {
        "deployments": 115, "pods": 95, "services": 60, "nodes": 42,
        "statefulsets": 34, "replicasets": 40, "jobs": 35,
        "cronjobs": 30, "persistentvolumeclaims": 25, "configmaps": 28, "secrets": 22,
    }
    for resource, count in describe_counts.items():
        mix.append({"kind": "describe", "count": n(count), "params": {"resource": resource}})
    for resource, verb, namespaced, single, count in DIRECT_ACTIONS:
        mix.append(
            {"kind": "direct_action", "count": n(count),
             "params": {"resource": resource, "verb": verb,
                        "namespaced": namespaced, "single": single}}
        )
    return mix


def _preset_train():
    return _scaled_mix(1.2, nodes_hb=10, min_count=25)


def _preset_sweep():
    return _scaled_mix(0.42, nodes_hb=6, min_count=20)


def _preset_default():
    return [
        {"kind": "namespace_create", "count": 2},
        {"kind": "deployment_create", "count": 1, "params": {"replicas": 2}},
        {"kind": "describe", "count": 1, "params": {"resource": "deployments"}},
        {"kind": "heartbeat_noise", "count": 1, "params": {"nodes": 2, "duration": 60}},
        {"kind": "crd_noise", "count": 1, "params": {"count": 3}},
    ]


def _preset_contexts():
    return [
        {"kind": "namespace_create", "count": 2},
        {"kind": "deployment_create", "count": 1, "params": {"replicas": 2}},
        {"kind": "describe", "count": 1, "params": {"resource": "deployments"}},
        {"kind": "sa_token_noise", "count": 1, "params": {"count": 1}},
    ]


def _preset_noise_heavy():
    return [
        {"kind": "heartbeat_noise", "count": 1, "params": {"nodes": 4, "duration": 900}},
        {"kind": "sa_token_noise", "count": 1, "params": {"count": 25}},
        {"kind": "namespace_create", "count": 2},
        {"kind": "deployment_create", "count": 1},
    ]


PRESETS = {
    "default": _preset_default,
    "train": _preset_train,
    "sweep": _preset_sweep,
    "contexts": _preset_contexts,
    "noise-heavy": _preset_noise_heavy,
}

# Corpus length in seconds per preset; the line rate (and with it how many
# seconds a window spans) stays comparable across presets.
PRESET_DURATIONS = {
    "default": 90.0,
    "train": 7200.0,
    "sweep": 2000.0,
    "contexts": 25.0,
    "noise-heavy": 900.0,
}
