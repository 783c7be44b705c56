"""Built-in reference analyzer.

Implements the named rule set over rendered manifests, with the false-positive
and false-negative corrections the preliminary findings call for:

* hostPath findings are only possible when the volumes list is actually a
  non-empty list (empty/null lists raise nothing);
* a workload only counts as network-policy-covered when a NetworkPolicy in the
  *same* namespace selects its pod labels and carries at least one ingress or
  egress rule (an empty policy object satisfies nothing);
* resource values must be parseable Kubernetes quantities, strictly positive,
  and below a configurable ceiling, so "0", "john", or absurdly large values
  never satisfy a resource policy.

The four presence policies (memory/CPU x request/limit) are value-aware: a
key whose value fails the sanity rule does not satisfy the policy. That keeps
"set the memory request to 0" classified as a still-failing refactoring.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .findings import Finding, PolicyDescriptor
from .manifest import ManifestSet, ResourceDoc
from .quantity import QuantityError, parse_quantity

WORKLOAD_KINDS = (
    "Pod",
    "Deployment",
    "StatefulSet",
    "DaemonSet",
    "Job",
    "CronJob",
    "ReplicaSet",
)


@dataclass(frozen=True)
class BuiltinPolicy:
    policy_id: str
    canonical_key: str
    description: str
    severity: str


BUILTIN_POLICIES: tuple[BuiltinPolicy, ...] = (
    BuiltinPolicy(
        "BI-MEM-REQ", "memory-request",
        "Ensure each container has a configured memory request", "medium",
    ),
    BuiltinPolicy(
        "BI-MEM-LIM", "memory-limit",
        "Ensure each container has a configured memory limit", "medium",
    ),
    BuiltinPolicy(
        "BI-CPU-REQ", "cpu-request",
        "Ensure each container has a configured CPU request", "medium",
    ),
    BuiltinPolicy(
        "BI-CPU-LIM", "cpu-limit",
        "Ensure each container has a configured CPU limit", "medium",
    ),
    BuiltinPolicy(
        "BI-QTY-SANE", "resource-quantity-sanity",
        "Ensure container resource values are valid Kubernetes quantities within sane bounds",
        "medium",
    ),
    BuiltinPolicy(
        "BI-PRIV-ESC", "privilege-escalation",
        "Prevent containers from escalating privileges", "high",
    ),
    BuiltinPolicy(
        "BI-PRIVILEGED", "privileged-container",
        "Prevent containers from running in privileged mode", "high",
    ),
    BuiltinPolicy(
        "BI-SYS-ADMIN", "sys-admin-capability",
        "Minimize the admission of containers with the SYS_ADMIN capability", "high",
    ),
    BuiltinPolicy(
        "BI-IMG-TAG", "image-tag-pinned",
        "Ensure each container image has a pinned (tag) version", "low",
    ),
    BuiltinPolicy(
        "BI-NS-DEFAULT", "default-namespace",
        "Prevent workloads from running in the default namespace", "low",
    ),
    BuiltinPolicy(
        "BI-HOSTPATH", "hostpath-volume",
        "Prevent containers from accessing the underlying host through hostPath volumes",
        "high",
    ),
    BuiltinPolicy(
        "BI-NETPOL", "network-policy-binding",
        "Ensure the workload is covered by an effective network policy", "medium",
    ),
    BuiltinPolicy(
        "BI-CR-WILDCARD", "clusterrole-wildcard",
        "Prevent ClusterRoles from granting wildcard permissions on all resources", "high",
    ),
)

BUILTIN_BY_ID = {p.policy_id: p for p in BUILTIN_POLICIES}
BUILTIN_BY_KEY = {p.canonical_key: p for p in BUILTIN_POLICIES}
BUILTIN_BY_DESCRIPTION = {p.description.lower(): p for p in BUILTIN_POLICIES}


@dataclass(frozen=True)
class AnalyzerConfig:
    """Sanity ceilings for resource quantities (bytes of memory, CPU cores)."""

    memory_ceiling: Fraction = Fraction(2**40)  # 1Ti
    cpu_ceiling: Fraction = Fraction(64)


def _descriptor(policy: BuiltinPolicy) -> PolicyDescriptor:
    return PolicyDescriptor(
        tool="builtin",
        policy_id=policy.policy_id,
        description=policy.description,
        equivalence_class=policy.canonical_key,
    )


def _value_is_sane(value: object, ceiling: Fraction) -> bool:
    try:
        quantity = parse_quantity(value)
    except QuantityError:
        return False
    return 0 < quantity <= ceiling


def pod_spec_of(tree: dict, kind: str) -> tuple[dict | None, dict]:
    """The pod spec and pod labels of a workload document (template-aware)."""
    if kind == "Pod":
        spec = tree.get("spec")
        labels = (tree.get("metadata") or {}).get("labels") or {}
    elif kind == "CronJob":
        job_template = ((tree.get("spec") or {}).get("jobTemplate") or {})
        template = (job_template.get("spec") or {}).get("template") or {}
        spec = template.get("spec")
        labels = (template.get("metadata") or {}).get("labels") or {}
    else:
        template = (tree.get("spec") or {}).get("template") or {}
        spec = template.get("spec")
        labels = (template.get("metadata") or {}).get("labels") or {}
    if not isinstance(spec, dict):
        return None, {}
    return spec, labels if isinstance(labels, dict) else {}


def _pod_spec_and_labels(doc: ResourceDoc) -> tuple[dict | None, dict]:
    return pod_spec_of(doc.tree, doc.id.kind)


def _containers(pod_spec: dict) -> list[dict]:
    out = []
    for section in ("containers", "initContainers"):
        entries = pod_spec.get(section)
        if isinstance(entries, list):
            out.extend(c for c in entries if isinstance(c, dict))
    return out


def _image_pinned(image: object) -> bool:
    if not isinstance(image, str) or not image:
        return False
    if "@" in image:
        return True
    tail = image.rsplit("/", 1)[-1]
    if ":" not in tail:
        return False
    tag = tail.rsplit(":", 1)[1]
    return tag not in ("", "latest")


def _selector_matches(selector: dict, labels: dict) -> bool:
    # An empty podSelector selects every pod in the policy's namespace.
    if not selector:
        return True
    for key, value in (selector.get("matchLabels") or {}).items():
        if labels.get(key) != value:
            return False
    for expr in selector.get("matchExpressions") or []:
        key = expr.get("key")
        op = expr.get("operator")
        values = expr.get("values") or []
        if op == "In":
            if labels.get(key) not in values:
                return False
        elif op == "NotIn":
            if labels.get(key) in values:
                return False
        elif op == "Exists":
            if key not in labels:
                return False
        elif op == "DoesNotExist":
            if key in labels:
                return False
        else:
            return False
    return True


def _netpol_covers(netpol: ResourceDoc, namespace: str, labels: dict) -> bool:
    if netpol.id.normalized_namespace != namespace:
        return False
    spec = netpol.tree.get("spec") or {}
    ingress = spec.get("ingress")
    egress = spec.get("egress")
    has_rule = (isinstance(ingress, list) and len(ingress) > 0) or (
        isinstance(egress, list) and len(egress) > 0
    )
    if not has_rule:
        return False
    selector = spec.get("podSelector")
    return _selector_matches(selector if isinstance(selector, dict) else {}, labels)


def _container_violations(container: dict, config: AnalyzerConfig) -> list[str]:
    """Policy ids this container violates."""
    violations = []
    resources = container.get("resources") if isinstance(container.get("resources"), dict) else {}

    def slot(section: str, resource: str):
        block = resources.get(section)
        if not isinstance(block, dict) or resource not in block:
            return False, None
        return True, block.get(resource)

    ceilings = {"memory": config.memory_ceiling, "cpu": config.cpu_ceiling}
    presence = {
        ("requests", "memory"): "BI-MEM-REQ",
        ("limits", "memory"): "BI-MEM-LIM",
        ("requests", "cpu"): "BI-CPU-REQ",
        ("limits", "cpu"): "BI-CPU-LIM",
    }
    sanity_violated = False
    for (section, resource), policy_id in presence.items():
        present, value = slot(section, resource)
        sane = present and _value_is_sane(value, ceilings[resource])
        if not sane:
            violations.append(policy_id)
        if present and not sane:
            sanity_violated = True
    if sanity_violated:
        violations.append("BI-QTY-SANE")

    sec = container.get("securityContext")
    sec = sec if isinstance(sec, dict) else {}
    if sec.get("allowPrivilegeEscalation") is not False:
        violations.append("BI-PRIV-ESC")
    if sec.get("privileged") is True:
        violations.append("BI-PRIVILEGED")
    caps = sec.get("capabilities") if isinstance(sec.get("capabilities"), dict) else {}
    added = caps.get("add") if isinstance(caps.get("add"), list) else []
    if "SYS_ADMIN" in added:
        violations.append("BI-SYS-ADMIN")
    if not _image_pinned(container.get("image")):
        violations.append("BI-IMG-TAG")
    return violations


def run_builtin_analyzer(
    mset: ManifestSet,
    chart: str | None = None,
    config: AnalyzerConfig | None = None,
) -> list[Finding]:
    """Evaluate every built-in policy over the manifest's documents.

    Emits one finding per (policy, resource, container) violation, in document
    order and then policy-id order, so identical input always yields the
    identical finding list.
    """
    config = config or AnalyzerConfig()
    netpols = [d for d in mset.docs if d.id.kind == "NetworkPolicy"]
    all_findings: list[Finding] = []

    for doc in mset.docs:
        per_doc: list[tuple[str, int, Finding]] = []

        def emit(policy_id: str, order: int, location: str | None):
            policy = BUILTIN_BY_ID[policy_id]
            per_doc.append(
                (
                    policy_id,
                    order,
                    Finding(
                        policy=_descriptor(policy),
                        resource=doc.id,
                        location=location,
                        chart=chart,
                        severity=policy.severity,
                    ),
                )
            )

        if doc.id.kind in WORKLOAD_KINDS:
            pod_spec, pod_labels = _pod_spec_and_labels(doc)
            if pod_spec is not None:
                for index, container in enumerate(_containers(pod_spec)):
                    name = str(container.get("name") or f"container-{index}")
                    for policy_id in _container_violations(container, config):
                        emit(policy_id, index, name)

                if doc.id.normalized_namespace == "default":
                    emit("BI-NS-DEFAULT", -1, None)

                volumes = pod_spec.get("volumes")
                if isinstance(volumes, list) and volumes:
                    if any(isinstance(v, dict) and "hostPath" in v for v in volumes):
                        emit("BI-HOSTPATH", -1, None)

                covered = any(
                    _netpol_covers(np, doc.id.normalized_namespace, pod_labels)
                    for np in netpols
                )
                if not covered:
                    emit("BI-NETPOL", -1, None)

        elif doc.id.kind == "ClusterRole":
            rules = doc.tree.get("rules")
            if isinstance(rules, list):
                for rule in rules:
                    if not isinstance(rule, dict):
                        continue
                    verbs = rule.get("verbs") or []
                    resources = rule.get("resources") or []
                    if "*" in verbs and "*" in resources:
                        emit("BI-CR-WILDCARD", -1, None)
                        break

        per_doc.sort(key=lambda item: (item[0], item[1]))
        all_findings.extend(f for _, _, f in per_doc)

    return all_findings
