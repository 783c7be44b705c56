"""Normalized findings, the cross-tool policy equivalence map, and counters.

Every scanner (the built-in analyzer included) reduces to the same record: one
policy violated on one resource, optionally on one container. Per-tool counts
and the unique-policy computation both work on this normalized form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from importlib import resources as importlib_resources
from pathlib import Path

import yaml

from .manifest import ManifestSet, ResourceId, find_resource

TOOLS = (
    "builtin",
    "checkov",
    "datree",
    "kics",
    "kube-linter",
    "kubeaudit",
    "kubescape",
    "terrascan",
)


@dataclass(frozen=True)
class PolicyDescriptor:
    """One scanner policy; the description doubles as the prompt ingredient."""

    tool: str
    policy_id: str
    description: str
    equivalence_class: str | None = None

    def __post_init__(self):
        if self.tool not in TOOLS:
            raise ValueError(f"unknown tool {self.tool!r}")
        if not self.description:
            raise ValueError("policy description must be non-empty")


@dataclass(frozen=True)
class Finding:
    """One violation of one policy on one resource (optionally one container)."""

    policy: PolicyDescriptor
    resource: ResourceId
    location: str | None = None
    chart: str | None = None
    severity: str = ""

    @property
    def tool(self) -> str:
        return self.policy.tool

    def key(self) -> tuple:
        """Identity used for persistence, rescans, and attempt matching."""
        return (
            self.policy.tool,
            self.policy.policy_id,
            self.resource.api_version,
            self.resource.kind,
            self.resource.name,
            self.resource.normalized_namespace,
            self.location or "",
            self.chart or "",
        )


def finding_id(finding: Finding, ordinal: int = 0) -> str:
    digest = hashlib.sha256("|".join(str(p) for p in finding.key()).encode()).hexdigest()[:12]
    return digest if ordinal == 0 else f"{digest}-{ordinal}"


@dataclass(frozen=True)
class QuarantinedFinding:
    """A finding whose resource could not be resolved in the scanned manifest."""

    finding: Finding
    reason: str


def resolve_findings(
    findings: list[Finding], mset: ManifestSet
) -> tuple[list[Finding], list[QuarantinedFinding]]:
    """Split findings into resolvable and quarantined against a manifest set."""
    resolved: list[Finding] = []
    quarantined: list[QuarantinedFinding] = []
    for f in findings:
        doc = find_resource(
            mset,
            f.resource.kind,
            f.resource.name,
            namespace=f.resource.namespace or None,
            api_version=f.resource.api_version or None,
        )
        if doc is None:
            quarantined.append(QuarantinedFinding(f, reason="resource not in manifest"))
        else:
            resolved.append(replace(f, resource=doc.id))
    return resolved, quarantined


class EquivalenceMap:
    """canonical policy key -> the (tool, policy_id) pairs that check it.

    A pair may appear under at most one key; unmapped pairs are treated as
    singleton keys (``tool:policy_id``) so they conservatively count as
    unique to their tool.
    """

    def __init__(self, entries: dict[str, set[tuple[str, str]]] | None = None):
        self.entries: dict[str, set[tuple[str, str]]] = entries or {}
        self._index: dict[tuple[str, str], str] = {}
        for key, pairs in self.entries.items():
            for pair in pairs:
                if pair in self._index:
                    raise ValueError(f"{pair} mapped under both {self._index[pair]!r} and {key!r}")
                self._index[pair] = key

    @classmethod
    def from_yaml(cls, path: str | Path) -> "EquivalenceMap":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls._from_mapping(data)

    @classmethod
    def bundled(cls) -> "EquivalenceMap":
        """The versioned policy_map.yaml shipped with the package."""
        text = (
            importlib_resources.files("chart_sentry")
            .joinpath("data/policy_map.yaml")
            .read_text()
        )
        return cls._from_mapping(yaml.safe_load(text) or {})

    @classmethod
    def _from_mapping(cls, data: dict) -> "EquivalenceMap":
        entries: dict[str, set[tuple[str, str]]] = {}
        for key, pairs in data.items():
            parsed = set()
            for pair in pairs or []:
                tool, _, policy_id = str(pair).partition(":")
                if not policy_id:
                    raise ValueError(f"bad policy_map entry {pair!r} (want tool:policy_id)")
                parsed.add((tool, policy_id))
            entries[str(key)] = parsed
        return cls(entries)

    def canonical_key(self, tool: str, policy_id: str) -> str:
        return self._index.get((tool, policy_id), f"{tool}:{policy_id}")


def count_misconfigurations(findings: list[Finding]) -> dict[str, dict]:
    """Per-tool table of policy_id -> count plus the tool total (N_MISC)."""
    table: dict[str, dict] = {}
    for f in findings:
        entry = table.setdefault(f.tool, {"by_policy": {}, "total": 0})
        entry["by_policy"][f.policy.policy_id] = entry["by_policy"].get(f.policy.policy_id, 0) + 1
        entry["total"] += 1
    return table


def unique_policies(findings: list[Finding], eq_map: EquivalenceMap) -> dict[str, set[str]]:
    """Canonical keys reported by exactly one tool, per tool (U_POL)."""
    reported: dict[str, set[str]] = {}
    for f in findings:
        key = f.policy.equivalence_class or eq_map.canonical_key(f.tool, f.policy.policy_id)
        reported.setdefault(f.tool, set()).add(key)
    result: dict[str, set[str]] = {}
    for tool, keys in reported.items():
        others = set()
        for other_tool, other_keys in reported.items():
            if other_tool != tool:
                others |= other_keys
        result[tool] = keys - others
    return result


# --- findings.jsonl serialization -------------------------------------------

def finding_to_record(
    f: Finding, eq_map: EquivalenceMap, fid: str, seq: int
) -> dict:
    return {
        "finding_id": fid,
        "seq": seq,
        "tool": f.policy.tool,
        "policy_id": f.policy.policy_id,
        "canonical_key": f.policy.equivalence_class
        or eq_map.canonical_key(f.policy.tool, f.policy.policy_id),
        "api_version": f.resource.api_version,
        "kind": f.resource.kind,
        "name": f.resource.name,
        "namespace": f.resource.normalized_namespace,
        "container": f.location,
        "chart": f.chart,
        "severity": f.severity,
    }


def finding_from_record(record: dict, registry: dict[tuple[str, str], str]) -> Finding:
    """Rebuild a Finding; policy descriptions come from the run's registry."""
    tool = record["tool"]
    policy_id = record["policy_id"]
    description = registry.get((tool, policy_id), policy_id)
    return Finding(
        policy=PolicyDescriptor(
            tool=tool,
            policy_id=policy_id,
            description=description,
            equivalence_class=record.get("canonical_key"),
        ),
        resource=ResourceId(
            api_version=record.get("api_version", ""),
            kind=record["kind"],
            name=record["name"],
            namespace=record.get("namespace", ""),
        ),
        location=record.get("container"),
        chart=record.get("chart"),
        severity=record.get("severity", ""),
    )


def write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=False) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
