"""Adapters for the seven external scanners.

Each adapter knows three things: the exact command line that makes the tool
emit JSON, how to read that JSON into normalized findings, and how to ask the
tool for its version (recorded per run; policy counts drift across releases,
so nothing asserts them). Scanners signal "violations found" through nonzero
exit codes; an adapter only fails when the report itself cannot be parsed.

Report parsing is all-or-nothing: a truncated or malformed report raises
AdapterDecodeError and never yields partial findings.
"""

from __future__ import annotations

import json
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import AdapterDecodeError, ToolTimeoutError, ToolUnavailableError
from .findings import Finding, PolicyDescriptor
from .manifest import ManifestSet, ResourceId, find_resource


@dataclass(frozen=True)
class RawFinding:
    policy_id: str
    description: str
    kind: str
    name: str
    namespace: str | None = None
    api_version: str | None = None
    container: str | None = None
    severity: str = ""


class ScannerAdapter:
    """Base: subprocess orchestration plus identity resolution."""

    tool: str = ""
    binary: str = ""
    version_args: tuple[str, ...] = ("--version",)

    def command(self, path: Path, workdir: Path) -> list[str]:
        raise NotImplementedError

    def parse(self, raw: str) -> list[RawFinding]:
        raise NotImplementedError

    def collect_output(self, proc: subprocess.CompletedProcess, workdir: Path) -> str:
        return proc.stdout

    def available(self) -> bool:
        return shutil.which(self.binary) is not None

    def version(self, timeout: float = 20.0) -> str | None:
        if not self.available():
            return None
        try:
            proc = subprocess.run(
                [self.binary, *self.version_args],
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except (OSError, subprocess.TimeoutExpired):
            return None
        out = (proc.stdout or proc.stderr).strip()
        return out.splitlines()[0] if out else None

    def scan(
        self,
        manifest_path: Path,
        mset: ManifestSet | None = None,
        chart: str | None = None,
        timeout: float = 300.0,
        raw_dir: Path | None = None,
    ) -> list[Finding]:
        """Run the scanner and normalize its report.

        mset, when given, is used to complete partially reported identities
        (most tools omit apiVersion, some omit the namespace).
        """
        if not self.available():
            raise ToolUnavailableError(f"{self.binary!r} is not on PATH")
        with tempfile.TemporaryDirectory(prefix=f"chart-sentry-{self.tool}-") as tmp:
            workdir = Path(tmp)
            cmd = self.command(Path(manifest_path), workdir)
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
            except subprocess.TimeoutExpired as exc:
                raise ToolTimeoutError(f"{self.tool} timed out after {timeout}s") from exc
            raw = self.collect_output(proc, workdir)

        raw_path: Path | None = None
        if raw_dir is not None:
            raw_dir.mkdir(parents=True, exist_ok=True)
            raw_path = raw_dir / f"{self.tool}.json"
            raw_path.write_text(raw or "")
        try:
            raw_findings = self.parse(raw or "")
        except AdapterDecodeError as exc:
            exc.raw_path = str(raw_path) if raw_path else None
            raise
        return self.normalize(raw_findings, mset=mset, chart=chart)

    def parse_report_file(
        self, path: Path, mset: ManifestSet | None = None, chart: str | None = None
    ) -> list[Finding]:
        """Parse an already captured report (golden files, archived runs)."""
        raw_findings = self.parse(Path(path).read_text())
        return self.normalize(raw_findings, mset=mset, chart=chart)

    def normalize(
        self,
        raw_findings: list[RawFinding],
        mset: ManifestSet | None = None,
        chart: str | None = None,
    ) -> list[Finding]:
        findings = []
        for rf in raw_findings:
            api_version = rf.api_version or ""
            namespace = rf.namespace or ""
            if mset is not None:
                doc = find_resource(
                    mset, rf.kind, rf.name,
                    namespace=rf.namespace,
                    api_version=rf.api_version,
                )
                if doc is not None:
                    api_version = doc.id.api_version
                    namespace = doc.id.namespace
            findings.append(
                Finding(
                    policy=PolicyDescriptor(
                        tool=self.tool, policy_id=rf.policy_id, description=rf.description
                    ),
                    resource=ResourceId(
                        api_version=api_version,
                        kind=rf.kind,
                        name=rf.name,
                        namespace=namespace,
                    ),
                    location=rf.container,
                    chart=chart,
                    severity=rf.severity,
                )
            )
        return findings

    def _json(self, raw: str):
        try:
            return json.loads(raw)
        except ValueError as exc:
            raise AdapterDecodeError(f"{self.tool}: report is not valid JSON: {exc}") from exc


class CheckovAdapter(ScannerAdapter):
    tool = "checkov"
    binary = "checkov"
    version_args = ("--version",)

    def command(self, path: Path, workdir: Path) -> list[str]:
        flag = "-d" if path.is_dir() else "-f"
        return [self.binary, flag, str(path), "-o", "json", "--quiet"]

    def parse(self, raw: str) -> list[RawFinding]:
        payload = self._json(raw)
        blocks = payload if isinstance(payload, list) else [payload]
        out: list[RawFinding] = []
        for block in blocks:
            if not isinstance(block, dict) or "results" not in block:
                raise AdapterDecodeError("checkov: missing results block")
            for check in block["results"].get("failed_checks", []):
                resource = str(check.get("resource", ""))
                parts = resource.split(".", 2)
                if len(parts) != 3:
                    continue
                kind, namespace, name = parts
                out.append(
                    RawFinding(
                        policy_id=str(check.get("check_id", "")),
                        description=str(check.get("check_name", check.get("check_id", ""))),
                        kind=kind,
                        name=name,
                        namespace=namespace or None,
                        severity=str(check.get("severity") or ""),
                    )
                )
        return out


class DatreeAdapter(ScannerAdapter):
    tool = "datree"
    binary = "datree"
    version_args = ("version",)

    def command(self, path: Path, workdir: Path) -> list[str]:
        return [self.binary, "test", str(path), "-o", "json"]

    def parse(self, raw: str) -> list[RawFinding]:
        payload = self._json(raw)
        if not isinstance(payload, dict) or "policyValidationResults" not in payload:
            raise AdapterDecodeError("datree: missing policyValidationResults")
        out: list[RawFinding] = []
        for file_result in payload.get("policyValidationResults") or []:
            for rule in file_result.get("ruleResults", []):
                for occurrence in rule.get("occurrencesDetails", []):
                    kind = occurrence.get("kind")
                    name = occurrence.get("metadataName")
                    if not kind or not name:
                        continue
                    out.append(
                        RawFinding(
                            policy_id=str(rule.get("identifier", "")),
                            description=str(rule.get("name", rule.get("identifier", ""))),
                            kind=str(kind),
                            name=str(name),
                            namespace=occurrence.get("namespace"),
                            severity=str(rule.get("severity") or ""),
                        )
                    )
        return out


class KicsAdapter(ScannerAdapter):
    tool = "kics"
    binary = "kics"
    version_args = ("version",)

    _CONTAINER_RE = re.compile(r"containers\.name=\{\{([^}]+)\}\}")

    def command(self, path: Path, workdir: Path) -> list[str]:
        return [
            self.binary, "scan", "-p", str(path),
            "--report-formats", "json", "-o", str(workdir),
        ]

    def collect_output(self, proc: subprocess.CompletedProcess, workdir: Path) -> str:
        results = workdir / "results.json"
        return results.read_text() if results.exists() else proc.stdout

    def parse(self, raw: str) -> list[RawFinding]:
        payload = self._json(raw)
        if not isinstance(payload, dict) or "queries" not in payload:
            raise AdapterDecodeError("kics: missing queries list")
        out: list[RawFinding] = []
        for query in payload.get("queries") or []:
            for entry in query.get("files", []):
                kind = entry.get("resource_type")
                name = entry.get("resource_name")
                if not kind or not name:
                    continue
                container = None
                match = self._CONTAINER_RE.search(entry.get("search_key", ""))
                if match:
                    container = match.group(1)
                out.append(
                    RawFinding(
                        policy_id=str(query.get("query_id", "")),
                        description=str(query.get("query_name", "")),
                        kind=str(kind),
                        name=str(name),
                        container=container,
                        severity=str(query.get("severity") or ""),
                    )
                )
        return out


class KubeLinterAdapter(ScannerAdapter):
    tool = "kube-linter"
    binary = "kube-linter"
    version_args = ("version",)

    _CONTAINER_RE = re.compile(r'container "([^"]+)"')

    def command(self, path: Path, workdir: Path) -> list[str]:
        return [self.binary, "lint", str(path), "--format", "json"]

    def parse(self, raw: str) -> list[RawFinding]:
        payload = self._json(raw)
        if not isinstance(payload, dict) or "Reports" not in payload:
            raise AdapterDecodeError("kube-linter: missing Reports list")
        out: list[RawFinding] = []
        for report in payload.get("Reports") or []:
            obj = (report.get("Object") or {}).get("K8sObject") or {}
            gvk = obj.get("GroupVersionKind") or {}
            kind = gvk.get("Kind")
            name = obj.get("Name")
            if not kind or not name:
                continue
            group = gvk.get("Group") or ""
            version = gvk.get("Version") or ""
            api_version = f"{group}/{version}" if group else version
            message = (report.get("Diagnostic") or {}).get("Message", "")
            container_match = self._CONTAINER_RE.search(message)
            out.append(
                RawFinding(
                    policy_id=str(report.get("Check", "")),
                    description=str(report.get("Remediation") or message or report.get("Check", "")),
                    kind=str(kind),
                    name=str(name),
                    namespace=obj.get("Namespace"),
                    api_version=api_version or None,
                    container=container_match.group(1) if container_match else None,
                )
            )
        return out


class KubeauditAdapter(ScannerAdapter):
    tool = "kubeaudit"
    binary = "kubeaudit"
    version_args = ("version",)

    def command(self, path: Path, workdir: Path) -> list[str]:
        return [self.binary, "all", "-f", str(path), "-p", "json"]

    def parse(self, raw: str) -> list[RawFinding]:
        lines = [line for line in raw.splitlines() if line.strip()]
        entries = []
        for index, line in enumerate(lines):
            try:
                entries.append(json.loads(line))
            except ValueError as exc:
                raise AdapterDecodeError(f"kubeaudit: line {index + 1} is not JSON: {exc}") from exc
        out: list[RawFinding] = []
        for entry in entries:
            if entry.get("level") not in ("error", "warning"):
                continue
            kind = entry.get("ResourceKind")
            name = entry.get("ResourceName")
            if not kind or not name:
                continue
            out.append(
                RawFinding(
                    policy_id=str(entry.get("AuditResultName", "")),
                    description=str(entry.get("msg", entry.get("AuditResultName", ""))),
                    kind=str(kind),
                    name=str(name),
                    namespace=entry.get("ResourceNamespace"),
                    api_version=entry.get("ResourceApiVersion"),
                    container=entry.get("Container"),
                    severity=str(entry.get("level") or ""),
                )
            )
        return out


class KubescapeAdapter(ScannerAdapter):
    tool = "kubescape"
    binary = "kubescape"
    version_args = ("version",)

    def command(self, path: Path, workdir: Path) -> list[str]:
        return [self.binary, "scan", str(path), "--format", "json"]

    def parse(self, raw: str) -> list[RawFinding]:
        payload = self._json(raw)
        if not isinstance(payload, dict) or "results" not in payload:
            raise AdapterDecodeError("kubescape: missing results list")
        objects: dict[str, dict] = {}
        for resource in payload.get("resources") or []:
            rid = resource.get("resourceID")
            obj = resource.get("object")
            if rid and isinstance(obj, dict):
                objects[rid] = obj
        out: list[RawFinding] = []
        for result in payload.get("results") or []:
            obj = objects.get(result.get("resourceID", ""), {})
            metadata = obj.get("metadata") or {}
            kind = obj.get("kind")
            name = metadata.get("name")
            if not kind or not name:
                continue
            for control in result.get("controls", []):
                status = ((control.get("status") or {}).get("status") or "").lower()
                if status != "failed":
                    continue
                out.append(
                    RawFinding(
                        policy_id=str(control.get("controlID", "")),
                        description=str(control.get("name", control.get("controlID", ""))),
                        kind=str(kind),
                        name=str(name),
                        namespace=metadata.get("namespace"),
                        api_version=obj.get("apiVersion"),
                        severity=str(control.get("severity") or ""),
                    )
                )
        return out


class TerrascanAdapter(ScannerAdapter):
    tool = "terrascan"
    binary = "terrascan"
    version_args = ("version",)

    def command(self, path: Path, workdir: Path) -> list[str]:
        return [self.binary, "scan", "-i", "k8s", "-f", str(path), "-o", "json"]

    @staticmethod
    def _kind_of(resource_type: str) -> str:
        tail = resource_type.removeprefix("kubernetes_")
        return "".join(part.capitalize() for part in tail.split("_"))

    def parse(self, raw: str) -> list[RawFinding]:
        payload = self._json(raw)
        results = payload.get("results") if isinstance(payload, dict) else None
        if not isinstance(results, dict) or "violations" not in results:
            raise AdapterDecodeError("terrascan: missing results.violations")
        out: list[RawFinding] = []
        for violation in results.get("violations") or []:
            resource_type = violation.get("resource_type")
            name = violation.get("resource_name")
            if not resource_type or not name:
                continue
            out.append(
                RawFinding(
                    policy_id=str(violation.get("rule_id", violation.get("rule_name", ""))),
                    description=str(violation.get("description", violation.get("rule_name", ""))),
                    kind=self._kind_of(str(resource_type)),
                    name=str(name),
                    severity=str(violation.get("severity") or ""),
                )
            )
        return out


ADAPTERS: dict[str, ScannerAdapter] = {
    adapter.tool: adapter
    for adapter in (
        CheckovAdapter(),
        DatreeAdapter(),
        KicsAdapter(),
        KubeLinterAdapter(),
        KubeauditAdapter(),
        KubescapeAdapter(),
        TerrascanAdapter(),
    )
}


def get_adapter(tool: str) -> ScannerAdapter:
    try:
        return ADAPTERS[tool]
    except KeyError:
        raise ValueError(f"no adapter for tool {tool!r}") from None
