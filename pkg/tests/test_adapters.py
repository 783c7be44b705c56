import json
import os
import stat
from pathlib import Path

import pytest

from chart_sentry.adapters import ADAPTERS, get_adapter
from chart_sentry.errors import (
    AdapterDecodeError,
    ToolTimeoutError,
    ToolUnavailableError,
)
from chart_sentry.findings import resolve_findings
from chart_sentry.manifest import parse_manifests

from conftest import CHARTS, GOLDEN

GOLDEN_BY_TOOL = {
    "checkov": "checkov.json",
    "datree": "datree.json",
    "kics": "kics.json",
    "kube-linter": "kube_linter.json",
    "kubeaudit": "kubeaudit.json",
    "kubescape": "kubescape.json",
    "terrascan": "terrascan.json",
}


@pytest.fixture
def busybox_set(busybox_text):
    return parse_manifests(busybox_text)


@pytest.mark.parametrize("tool", sorted(GOLDEN_BY_TOOL))
def test_golden_reports_parse_to_resolvable_findings(tool, busybox_set):
    adapter = get_adapter(tool)
    findings = adapter.parse_report_file(
        GOLDEN / GOLDEN_BY_TOOL[tool], mset=busybox_set, chart="local/busybox@1.0.0"
    )
    assert len(findings) >= 1
    resolved, quarantined = resolve_findings(findings, busybox_set)
    assert len(resolved) == len(findings)
    assert quarantined == []
    for f in findings:
        assert f.tool == tool
        assert f.policy.policy_id
        assert f.policy.description
        assert f.resource.kind == "Pod"
        assert f.resource.name == "busybox-pod"
        assert f.resource.normalized_namespace == "busybox-namespace"


@pytest.mark.parametrize("tool", sorted(GOLDEN_BY_TOOL))
def test_truncated_golden_raises_with_no_partial_findings(tool):
    adapter = get_adapter(tool)
    raw = (GOLDEN / GOLDEN_BY_TOOL[tool]).read_text()
    truncated = raw[: len(raw) // 2]
    with pytest.raises(AdapterDecodeError):
        adapter.parse(truncated)


def test_checkov_golden_includes_privilege_escalation_check(busybox_set):
    findings = get_adapter("checkov").parse_report_file(GOLDEN / "checkov.json", mset=busybox_set)
    assert any(f.policy.policy_id == "CKV_K8S_20" for f in findings)


def test_kics_empty_report_has_zero_findings():
    adapter = get_adapter("kics")
    assert adapter.parse(json.dumps({"total_counter": 0, "queries": []})) == []


def test_kics_container_extracted_from_search_key(busybox_set):
    findings = get_adapter("kics").parse_report_file(GOLDEN / "kics.json", mset=busybox_set)
    assert all(f.location == "busybox-container" for f in findings)


def test_kubeaudit_passed_levels_filtered():
    adapter = get_adapter("kubeaudit")
    raw = json.dumps(
        {
            "AuditResultName": "Whatever",
            "ResourceKind": "Pod",
            "ResourceName": "p",
            "level": "info",
        }
    )
    assert adapter.parse(raw) == []


def test_kubescape_passed_controls_filtered(busybox_set):
    findings = get_adapter("kubescape").parse_report_file(GOLDEN / "kubescape.json", mset=busybox_set)
    assert {f.policy.policy_id for f in findings} == {"C-0004", "C-0016"}


def test_terrascan_kind_mapping():
    adapter = get_adapter("terrascan")
    assert adapter._kind_of("kubernetes_pod") == "Pod"
    assert adapter._kind_of("kubernetes_cluster_role") == "ClusterRole"


def test_missing_binary_raises_tool_unavailable(tmp_path, monkeypatch):
    monkeypatch.setenv("PATH", str(tmp_path))
    adapter = get_adapter("checkov")
    with pytest.raises(ToolUnavailableError):
        adapter.scan(CHARTS / "busybox" / "rendered.yaml")


def _stub_binary(tmp_path: Path, name: str, script: str) -> None:
    path = tmp_path / name
    path.write_text(f"#!/bin/sh\n{script}\n")
    path.chmod(path.stat().st_mode | stat.S_IEXEC)


def test_stub_scan_end_to_end(tmp_path, monkeypatch, busybox_set):
    report = (GOLDEN / "checkov.json").read_text().replace('"', '\\"')
    _stub_binary(tmp_path, "checkov", f'cat "{GOLDEN / "checkov.json"}"; exit 1')
    monkeypatch.setenv("PATH", f"{tmp_path}{os.pathsep}{os.environ['PATH']}")
    adapter = get_adapter("checkov")
    findings = adapter.scan(CHARTS / "busybox" / "rendered.yaml", mset=busybox_set)
    assert len(findings) == 2  # nonzero exit with parseable report is not an error


def test_stub_scan_timeout(tmp_path, monkeypatch):
    _stub_binary(tmp_path, "checkov", "sleep 5")
    monkeypatch.setenv("PATH", f"{tmp_path}{os.pathsep}{os.environ['PATH']}")
    with pytest.raises(ToolTimeoutError):
        get_adapter("checkov").scan(CHARTS / "busybox" / "rendered.yaml", timeout=0.3)


def test_stub_scan_garbage_output_raises_with_raw_path(tmp_path, monkeypatch):
    _stub_binary(tmp_path, "checkov", "echo 'not json at all'")
    monkeypatch.setenv("PATH", f"{tmp_path}{os.pathsep}{os.environ['PATH']}")
    raw_dir = tmp_path / "raw"
    with pytest.raises(AdapterDecodeError) as err:
        get_adapter("checkov").scan(
            CHARTS / "busybox" / "rendered.yaml", raw_dir=raw_dir
        )
    assert err.value.raw_path is not None
    assert Path(err.value.raw_path).read_text().strip() == "not json at all"


def test_adapter_registry_covers_all_seven():
    assert sorted(ADAPTERS) == [
        "checkov", "datree", "kics", "kube-linter", "kubeaudit", "kubescape", "terrascan",
    ]
    with pytest.raises(ValueError):
        get_adapter("nope")
