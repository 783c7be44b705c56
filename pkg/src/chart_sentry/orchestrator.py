"""Pipeline sequencing and run-directory persistence.

A run is a plain directory of newline-delimited JSON files plus one completion
marker per stage: mine -> render -> scan -> remediate -> verify -> report.
Interrupted runs resume from the last completed stage; within the scan and
remediate stages, progress is tracked per (chart, tool) and per finding, so a
partial stage never repeats work or duplicates records. One process owns a run
directory at a time (lock file).
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .adapters import ADAPTERS, get_adapter
from .catalog import (
    ChartPackage,
    ChartRef,
    HubClient,
    dedupe,
    package_from_dir,
    render_chart,
)
from .errors import (
    ChartSentryError,
    DomainError,
    ProviderError,
    RenderError,
    StageError,
    ToolUnavailableError,
)
from .findings import (
    EquivalenceMap,
    Finding,
    finding_from_record,
    finding_id,
    finding_to_record,
    read_jsonl,
    resolve_findings,
    write_jsonl,
)
from .manifest import parse_manifests
from .policies import run_builtin_analyzer
from .providers import DEFAULT_TEMPERATURE, TokenBucket, make_provider, query_provider
from .remediation import FAILURE_PROVIDER, remediate_findings
from .stats import DEFAULT_Z, sample_validation_subset
from .report import emit_report

STAGES = ("mine", "render", "scan", "remediate", "verify", "report")

TOOL_VERDICTS = ("true_positive", "false_positive")
REFACTOR_VERDICTS = ("correct", "wrong", "refused")


@dataclass
class RunConfig:
    run_dir: Path
    offline: bool = True
    charts_dir: Path | None = None
    hub_url: str | None = None
    cache_dir: Path | None = None
    max_charts: int | None = None
    tools: tuple[str, ...] = ("builtin",)
    provider_id: str = "mock"
    model: str | None = None
    provider_kwargs: dict = field(default_factory=dict)
    z: float = DEFAULT_Z
    confidence: float = 0.95
    sample_size: int = 0
    seed: int = 0
    skip_llm: bool = False
    query_retries: int = 2
    query_backoff: float = 0.5
    query_timeout: float = 60.0
    requests_per_minute: float | None = None

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        if self.charts_dir is not None:
            self.charts_dir = Path(self.charts_dir)
        if self.cache_dir is not None:
            self.cache_dir = Path(self.cache_dir)
        for tool in self.tools:
            if tool != "builtin" and tool not in ADAPTERS:
                raise DomainError(f"unknown tool {tool!r}")


class RunDir:
    """Paths and JSONL helpers for one run directory."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.manifests = self.path / "manifests"
        self.patched = self.path / "manifests_patched"
        self.stages = self.path / "stages"
        self.catalog = self.path / "catalog.json"
        self.findings = self.path / "findings.jsonl"
        self.quarantine = self.path / "quarantine.jsonl"
        self.scan_progress = self.path / "scan_progress.jsonl"
        self.responses = self.path / "responses.jsonl"
        self.attempts = self.path / "attempts.jsonl"
        self.sample = self.path / "sample.json"
        self.labels = self.path / "labels.jsonl"
        self.policies = self.path / "policies.json"
        self.tool_versions = self.path / "tool_versions.json"
        self.report_json = self.path / "report.json"
        self.report_csv = self.path / "report.csv"
        self.report_md = self.path / "report.md"
        self.run_meta = self.path / "run.json"
        self.lock = self.path / "lock"

    def ensure(self) -> "RunDir":
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifests.mkdir(exist_ok=True)
        self.patched.mkdir(exist_ok=True)
        self.stages.mkdir(exist_ok=True)
        return self

    def marker(self, stage: str) -> Path:
        return self.stages / f"{stage}.done"

    def stage_done(self, stage: str) -> bool:
        return self.marker(stage).exists()

    def mark_done(self, stage: str) -> None:
        self.marker(stage).write_text(
            json.dumps({"stage": stage, "completed_at": _now()}) + "\n"
        )

    def policy_registry(self) -> dict[tuple[str, str], str]:
        if not self.policies.exists():
            return {}
        data = json.loads(self.policies.read_text())
        return {(e["tool"], e["policy_id"]): e["description"] for e in data}

    def update_policy_registry(self, findings: list[Finding]) -> None:
        registry = self.policy_registry()
        for f in findings:
            registry[(f.policy.tool, f.policy.policy_id)] = f.policy.description
        entries = [
            {"tool": tool, "policy_id": policy_id, "description": description}
            for (tool, policy_id), description in sorted(registry.items())
        ]
        self.policies.write_text(json.dumps(entries, indent=2) + "\n")

    def load_findings(self) -> list[dict]:
        return read_jsonl(self.findings)

    def findings_as_objects(self) -> list[Finding]:
        registry = self.policy_registry()
        return [finding_from_record(r, registry) for r in self.load_findings()]


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@contextmanager
def run_lock(rd: RunDir):
    try:
        fd = os.open(rd.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(
            f"run directory {rd.path} is locked by another process "
            f"(remove {rd.lock} if that process is gone)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        rd.lock.unlink(missing_ok=True)


# --- catalog persistence ------------------------------------------------------

def _catalog_write(rd: RunDir, entries: list[dict]) -> None:
    rd.catalog.write_text(json.dumps(entries, indent=2) + "\n")


def _catalog_read(rd: RunDir) -> list[dict]:
    return json.loads(rd.catalog.read_text()) if rd.catalog.exists() else []


def _entry_ref(entry: dict) -> ChartRef:
    return ChartRef(
        name=entry["name"],
        repository=entry["repository"],
        version=entry["version"],
        stars=entry.get("stars", 0),
        package_id=entry.get("package_id", ""),
    )


def _entry_package(entry: dict) -> ChartPackage:
    return ChartPackage(
        ref=_entry_ref(entry),
        archive_path=Path(entry["archive_path"]),
        content_digest=entry["digest"],
    )


# --- stages -------------------------------------------------------------------

def stage_mine(config: RunConfig, rd: RunDir) -> None:
    if config.offline:
        if config.charts_dir is None:
            raise StageError("offline mine requires a charts directory")
        dirs = sorted(p for p in config.charts_dir.iterdir() if p.is_dir())
        if config.max_charts is not None:
            dirs = dirs[: config.max_charts]
        packages = [package_from_dir(d) for d in dirs]
    else:
        client = HubClient(base_url=config.hub_url)
        refs = client.search_charts(max_results=config.max_charts)
        cache = config.cache_dir or rd.path / "cache"
        packages = [client.fetch_chart(ref, cache) for ref in refs]

    kept = {id(p) for p in dedupe(packages)}
    entries = []
    for package in packages:
        entry = {
            "name": package.ref.name,
            "repository": package.ref.repository,
            "version": package.ref.version,
            "stars": package.ref.stars,
            "package_id": package.ref.package_id,
            "digest": package.content_digest,
            "archive_path": str(package.archive_path),
            "excluded": None if id(package) in kept else "duplicate",
        }
        entries.append(entry)
    _catalog_write(rd, entries)


def stage_render(config: RunConfig, rd: RunDir) -> None:
    entries = _catalog_read(rd)
    for entry in entries:
        if entry["excluded"]:
            continue
        ref = _entry_ref(entry)
        target = rd.manifests / f"{ref.slug}.yaml"
        if target.exists():
            text = target.read_text()
        else:
            try:
                rendered = render_chart(_entry_package(entry))
            except (RenderError, ChartSentryError) as exc:
                entry["excluded"] = "render_failure"
                entry["detail"] = str(exc).splitlines()[0]
                continue
            text = rendered.text
            target.write_text(text)
        mset = parse_manifests(text)
        if mset.errors:
            entry["excluded"] = "yaml_syntax_error"
            entry["detail"] = mset.errors[0].message.splitlines()[0]
    _catalog_write(rd, entries)


def _eligible_entries(rd: RunDir) -> list[dict]:
    return [e for e in _catalog_read(rd) if not e["excluded"]]


def _chart_slug(entry: dict) -> str:
    return _entry_ref(entry).slug


def _chart_key(entry: dict) -> str:
    return _entry_ref(entry).key


def _record_tool_versions(config: RunConfig, rd: RunDir) -> None:
    versions: dict[str, str | None] = {}
    for tool in config.tools:
        if tool == "builtin":
            versions[tool] = __version__
        else:
            versions[tool] = get_adapter(tool).version()
    rd.tool_versions.write_text(json.dumps(versions, indent=2, sort_keys=True) + "\n")


def stage_scan(config: RunConfig, rd: RunDir) -> None:
    _record_tool_versions(config, rd)
    eq_map = EquivalenceMap.bundled()
    done = {(p["chart"], p["tool"]) for p in read_jsonl(rd.scan_progress)}
    seen_ids: dict[str, int] = {}
    for record in rd.load_findings():
        base = record["finding_id"].split("-")[0]
        seen_ids[base] = seen_ids.get(base, 0) + 1

    entries = _catalog_read(rd)
    statuses: dict[str, dict[str, str]] = {}
    for entry in entries:
        if entry["excluded"]:
            continue
        slug = _chart_slug(entry)
        key = _chart_key(entry)
        text = (rd.manifests / f"{slug}.yaml").read_text()
        mset = parse_manifests(text)
        for tool in config.tools:
            statuses.setdefault(slug, {})
            if (slug, tool) in done:
                statuses[slug][tool] = "done"
                continue
            progress = {"chart": slug, "tool": tool, "status": "ok", "count": 0}
            try:
                if tool == "builtin":
                    found = run_builtin_analyzer(mset, chart=key)
                    quarantined = []
                else:
                    adapter = get_adapter(tool)
                    raw = adapter.scan(
                        rd.manifests / f"{slug}.yaml",
                        mset=mset,
                        chart=key,
                        raw_dir=rd.path / "raw" / slug,
                    )
                    found, quarantined = resolve_findings(raw, mset)
            except ToolUnavailableError:
                progress["status"] = "unavailable"
                statuses[slug][tool] = "unavailable"
                write_jsonl(rd.scan_progress, [progress])
                continue
            except ChartSentryError as exc:
                progress["status"] = "error"
                progress["detail"] = str(exc).splitlines()[0]
                statuses[slug][tool] = "error"
                write_jsonl(rd.scan_progress, [progress])
                continue

            records = []
            for seq, f in enumerate(found):
                base = finding_id(f)
                ordinal = seen_ids.get(base, 0)
                seen_ids[base] = ordinal + 1
                records.append(finding_to_record(f, eq_map, finding_id(f, ordinal), seq))
            write_jsonl(rd.findings, records)
            if quarantined:
                write_jsonl(
                    rd.quarantine,
                    [
                        {
                            "tool": q.finding.policy.tool,
                            "policy_id": q.finding.policy.policy_id,
                            "kind": q.finding.resource.kind,
                            "name": q.finding.resource.name,
                            "namespace": q.finding.resource.namespace,
                            "chart": key,
                            "reason": q.reason,
                        }
                        for q in quarantined
                    ],
                )
            rd.update_policy_registry(found)
            progress["count"] = len(records)
            statuses[slug][tool] = "ok"
            write_jsonl(rd.scan_progress, [progress])

    # a chart every available tool errored on is excluded from the study
    for entry in entries:
        if entry["excluded"]:
            continue
        per_tool = statuses.get(_chart_slug(entry), {})
        ran = [s for s in per_tool.values() if s in ("ok", "error", "done")]
        if ran and all(s == "error" for s in ran):
            entry["excluded"] = "all_tools_failed"
    _catalog_write(rd, entries)


def _rescannable_tools(config: RunConfig) -> set[str]:
    tools = set()
    for tool in config.tools:
        if tool == "builtin" or get_adapter(tool).available():
            tools.add(tool)
    return tools


def _ordered_chart_findings(rd: RunDir, tools: set[str]) -> dict[str, list[dict]]:
    by_chart: dict[str, list[dict]] = {}
    for record in rd.load_findings():
        if record["tool"] in tools:
            by_chart.setdefault(record["chart"], []).append(record)
    for records in by_chart.values():
        records.sort(key=lambda r: (r["tool"], r["seq"]))
    return dict(sorted(by_chart.items()))


def _slug_for_key(rd: RunDir, key: str) -> str:
    for entry in _catalog_read(rd):
        if _chart_key(entry) == key:
            return _chart_slug(entry)
    raise StageError(f"chart {key} not in catalog")


def _make_rescan(config: RunConfig, rd: RunDir, chart_key: str, tools: set[str]):
    def rescan(mset):
        out = []
        for tool in sorted(tools):
            if tool == "builtin":
                out.extend(run_builtin_analyzer(mset, chart=chart_key))
            else:
                adapter = get_adapter(tool)
                with tempfile.NamedTemporaryFile(
                    "w", suffix=".yaml", prefix="chart-sentry-rescan-", delete=False
                ) as handle:
                    handle.write(mset.source_text)
                    temp_path = Path(handle.name)
                try:
                    raw = adapter.scan(temp_path, mset=mset, chart=chart_key)
                    resolved, _ = resolve_findings(raw, mset)
                    out.extend(resolved)
                finally:
                    temp_path.unlink(missing_ok=True)
        return out

    return rescan


class _StoredResponseError(ProviderError):
    pass


def _findings_with_ids(records: list[dict], registry) -> tuple[list[Finding], dict[int, str]]:
    """Rebuild Finding objects plus an identity map back to persisted ids."""
    findings = []
    fid_of: dict[int, str] = {}
    for record in records:
        f = finding_from_record(record, registry)
        findings.append(f)
        fid_of[id(f)] = record["finding_id"]
    return findings, fid_of


def stage_remediate(config: RunConfig, rd: RunDir) -> None:
    if config.skip_llm:
        rd.responses.touch()
        return
    provider = make_provider(config.provider_id, config.model, **config.provider_kwargs)
    stored = {r["finding_id"]: r for r in read_jsonl(rd.responses)}
    registry = rd.policy_registry()
    tools = _rescannable_tools(config)
    limiter = (
        TokenBucket(rate_per_sec=config.requests_per_minute / 60.0)
        if config.requests_per_minute
        else None
    )

    for chart_key, records in _ordered_chart_findings(rd, tools).items():
        slug = _slug_for_key(rd, chart_key)
        mset = parse_manifests((rd.manifests / f"{slug}.yaml").read_text())
        findings, fid_of = _findings_with_ids(records, registry)

        def query(prov, prompt):
            fid = fid_of[id(prompt.finding)]
            if fid in stored:
                record = stored[fid]
                if record.get("error"):
                    raise _StoredResponseError(record["error"])
                return record["raw_response"]
            try:
                raw = query_provider(
                    prov,
                    prompt,
                    timeout=config.query_timeout,
                    retries=config.query_retries,
                    backoff=config.query_backoff,
                    rate_limiter=limiter,
                )
                error = None
            except ProviderError as exc:
                raw = None
                error = str(exc) or FAILURE_PROVIDER
            record = {
                "finding_id": fid,
                "chart": prompt.finding.chart,
                "prompt": prompt.text,
                "raw_response": raw,
                "error": error,
                "provider_id": getattr(prov, "provider_id", "?"),
                "model": getattr(prov, "model", "?"),
                "timestamp": _now(),
            }
            write_jsonl(rd.responses, [record])
            stored[fid] = record
            if error:
                raise _StoredResponseError(error)
            return raw

        remediate_findings(mset, findings, provider, rescan=lambda ms: [], query=query)


def stage_verify(config: RunConfig, rd: RunDir) -> None:
    if config.skip_llm:
        rd.attempts.touch()
        return
    stored = {r["finding_id"]: r for r in read_jsonl(rd.responses)}
    already = {r["finding_id"] for r in read_jsonl(rd.attempts)}
    registry = rd.policy_registry()
    tools = _rescannable_tools(config)

    for chart_key, records in _ordered_chart_findings(rd, tools).items():
        if all(r["finding_id"] in already for r in records):
            continue
        slug = _slug_for_key(rd, chart_key)
        mset = parse_manifests((rd.manifests / f"{slug}.yaml").read_text())
        findings, fid_of = _findings_with_ids(records, registry)

        def query(provider, prompt):
            record = stored.get(fid_of[id(prompt.finding)])
            if record is None:
                raise StageError(
                    f"missing stored response for finding {fid_of[id(prompt.finding)]}; "
                    "re-run the remediate stage"
                )
            if record.get("error"):
                raise _StoredResponseError(record["error"])
            return record["raw_response"]

        chart_tools = {r["tool"] for r in records}
        rescan = _make_rescan(config, rd, chart_key, chart_tools)
        provider = make_provider(config.provider_id, config.model, **config.provider_kwargs)
        attempts, patched = remediate_findings(
            mset, findings, provider, rescan=rescan, query=query
        )
        (rd.patched / f"{slug}.yaml").write_text(patched.source_text)
        out_records = []
        for attempt in attempts:
            fid = fid_of[id(attempt.finding)]
            if fid in already:
                continue
            response_record = stored.get(fid, {})
            out_records.append(
                {
                    "finding_id": fid,
                    "chart": chart_key,
                    "tool": attempt.finding.policy.tool,
                    "policy_id": attempt.finding.policy.policy_id,
                    "canonical_key": attempt.finding.policy.equivalence_class,
                    "container": attempt.finding.location,
                    "prompt": attempt.prompt.text,
                    "raw_response": attempt.raw_response,
                    "extracted": attempt.extracted.raw_text if attempt.extracted else None,
                    "diff": attempt.diff.unified_text if attempt.diff else None,
                    "diff_empty": attempt.diff.is_empty if attempt.diff else None,
                    "outcome": attempt.outcome,
                    "failure_detail": attempt.failure_detail,
                    "regressions": [
                        list(f.key()) for f in attempt.regression_findings
                    ],
                    "provider_id": attempt.provider_id,
                    "model": response_record.get("model"),
                    "timestamp": response_record.get("timestamp"),
                }
            )
        write_jsonl(rd.attempts, out_records)


def stage_report(config: RunConfig, rd: RunDir) -> None:
    findings = rd.findings_as_objects()
    if not rd.sample.exists():
        requested = config.sample_size
        actual = min(requested, len(findings))
        sampled = sample_validation_subset(findings, actual, config.seed) if actual else []
        registry = rd.policy_registry()
        ids_by_key: dict[tuple, list[str]] = {}
        for record in rd.load_findings():
            key = finding_from_record(record, registry).key()
            ids_by_key.setdefault(key, []).append(record["finding_id"])
        sample_ids = sorted(ids_by_key[f.key()].pop(0) for f in sampled)
        rd.sample.write_text(
            json.dumps(
                {
                    "requested": requested,
                    "actual": actual,
                    "seed": config.seed,
                    "finding_ids": sample_ids,
                },
                indent=2,
            )
            + "\n"
        )
    emit_report(config, rd)


_STAGE_FUNCS = {
    "mine": stage_mine,
    "render": stage_render,
    "scan": stage_scan,
    "remediate": stage_remediate,
    "verify": stage_verify,
    "report": stage_report,
}


def pipeline_run(config: RunConfig, upto: str = "report", force: bool = False) -> list[str]:
    """Run stages in order up to ``upto``; returns the stages executed.

    Completed stages (marker present) are skipped unless force is set, in
    which case only the ``upto`` stage is re-run.
    """
    if upto not in STAGES:
        raise DomainError(f"unknown stage {upto!r}")
    rd = RunDir(config.run_dir).ensure()
    if not rd.run_meta.exists():
        rd.run_meta.write_text(
            json.dumps(
                {
                    "created_at": _now(),
                    "provider": config.provider_id,
                    "model": config.model,
                    "temperature": DEFAULT_TEMPERATURE,
                    "tools": list(config.tools),
                    "seed": config.seed,
                    "z": config.z,
                    "confidence": config.confidence,
                    "sample_size": config.sample_size,
                    "offline": config.offline,
                    "version": __version__,
                },
                indent=2,
            )
            + "\n"
        )
    executed = []
    with run_lock(rd):
        for stage in STAGES:
            if rd.stage_done(stage) and not (force and stage == upto):
                if stage == upto:
                    break
                continue
            _STAGE_FUNCS[stage](config, rd)
            rd.mark_done(stage)
            executed.append(stage)
            if stage == upto:
                break
    return executed


# --- manual validation labels ---------------------------------------------------

@dataclass(frozen=True)
class ValidationLabel:
    finding_id: str
    reviewer: str
    tool_verdict: str
    refactor_verdict: str | None = None
    note: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if self.tool_verdict not in TOOL_VERDICTS:
            raise DomainError(f"tool_verdict must be one of {TOOL_VERDICTS}")
        if self.refactor_verdict is not None and self.refactor_verdict not in REFACTOR_VERDICTS:
            raise DomainError(f"refactor_verdict must be one of {REFACTOR_VERDICTS}")


class LabelStore:
    """Append-only label history with last-write-wins active projection."""

    def __init__(self, rd: RunDir):
        self.rd = rd

    def sampled_ids(self) -> set[str]:
        if not self.rd.sample.exists():
            return set()
        return set(json.loads(self.rd.sample.read_text()).get("finding_ids", []))

    def known_ids(self) -> set[str]:
        return {r["finding_id"] for r in self.rd.load_findings()}

    def history(self) -> list[dict]:
        return read_jsonl(self.rd.labels)

    def record(self, label: ValidationLabel) -> dict:
        known = self.known_ids()
        if label.finding_id not in known:
            raise DomainError(f"unknown finding id {label.finding_id!r}")
        if label.finding_id not in self.sampled_ids():
            raise DomainError(
                f"finding {label.finding_id!r} is not in the sampled validation subset; "
                "labels are only accepted for sampled findings"
            )
        record = {
            "finding_id": label.finding_id,
            "reviewer": label.reviewer,
            "tool_verdict": label.tool_verdict,
            "refactor_verdict": label.refactor_verdict,
            "note": label.note,
            "timestamp": label.timestamp or _now(),
        }
        write_jsonl(self.rd.labels, [record])
        return record

    def active(self) -> dict[str, dict]:
        """Latest label per finding (across reviewers, file order = time order)."""
        out: dict[str, dict] = {}
        for record in self.history():
            out[record["finding_id"]] = record
        return out

    def active_for_reviewer(self, reviewer: str) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for record in self.history():
            if record["reviewer"] == reviewer:
                out[record["finding_id"]] = record
        return out


def record_label(run_dir: Path, label: ValidationLabel) -> dict:
    """Validate and append one manual-validation label."""
    return LabelStore(RunDir(run_dir)).record(label)
