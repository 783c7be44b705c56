import json
import shutil
from pathlib import Path

import pytest

from chart_sentry.errors import DomainError, StageError
from chart_sentry.orchestrator import (
    LabelStore,
    RunConfig,
    RunDir,
    ValidationLabel,
    pipeline_run,
    record_label,
    run_lock,
)
from chart_sentry.stats import agresti_coull

from conftest import CHARTS, GOLDEN


def make_config(run_dir, **overrides) -> RunConfig:
    kwargs = dict(
        run_dir=run_dir,
        offline=True,
        charts_dir=CHARTS,
        tools=("builtin",),
        provider_id="mock",
        sample_size=10,
        seed=7,
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("run") / "golden"
    pipeline_run(make_config(run_dir))
    return run_dir


def artifact_bytes(run_dir: Path) -> dict[str, bytes]:
    rd = RunDir(run_dir)
    return {
        p.name: p.read_bytes()
        for p in (rd.catalog, rd.findings, rd.attempts, rd.responses, rd.sample, rd.report_json)
    }


def test_offline_pipeline_produces_golden_report(completed_run):
    report = RunDir(completed_run).report_json.read_bytes()
    assert report == (GOLDEN / "report.json").read_bytes()


def test_second_invocation_executes_nothing_and_changes_nothing(completed_run):
    before = artifact_bytes(completed_run)
    executed = pipeline_run(make_config(completed_run))
    assert executed == []
    assert artifact_bytes(completed_run) == before


def test_interrupted_run_resumes_without_duplicates(tmp_path):
    run_dir = tmp_path / "resumable"
    config = make_config(run_dir)
    pipeline_run(config, upto="scan")
    rd = RunDir(run_dir)
    count_after_scan = len(rd.load_findings())
    assert not rd.stage_done("remediate")

    executed = pipeline_run(config)
    assert executed == ["remediate", "verify", "report"]
    assert len(rd.load_findings()) == count_after_scan
    attempts = rd.attempts.read_text().splitlines()
    assert len(attempts) == count_after_scan
    assert rd.report_json.read_bytes() == (GOLDEN / "report.json").read_bytes()


def test_per_finding_remediation_resume(tmp_path):
    run_dir = tmp_path / "partial"
    config = make_config(run_dir)
    pipeline_run(config, upto="scan")
    rd = RunDir(run_dir)

    # simulate a crash mid-remediation: only half the responses were persisted
    from chart_sentry.orchestrator import stage_remediate

    stage_remediate(config, rd)
    responses = rd.responses.read_text().splitlines()
    rd.responses.write_text("\n".join(responses[: len(responses) // 2]) + "\n")
    kept = len(responses) // 2

    executed = pipeline_run(config)
    final = rd.responses.read_text().splitlines()
    assert len(final) == len(responses)
    # the previously stored half was reused verbatim, not re-queried
    assert final[:kept] == responses[:kept]


def test_scan_only_run_with_skip_llm(tmp_path):
    run_dir = tmp_path / "scan-only"
    pipeline_run(make_config(run_dir, skip_llm=True, sample_size=0))
    rd = RunDir(run_dir)
    assert rd.attempts.read_text() == ""
    report = json.loads(rd.report_json.read_text())
    assert report["metrics"]["llm"]["pooled"]["available"] is False
    assert report["metrics"]["llm"]["pooled"]["correct"] is None
    assert report["metrics"]["n_misc"]["builtin"]["total"] == 19


def test_unavailable_tool_marked_skipped(tmp_path, monkeypatch):
    run_dir = tmp_path / "missing-tool"
    monkeypatch.setenv("PATH", "/usr/bin:/bin")  # no scanners on PATH
    pipeline_run(make_config(run_dir, tools=("builtin", "checkov"), skip_llm=True))
    report = json.loads(RunDir(run_dir).report_json.read_text())
    assert report["run"]["tools_skipped"] == ["checkov"]
    assert report["metrics"]["n_misc"]["builtin"]["total"] == 19


def test_lock_excludes_concurrent_runs(tmp_path):
    run_dir = tmp_path / "locked"
    rd = RunDir(run_dir).ensure()
    with run_lock(rd):
        with pytest.raises(StageError, match="locked"):
            pipeline_run(make_config(run_dir))
    # lock released: now it runs
    executed = pipeline_run(make_config(run_dir))
    assert executed


def test_unknown_tool_rejected(tmp_path):
    with pytest.raises(DomainError):
        make_config(tmp_path, tools=("builtin", "imaginary"))


def test_sample_is_subset_of_findings(completed_run):
    rd = RunDir(completed_run)
    sample = json.loads(rd.sample.read_text())
    finding_ids = {r["finding_id"] for r in rd.load_findings()}
    assert set(sample["finding_ids"]) <= finding_ids
    assert len(sample["finding_ids"]) == sample["actual"] == 10


# --- labels ---------------------------------------------------------------------

@pytest.fixture
def labeled_run(completed_run, tmp_path):
    run_dir = tmp_path / "labels"
    shutil.copytree(completed_run, run_dir)
    (run_dir / "lock").unlink(missing_ok=True)
    (run_dir / "labels.jsonl").unlink(missing_ok=True)
    return run_dir


def sampled_ids(run_dir):
    return json.loads((Path(run_dir) / "sample.json").read_text())["finding_ids"]


def test_record_label_counts_tp(labeled_run):
    fid = sampled_ids(labeled_run)[0]
    record_label(labeled_run, ValidationLabel(fid, "alice", "true_positive"))
    store = LabelStore(RunDir(labeled_run))
    active = store.active()
    assert active[fid]["tool_verdict"] == "true_positive"


def test_label_supersession_keeps_history(labeled_run):
    fid = sampled_ids(labeled_run)[0]
    record_label(labeled_run, ValidationLabel(fid, "alice", "false_positive"))
    record_label(labeled_run, ValidationLabel(fid, "alice", "true_positive"))
    store = LabelStore(RunDir(labeled_run))
    assert len(store.history()) == 2
    assert store.active()[fid]["tool_verdict"] == "true_positive"


def test_label_unknown_finding_rejected(labeled_run):
    with pytest.raises(DomainError, match="unknown finding"):
        record_label(labeled_run, ValidationLabel("doesnotexist", "alice", "true_positive"))


def test_label_unsampled_finding_rejected(labeled_run):
    rd = RunDir(labeled_run)
    sampled = set(sampled_ids(labeled_run))
    unsampled = [r["finding_id"] for r in rd.load_findings() if r["finding_id"] not in sampled]
    assert unsampled, "fixture needs at least one unsampled finding"
    with pytest.raises(DomainError, match="not in the sampled"):
        record_label(labeled_run, ValidationLabel(unsampled[0], "alice", "true_positive"))


def test_label_validation_enums():
    with pytest.raises(DomainError):
        ValidationLabel("x", "alice", "maybe")
    with pytest.raises(DomainError):
        ValidationLabel("x", "alice", "true_positive", refactor_verdict="sideways")


def test_seven_tp_three_fp_interval_matches_stats_oracle(labeled_run):
    ids = sampled_ids(labeled_run)
    for fid in ids[:7]:
        record_label(labeled_run, ValidationLabel(fid, "alice", "true_positive"))
    for fid in ids[7:10]:
        record_label(labeled_run, ValidationLabel(fid, "alice", "false_positive"))

    from chart_sentry.report import emit_report

    report = emit_report(make_config(labeled_run), RunDir(labeled_run))
    t_tp = report["metrics"]["manual"]["t_tp"]
    oracle = agresti_coull(7, 10, 1.96)
    assert t_tp["x"] == 7 and t_tp["n"] == 10
    assert t_tp["agresti_coull"]["lo"] == pytest.approx(oracle.lo, abs=1e-12)
    assert t_tp["agresti_coull"]["hi"] == pytest.approx(oracle.hi, abs=1e-12)


def test_report_counts_equal_bruteforce_tallies(labeled_run):
    ids = sampled_ids(labeled_run)
    for i, fid in enumerate(ids):
        verdict = "true_positive" if i % 2 == 0 else "false_positive"
        refactor = ["correct", "wrong", "refused"][i % 3]
        record_label(labeled_run, ValidationLabel(fid, "bob", verdict, refactor_verdict=refactor))

    from chart_sentry.report import emit_report

    rd = RunDir(labeled_run)
    report = emit_report(make_config(labeled_run), rd)
    history = [json.loads(line) for line in rd.labels.read_text().splitlines()]
    active = {}
    for record in history:
        active[record["finding_id"]] = record
    tp = sum(1 for r in active.values() if r["tool_verdict"] == "true_positive")
    assert report["metrics"]["manual"]["t_tp"]["x"] == tp
    attempts = [json.loads(line) for line in rd.attempts.read_text().splitlines()]
    classified = [a for a in attempts if a["outcome"]]
    assert report["metrics"]["llm"]["pooled"]["classified"] == len(classified)
    correct = sum(1 for a in classified if a["outcome"] == "Correct")
    assert report["metrics"]["llm"]["pooled"]["correct"]["x"] == correct


def test_zero_finding_run_reports_explicit_zeros(tmp_path):
    empty_charts = tmp_path / "charts"
    chart = empty_charts / "inert"
    chart.mkdir(parents=True)
    (chart / "Chart.yaml").write_text("name: inert\nversion: 1.0.0\n")
    (chart / "rendered.yaml").write_text(
        "---\napiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: cm\n  namespace: apps\n"
    )
    run_dir = tmp_path / "empty-run"
    pipeline_run(make_config(run_dir, charts_dir=empty_charts, sample_size=0))
    report = json.loads(RunDir(run_dir).report_json.read_text())
    assert report["metrics"]["n_misc"] == {"builtin": {"total": 0, "by_policy": {}}}
    assert report["metrics"]["u_pol"] == {"builtin": {"count": 0, "keys": []}}
    assert report["metrics"]["llm"]["pooled"]["available"] is False


def test_rate_limited_remediation(tmp_path, monkeypatch):
    sleeps = []
    import chart_sentry.providers as providers_module

    class InstantBucket(providers_module.TokenBucket):
        def __init__(self, rate_per_sec, capacity=1):
            super().__init__(rate_per_sec, capacity, sleep=lambda dt: sleeps.append(dt))

    monkeypatch.setattr("chart_sentry.orchestrator.TokenBucket", InstantBucket)
    run_dir = tmp_path / "limited"
    pipeline_run(make_config(run_dir, requests_per_minute=600.0))
    # 19 findings -> at least some acquisitions had to wait on the bucket
    assert len(sleeps) >= 1
    assert RunDir(run_dir).report_json.read_bytes() == (GOLDEN / "report.json").read_bytes()
