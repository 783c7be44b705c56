"""Report emission: the recorded metrics as JSON, CSV, and Markdown.

Field order is fixed and every collection is sorted, so a run with identical
inputs produces byte-identical reports (the golden-file tests rely on this;
wall-clock values deliberately never appear here). Both interval methods are
reported for every proportion; metrics whose denominator does not exist yet
are marked unavailable rather than zero.
"""

from __future__ import annotations

import csv
import io
import json

from .findings import EquivalenceMap, count_misconfigurations, read_jsonl, unique_policies
from .remediation import FAILURE_PROVIDER
from .stats import agresti_coull, wilson


def _proportion(x: int, n: int, z: float) -> dict:
    ac = agresti_coull(x, n, z)
    wil = wilson(x, n, z)
    return {
        "x": x,
        "n": n,
        "z": z,
        "point": x / n,
        "agresti_coull": {"lo": ac.lo, "hi": ac.hi},
        "wilson": {"lo": wil.lo, "hi": wil.hi},
    }


def _outcome_block(outcomes: dict[str, int], provider_errors: int, z: float) -> dict:
    n = sum(outcomes.values())
    block: dict = {
        "attempted": n + provider_errors,
        "classified": n,
        "provider_errors": provider_errors,
        "available": n > 0,
    }
    for label, key in (("Correct", "correct"), ("Wrong", "wrong"), ("Refused", "refused")):
        block[key] = _proportion(outcomes.get(label, 0), n, z) if n else None
    return block


def build_report(config, rd) -> dict:
    findings = rd.findings_as_objects()
    attempts = read_jsonl(rd.attempts)
    eq_map = EquivalenceMap.bundled()

    catalog = json.loads(rd.catalog.read_text()) if rd.catalog.exists() else []
    excluded: dict[str, int] = {}
    for entry in catalog:
        if entry.get("excluded"):
            excluded[entry["excluded"]] = excluded.get(entry["excluded"], 0) + 1

    counts = count_misconfigurations(findings)
    for tool in config.tools:
        counts.setdefault(tool, {"by_policy": {}, "total": 0})
    n_misc = {
        tool: {
            "total": entry["total"],
            "by_policy": dict(sorted(entry["by_policy"].items())),
        }
        for tool, entry in sorted(counts.items())
    }
    uniques = unique_policies(findings, eq_map)
    for tool in config.tools:
        uniques.setdefault(tool, set())
    u_pol = {tool: {"count": len(keys), "keys": sorted(keys)} for tool, keys in sorted(uniques.items())}

    quarantined: dict[str, int] = {}
    for record in read_jsonl(rd.quarantine):
        quarantined[record["tool"]] = quarantined.get(record["tool"], 0) + 1

    z = config.z
    per_tool_outcomes: dict[str, dict[str, int]] = {}
    per_tool_errors: dict[str, int] = {}
    pooled_outcomes: dict[str, int] = {}
    pooled_errors = 0
    for attempt in attempts:
        tool = attempt["tool"]
        if attempt.get("failure_detail") == FAILURE_PROVIDER:
            per_tool_errors[tool] = per_tool_errors.get(tool, 0) + 1
            pooled_errors += 1
            continue
        outcome = attempt.get("outcome")
        if outcome:
            per_tool_outcomes.setdefault(tool, {})
            per_tool_outcomes[tool][outcome] = per_tool_outcomes[tool].get(outcome, 0) + 1
            pooled_outcomes[outcome] = pooled_outcomes.get(outcome, 0) + 1

    llm = {
        "pooled": _outcome_block(pooled_outcomes, pooled_errors, z),
        "per_tool": {
            tool: _outcome_block(
                per_tool_outcomes.get(tool, {}), per_tool_errors.get(tool, 0), z
            )
            for tool in sorted(set(per_tool_outcomes) | set(per_tool_errors))
        },
    }

    # manual validation metrics from the active label projection
    from .orchestrator import LabelStore

    store = LabelStore(rd)
    active = store.active()
    labeled = len(active)
    manual: dict = {"available": labeled > 0, "labeled": labeled}
    if labeled:
        tp = sum(1 for r in active.values() if r["tool_verdict"] == "true_positive")
        fp = sum(1 for r in active.values() if r["tool_verdict"] == "false_positive")
        manual["t_tp"] = _proportion(tp, labeled, z)
        manual["t_fp"] = _proportion(fp, labeled, z)
        with_refactor = [r for r in active.values() if r.get("refactor_verdict")]
        if with_refactor:
            n_ref = len(with_refactor)
            for verdict, key in (
                ("correct", "llm_i_c"),
                ("wrong", "llm_i_w"),
                ("refused", "llm_i_r"),
            ):
                x = sum(1 for r in with_refactor if r["refactor_verdict"] == verdict)
                manual[key] = _proportion(x, n_ref, z)
        else:
            manual["llm_i_c"] = manual["llm_i_w"] = manual["llm_i_r"] = None
    else:
        manual["t_tp"] = manual["t_fp"] = None
        manual["llm_i_c"] = manual["llm_i_w"] = manual["llm_i_r"] = None

    tool_versions = (
        json.loads(rd.tool_versions.read_text()) if rd.tool_versions.exists() else {}
    )
    skipped = sorted(
        {
            record["tool"]
            for record in read_jsonl(rd.scan_progress)
            if record.get("status") == "unavailable"
        }
    )
    sample_meta = json.loads(rd.sample.read_text()) if rd.sample.exists() else {}

    return {
        "schema_version": 1,
        "run": {
            "provider": config.provider_id,
            "model": config.model,
            "seed": config.seed,
            "z": z,
            "confidence": config.confidence,
            "tools": sorted(config.tools),
            "tools_skipped": skipped,
            "tool_versions": dict(sorted(tool_versions.items())),
            "sample": {
                "requested": sample_meta.get("requested", config.sample_size),
                "actual": sample_meta.get("actual", 0),
            },
            "charts": {
                "mined": len(catalog),
                "eligible": sum(1 for e in catalog if not e.get("excluded")),
                "excluded": dict(sorted(excluded.items())),
            },
        },
        "metrics": {
            "n_misc": n_misc,
            "u_pol": u_pol,
            "quarantined": dict(sorted(quarantined.items())),
            "llm": llm,
            "manual": manual,
        },
    }


def _csv_rows(report: dict) -> list[list]:
    rows: list[list] = [["rq", "metric", "tool", "value", "x", "n", "point", "lo", "hi"]]

    def prop_row(rq, metric, tool, prop):
        if prop is None:
            rows.append([rq, metric, tool, "unavailable", "", "", "", "", ""])
        else:
            rows.append(
                [
                    rq, metric, tool, "",
                    prop["x"], prop["n"],
                    f"{prop['point']:.6f}",
                    f"{prop['agresti_coull']['lo']:.6f}",
                    f"{prop['agresti_coull']['hi']:.6f}",
                ]
            )

    metrics = report["metrics"]
    for tool, entry in metrics["n_misc"].items():
        rows.append(["RQ1", "N_MISC", tool, entry["total"], "", "", "", "", ""])
    for tool, entry in metrics["u_pol"].items():
        rows.append(["RQ1", "U_POL", tool, entry["count"], "", "", "", "", ""])
    for tool, block in [("pooled", metrics["llm"]["pooled"])] + sorted(
        metrics["llm"]["per_tool"].items()
    ):
        prop_row("RQ2", "LLM_C", tool, block["correct"])
        prop_row("RQ2", "LLM_W", tool, block["wrong"])
        prop_row("RQ2", "LLM_R", tool, block["refused"])
    manual = metrics["manual"]
    prop_row("RQ3", "T_TP", "all", manual["t_tp"])
    prop_row("RQ3", "T_FP", "all", manual["t_fp"])
    prop_row("RQ3", "LLM_I_C", "all", manual["llm_i_c"])
    prop_row("RQ3", "LLM_I_W", "all", manual["llm_i_w"])
    prop_row("RQ3", "LLM_I_R", "all", manual["llm_i_r"])
    return rows


def _markdown(report: dict) -> str:
    rows = _csv_rows(report)
    header, body = rows[0], rows[1:]
    lines = ["# Run metrics", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for row in body:
        lines.append("| " + " | ".join(str(v) for v in row) + " |")
    lines.append("")
    return "\n".join(lines)


def emit_report(config, rd) -> dict:
    report = build_report(config, rd)
    payload = json.dumps(report, indent=2) + "\n"
    if not rd.report_json.exists() or rd.report_json.read_text() != payload:
        rd.report_json.write_text(payload)
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerows(_csv_rows(report))
    rd.report_csv.write_text(buffer.getvalue())
    rd.report_md.write_text(_markdown(report))
    return report
