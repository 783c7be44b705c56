"""HTTP review service for the manual-validation workflow.

Serves the sampled findings queue, accepts reviewer verdicts, and reports
live progress with interval estimates. The static triage UI bundle is served
from the frontend build directory (override with CHART_SENTRY_UI_DIR).
All mutations go through the same append-only label store as record_label;
concurrent reviewers are last-write-wins with full history retained.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, HTMLResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import DomainError, StageError
from .findings import read_jsonl
from .manifest import parse_manifests
from .orchestrator import LabelStore, RunDir, ValidationLabel
from .report import _proportion

UI_DIR_ENV = "CHART_SENTRY_UI_DIR"

_PLACEHOLDER = """<!doctype html>
<html><head><title>chart-sentry review</title></head>
<body>
<h1>chart-sentry review service</h1>
<p>The triage UI bundle is not built. Run <code>npm install && npm run build</code>
inside <code>frontend/</code>, or point CHART_SENTRY_UI_DIR at a build.</p>
<p>The JSON API is live: <a href="/api/progress">/api/progress</a></p>
</body></html>
"""


class LabelBody(BaseModel):
    finding_id: str
    reviewer: str
    tool_verdict: str
    refactor_verdict: str | None = None
    note: str = ""


def _default_ui_dir() -> Path | None:
    env = os.environ.get(UI_DIR_ENV)
    if env:
        return Path(env)
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.exists() else None


class ReviewService:
    def __init__(self, run_dir: Path, blind: bool = False):
        self.rd = RunDir(Path(run_dir))
        self.store = LabelStore(self.rd)
        self.blind = blind
        if not self.rd.sample.exists():
            raise StageError(
                f"{self.rd.sample} not found; run the report stage to draw the "
                "validation sample first"
            )
        self._findings = {r["finding_id"]: r for r in self.rd.load_findings()}
        self._attempts = {r["finding_id"]: r for r in read_jsonl(self.rd.attempts)}
        self._z = self._run_z()
        self._snippets = self._load_snippets()

    def _run_z(self) -> float:
        if self.rd.run_meta.exists():
            return json.loads(self.rd.run_meta.read_text()).get("z", 1.96)
        return 1.96

    def _load_snippets(self) -> dict[str, str]:
        """finding_id -> resource snippet text, located in the rendered manifest."""
        catalog = json.loads(self.rd.catalog.read_text()) if self.rd.catalog.exists() else []
        slug_by_key = {}
        for entry in catalog:
            key = f"{entry['repository']}/{entry['name']}@{entry['version']}"
            slug = f"{entry['repository']}__{entry['name']}__{entry['version']}".replace("/", "_")
            slug_by_key[key] = slug
        sets = {}
        snippets = {}
        for fid, record in self._findings.items():
            slug = slug_by_key.get(record.get("chart") or "")
            if slug is None:
                continue
            if slug not in sets:
                path = self.rd.manifests / f"{slug}.yaml"
                if not path.exists():
                    continue
                sets[slug] = parse_manifests(path.read_text())
            mset = sets[slug]
            for doc in mset.docs:
                if (
                    doc.id.kind == record["kind"]
                    and doc.id.name == record["name"]
                    and doc.id.normalized_namespace == record.get("namespace", "default")
                ):
                    snippets[fid] = doc.raw_text
                    break
        return snippets

    def sampled_ids(self) -> list[str]:
        return sorted(self.store.sampled_ids())

    def queue(self, reviewer: str) -> list[dict]:
        active = self.store.active_for_reviewer(reviewer) if reviewer else {}
        items = []
        for fid in self.sampled_ids():
            record = self._findings.get(fid)
            if record is None:
                continue
            attempt = self._attempts.get(fid)
            label = active.get(fid)
            items.append(
                {
                    "finding_id": fid,
                    "chart": record.get("chart"),
                    "tool": None if self.blind else record["tool"],
                    "policy_id": None if self.blind else record["policy_id"],
                    "description": self._description(record),
                    "severity": record.get("severity", ""),
                    "resource": {
                        "kind": record["kind"],
                        "name": record["name"],
                        "namespace": record.get("namespace", ""),
                        "container": record.get("container"),
                    },
                    "snippet": self._snippets.get(fid),
                    "diff": attempt.get("diff") if attempt else None,
                    "outcome": attempt.get("outcome") if attempt else None,
                    "label": {
                        "tool_verdict": label["tool_verdict"],
                        "refactor_verdict": label.get("refactor_verdict"),
                        "note": label.get("note", ""),
                    }
                    if label
                    else None,
                }
            )
        return items

    def _description(self, record: dict) -> str:
        registry = self.rd.policy_registry()
        return registry.get((record["tool"], record["policy_id"]), record["policy_id"])

    def progress(self) -> dict:
        active = self.store.active()
        sampled = self.store.sampled_ids()
        active = {fid: r for fid, r in active.items() if fid in sampled}
        labeled = len(active)
        out = {
            "labeled": labeled,
            "total": len(sampled),
            "t_tp": None,
            "t_fp": None,
            "llm_i_c": None,
            "llm_i_w": None,
            "llm_i_r": None,
        }
        if labeled:
            tp = sum(1 for r in active.values() if r["tool_verdict"] == "true_positive")
            out["t_tp"] = _proportion(tp, labeled, self._z)
            out["t_fp"] = _proportion(labeled - tp, labeled, self._z)
            with_refactor = [r for r in active.values() if r.get("refactor_verdict")]
            if with_refactor:
                n = len(with_refactor)
                for verdict, key in (
                    ("correct", "llm_i_c"),
                    ("wrong", "llm_i_w"),
                    ("refused", "llm_i_r"),
                ):
                    x = sum(1 for r in with_refactor if r["refactor_verdict"] == verdict)
                    out[key] = _proportion(x, n, self._z)
        return out


def create_app(run_dir: Path, blind: bool = False, ui_dir: Path | None = None) -> FastAPI:
    service = ReviewService(run_dir, blind=blind)
    app = FastAPI(title="chart-sentry review")
    app.state.service = service

    @app.get("/api/queue")
    def get_queue(reviewer: str = Query(default="")):
        return {"items": service.queue(reviewer), "total": len(service.sampled_ids())}

    @app.post("/api/labels")
    def post_label(body: LabelBody):
        try:
            label = ValidationLabel(
                finding_id=body.finding_id,
                reviewer=body.reviewer,
                tool_verdict=body.tool_verdict,
                refactor_verdict=body.refactor_verdict,
                note=body.note,
            )
        except DomainError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            record = service.store.record(label)
        except DomainError as exc:
            status = 404 if "unknown finding" in str(exc) else 400
            raise HTTPException(status_code=status, detail=str(exc)) from exc
        return {"saved": record, "progress": service.progress()}

    @app.get("/api/progress")
    def get_progress():
        return service.progress()

    resolved_ui = ui_dir or _default_ui_dir()
    if resolved_ui and resolved_ui.exists():
        index = resolved_ui / "index.html"

        @app.get("/", response_class=FileResponse)
        def root():
            return FileResponse(index)

        app.mount("/ui", StaticFiles(directory=resolved_ui), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def root_placeholder():
            return HTMLResponse(_PLACEHOLDER)

    return app


def serve_review(
    run_dir: Path,
    bind: str = "127.0.0.1:8321",
    blind: bool = False,
    ui_dir: Path | None = None,
) -> None:
    """Run the review service until interrupted."""
    import socket

    import uvicorn

    host, _, port_text = bind.partition(":")
    host = host or "127.0.0.1"
    port = int(port_text or "8321")
    probe = socket.socket()
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise StageError(f"cannot bind review service to {bind}: {exc}") from exc
    finally:
        probe.close()
    app = create_app(run_dir, blind=blind, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except (OSError, SystemExit) as exc:
        # uvicorn turns startup failures into SystemExit; surface them as ours
        raise StageError(f"review service failed to start on {bind}: {exc}") from exc
