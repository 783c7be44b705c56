#!/usr/bin/env python3
"""Run the full offline study over the bundled fixture charts.

Mines, renders, scans with the built-in analyzer, remediates with the mock
provider, verifies, and reports. Everything happens locally; no network, no
external scanner binaries, no API keys.

Usage:
    python scripts/run_offline_study.py [RUN_DIR]
"""

import json
import sys
from pathlib import Path

from chart_sentry.orchestrator import RunConfig, RunDir, pipeline_run

REPO = Path(__file__).resolve().parents[1]


def main() -> int:
    run_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else REPO / "runs" / "offline-demo"
    config = RunConfig(
        run_dir=run_dir,
        offline=True,
        charts_dir=REPO / "tests" / "fixtures" / "charts",
        tools=("builtin",),
        provider_id="mock",
        sample_size=10,
        seed=7,
    )
    executed = pipeline_run(config)
    rd = RunDir(run_dir)
    report = json.loads(rd.report_json.read_text())

    print(f"run dir:   {run_dir}")
    print(f"executed:  {', '.join(executed) if executed else '(resumed, nothing to do)'}")
    charts = report["run"]["charts"]
    print(f"charts:    {charts['eligible']}/{charts['mined']} eligible")
    for tool, entry in report["metrics"]["n_misc"].items():
        print(f"findings:  {tool}: {entry['total']}")
    pooled = report["metrics"]["llm"]["pooled"]
    if pooled["available"]:
        for key in ("correct", "wrong", "refused"):
            prop = pooled[key]
            ac = prop["agresti_coull"]
            print(
                f"LLM {key:8s} {prop['x']:3d}/{prop['n']:3d}"
                f"  point={prop['point']:.3f}  95% CI [{ac['lo']:.3f}, {ac['hi']:.3f}]"
            )
    print(f"report:    {rd.report_json}")
    print(f"review UI: chart-sentry review --run-dir {run_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
