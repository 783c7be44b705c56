"""chart-sentry command line.

One subcommand per pipeline stage (mine, render, scan, remediate, verify,
report) plus `review` for the labeling service. Each stage command brings the
run up to that stage; completed stages are skipped, so commands can be chained
or re-run freely.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import ChartSentryError
from .orchestrator import RunConfig, pipeline_run
from .stats import z_for_confidence

STAGE_COMMANDS = ("mine", "render", "scan", "remediate", "verify", "report")


def run_options(fn):
    decorators = [
        click.option("--run-dir", required=True, type=click.Path(path_type=Path)),
        click.option("--offline/--online", default=True, show_default=True,
                     help="Offline runs use pre-rendered fixture charts."),
        click.option("--charts", type=click.Path(exists=True, path_type=Path),
                     help="Directory of chart directories (offline mode)."),
        click.option("--hub-url", default=None,
                     help="Chart hub base URL (or CHART_SENTRY_HUB_URL)."),
        click.option("--cache-dir", type=click.Path(path_type=Path), default=None),
        click.option("--max-charts", type=int, default=None),
        click.option("--tools", default="builtin", show_default=True,
                     help="Comma-separated analyzer list."),
        click.option("--provider", default="mock", show_default=True),
        click.option("--model", default=None),
        click.option("--confidence", type=float, default=0.95, show_default=True),
        click.option("--sample-size", type=int, default=0, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--skip-llm", is_flag=True, default=False),
        click.option("--requests-per-minute", type=float, default=None,
                     help="Token-bucket rate limit for remote providers."),
    ]
    for decorator in reversed(decorators):
        fn = decorator(fn)
    return fn


def _config(**kw) -> RunConfig:
    return RunConfig(
        run_dir=kw["run_dir"],
        offline=kw["offline"],
        charts_dir=kw.get("charts"),
        hub_url=kw.get("hub_url"),
        cache_dir=kw.get("cache_dir"),
        max_charts=kw.get("max_charts"),
        tools=tuple(t.strip() for t in kw["tools"].split(",") if t.strip()),
        provider_id=kw["provider"],
        model=kw.get("model"),
        confidence=kw["confidence"],
        z=z_for_confidence(kw["confidence"]),
        sample_size=kw["sample_size"],
        seed=kw["seed"],
        skip_llm=kw["skip_llm"],
        requests_per_minute=kw.get("requests_per_minute"),
    )


@click.group()
def main():
    """Scan Helm chart manifests, remediate findings with an LLM, report stats."""


def _stage_command(stage: str):
    @main.command(name=stage)
    @run_options
    def command(**kw):
        config = _config(**kw)
        try:
            executed = pipeline_run(config, upto=stage, force=(stage == "report"))
        except ChartSentryError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        if executed:
            click.echo(f"executed stages: {', '.join(executed)}")
        else:
            click.echo("all requested stages already complete")

    command.__doc__ = f"Run the pipeline through the {stage} stage."
    return command


for _stage in STAGE_COMMANDS:
    _stage_command(_stage)


@main.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--bind", default="127.0.0.1:8321", show_default=True)
@click.option("--blind", is_flag=True, default=False,
              help="Withhold tool identity from reviewers.")
@click.option("--ui-dir", type=click.Path(exists=True, path_type=Path), default=None)
def review(run_dir: Path, bind: str, blind: bool, ui_dir: Path | None):
    """Serve the manual-validation review API and triage UI."""
    from .review import serve_review

    try:
        serve_review(run_dir, bind=bind, blind=blind, ui_dir=ui_dir)
    except ChartSentryError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
