"""Chart mining: hub search, archive caching, rendering, eligibility filtering.

The hub API is the Artifact-Hub-style REST surface
(``GET /api/v1/packages/search?kind=0&limit=..&offset=..`` plus per-package
detail endpoints); the base URL is configurable so tests can point at a
fixture server. Rendering shells out to ``helm template``; a chart directory
that already contains a pre-rendered manifest (``rendered.yaml``) is used
as-is, which keeps the whole pipeline runnable offline.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import subprocess
import tarfile
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests
import yaml

from .errors import (
    DecodeError,
    EnvironmentError_,
    IntegrityError,
    NotFoundError,
    RenderError,
    TransportError,
)
from .manifest import parse_manifests

DEFAULT_HUB_URL = "https://artifacthub.io"
HUB_URL_ENV = "CHART_SENTRY_HUB_URL"
PRERENDERED_NAMES = ("rendered.yaml", "rendered.yml", "manifest.yaml")


@dataclass(frozen=True)
class ChartRef:
    """Identity and provenance of one mined chart."""

    name: str
    repository: str
    version: str
    stars: int = 0
    package_id: str = ""

    def __post_init__(self):
        if self.stars < 0:
            raise ValueError("stars must be >= 0")

    @property
    def key(self) -> str:
        return f"{self.repository}/{self.name}@{self.version}"

    @property
    def slug(self) -> str:
        return f"{self.repository}__{self.name}__{self.version}".replace("/", "_")


@dataclass(frozen=True)
class ChartPackage:
    """A locally cached chart: tarball (online) or chart directory (offline)."""

    ref: ChartRef
    archive_path: Path
    content_digest: str


@dataclass(frozen=True)
class RenderedManifest:
    ref: ChartRef
    text: str
    line_count: int
    container_count: int


@dataclass(frozen=True)
class ExcludedChart:
    ref: ChartRef
    reason: str  # duplicate | render_failure | yaml_syntax_error | all_tools_failed
    detail: str = ""


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_path(path: Path) -> str:
    """Digest of a tarball's bytes, or of a directory's sorted file contents."""
    if path.is_file():
        return digest_bytes(path.read_bytes())
    hasher = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        hasher.update(str(child.relative_to(path)).encode())
        hasher.update(b"\0")
        hasher.update(child.read_bytes())
    return hasher.hexdigest()


class HubClient:
    """Minimal client for the chart hub's search/detail/content endpoints."""

    def __init__(
        self,
        base_url: str | None = None,
        session: requests.Session | None = None,
        request_timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
    ):
        self.base_url = (base_url or os.environ.get(HUB_URL_ENV) or DEFAULT_HUB_URL).rstrip("/")
        self.session = session or requests.Session()
        self.request_timeout = request_timeout
        self.retries = retries
        self.backoff = backoff

    def _get(self, path: str, params: dict | None = None) -> requests.Response:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self.session.get(url, params=params, timeout=self.request_timeout)
                if response.status_code in (404, 410):
                    raise NotFoundError(f"{url} -> {response.status_code}")
                if response.status_code >= 500:
                    raise TransportError(f"{url} -> {response.status_code}")
                response.raise_for_status()
                return response
            except (requests.ConnectionError, requests.Timeout, TransportError) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(f"hub endpoint unreachable: {url}") from last_exc

    def search_charts(
        self, page_size: int = 60, max_results: int | None = None
    ) -> list[ChartRef]:
        """Page through the search endpoint until exhaustion or max_results.

        Returns refs sorted by descending stars with duplicate
        (repository, name, version) triples removed.
        """
        if page_size <= 0:
            raise ValueError("page_size must be positive")
        refs: list[ChartRef] = []
        seen: set[tuple[str, str, str]] = set()
        offset = 0
        while True:
            response = self._get(
                "/api/v1/packages/search",
                params={"kind": 0, "limit": page_size, "offset": offset},
            )
            try:
                payload = response.json()
                packages = payload["packages"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DecodeError(f"malformed search response at offset {offset}: {exc}") from exc
            if not packages:
                break
            for pkg in packages:
                try:
                    ref = ChartRef(
                        name=str(pkg["name"]),
                        repository=str((pkg.get("repository") or {}).get("name", "")),
                        version=str(pkg.get("version", "")),
                        stars=int(pkg.get("stars") or 0),
                        package_id=str(pkg.get("package_id", "")),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise DecodeError(
                        f"malformed package entry at offset {offset}: {exc}"
                    ) from exc
                triple = (ref.repository, ref.name, ref.version)
                if triple in seen:
                    continue
                seen.add(triple)
                refs.append(ref)
                if max_results is not None and len(refs) >= max_results:
                    refs.sort(key=lambda r: -r.stars)
                    return refs
            offset += len(packages)
        refs.sort(key=lambda r: -r.stars)
        return refs

    def _content_url(self, ref: ChartRef) -> str:
        detail = self._get(f"/api/v1/packages/helm/{ref.repository}/{ref.name}/{ref.version}")
        try:
            payload = detail.json()
            url = payload["content_url"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DecodeError(f"malformed detail response for {ref.key}: {exc}") from exc
        if not url:
            raise NotFoundError(f"no content_url for {ref.key}")
        return str(url)

    def fetch_chart(self, ref: ChartRef, cache_dir: Path) -> ChartPackage:
        """Download the chart archive into cache_dir, once.

        A cached archive is verified against its recorded digest instead of
        being re-downloaded; bytes that no longer match raise IntegrityError.
        """
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        archive = cache_dir / f"{ref.slug}.tgz"
        sidecar = archive.with_suffix(".tgz.sha256")

        if archive.exists():
            digest = digest_bytes(archive.read_bytes())
            if sidecar.exists():
                recorded = sidecar.read_text().strip()
                if recorded != digest:
                    raise IntegrityError(
                        f"cached archive for {ref.key} does not match recorded digest"
                    )
            return ChartPackage(ref=ref, archive_path=archive, content_digest=digest)

        url = self._content_url(ref)
        if url.startswith("/"):
            url = f"{self.base_url}{url}"
        try:
            response = self.session.get(url, timeout=self.request_timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"chart download failed: {url}") from exc
        if response.status_code in (404, 410):
            raise NotFoundError(f"archive for {ref.key} not found ({response.status_code})")
        response.raise_for_status()
        data = response.content
        digest = digest_bytes(data)
        archive.write_bytes(data)
        sidecar.write_text(digest + "\n")
        return ChartPackage(ref=ref, archive_path=archive, content_digest=digest)


def dedupe(catalog: Sequence[ChartPackage]) -> list[ChartPackage]:
    """Keep the first package per content digest."""
    seen: set[str] = set()
    out: list[ChartPackage] = []
    for package in catalog:
        if package.content_digest in seen:
            continue
        seen.add(package.content_digest)
        out.append(package)
    return out


def package_from_dir(directory: Path, repository: str = "local", stars: int = 0) -> ChartPackage:
    """Build an offline ChartPackage from a chart directory with Chart.yaml."""
    directory = Path(directory)
    meta_path = directory / "Chart.yaml"
    meta = yaml.safe_load(meta_path.read_text()) if meta_path.exists() else {}
    meta = meta or {}
    ref = ChartRef(
        name=str(meta.get("name") or directory.name),
        repository=repository,
        version=str(meta.get("version") or "0.0.0"),
        stars=stars,
        package_id=directory.name,
    )
    return ChartPackage(ref=ref, archive_path=directory, content_digest=digest_path(directory))


def _count_containers(text: str) -> int:
    count = 0
    try:
        docs = list(yaml.safe_load_all(text))
    except yaml.YAMLError:
        docs = [d.tree for d in parse_manifests(text).docs]

    def walk(node):
        nonlocal count
        if isinstance(node, dict):
            for key, value in node.items():
                if key in ("containers", "initContainers") and isinstance(value, list):
                    count += len(value)
                walk(value)
        elif isinstance(node, list):
            for item in node:
                walk(item)

    for doc in docs:
        walk(doc)
    return count


def _find_prerendered(package: ChartPackage) -> Path | None:
    root = package.archive_path
    if not root.is_dir():
        return None
    for name in PRERENDERED_NAMES:
        candidate = root / name
        if candidate.exists():
            return candidate
    return None


def render_chart(
    package: ChartPackage,
    values_overrides: dict | None = None,
    helm_binary: str = "helm",
    release_name: str = "chart-sentry",
) -> RenderedManifest:
    """Render a chart to its multi-document manifest.

    Prefers a pre-rendered manifest file inside a chart directory (offline
    mode); otherwise unpacks the tarball if needed and runs
    ``helm template <release-name> <chart-dir>``.
    """
    prerendered = _find_prerendered(package)
    if prerendered is not None:
        text = prerendered.read_text()
        return _manifest_from_text(package.ref, text)

    if shutil.which(helm_binary) is None:
        raise EnvironmentError_(
            f"{helm_binary!r} not found and {package.ref.key} has no pre-rendered manifest"
        )

    with tempfile.TemporaryDirectory(prefix="chart-sentry-render-") as tmp:
        chart_dir = _chart_dir_for(package, Path(tmp))
        cmd = [helm_binary, "template", release_name, str(chart_dir)]
        for key, value in (values_overrides or {}).items():
            cmd.extend(["--set", f"{key}={value}"])
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RenderError(
                f"helm template failed for {package.ref.key} (exit {proc.returncode})",
                stderr=proc.stderr,
            )
        return _manifest_from_text(package.ref, proc.stdout)


def _chart_dir_for(package: ChartPackage, scratch: Path) -> Path:
    if package.archive_path.is_dir():
        return package.archive_path
    with tarfile.open(package.archive_path) as tar:
        tar.extractall(scratch)
    entries = [p for p in scratch.iterdir() if p.is_dir()]
    return entries[0] if len(entries) == 1 else scratch


def _manifest_from_text(ref: ChartRef, text: str) -> RenderedManifest:
    return RenderedManifest(
        ref=ref,
        text=text,
        line_count=len(text.splitlines()),
        container_count=_count_containers(text),
    )


RenderOutcome = RenderedManifest | RenderError


def filter_ineligible(
    catalog: Sequence[tuple[ChartPackage, RenderOutcome]],
    analyzer_probes: Sequence[Callable[[ChartPackage, RenderedManifest], object]] | None = None,
) -> tuple[list[tuple[ChartPackage, RenderedManifest]], list[ExcludedChart]]:
    """Partition rendered charts into eligible and excluded-with-reason.

    Reasons: duplicate (digest already seen), render_failure, yaml_syntax_error
    (any document in the manifest fails to parse), all_tools_failed (every
    probe raised). Size is never a reason.
    """
    eligible: list[tuple[ChartPackage, RenderedManifest]] = []
    excluded: list[ExcludedChart] = []
    seen_digests: set[str] = set()

    for package, outcome in catalog:
        if package.content_digest in seen_digests:
            excluded.append(ExcludedChart(package.ref, "duplicate"))
            continue
        seen_digests.add(package.content_digest)

        if isinstance(outcome, RenderError):
            excluded.append(ExcludedChart(package.ref, "render_failure", detail=str(outcome)))
            continue

        mset = parse_manifests(outcome.text)
        if mset.errors:
            excluded.append(
                ExcludedChart(
                    package.ref,
                    "yaml_syntax_error",
                    detail=mset.errors[0].message.splitlines()[0] if mset.errors else "",
                )
            )
            continue

        if analyzer_probes:
            failures = 0
            for probe in analyzer_probes:
                try:
                    probe(package, outcome)
                except Exception:
                    failures += 1
            if failures == len(analyzer_probes):
                excluded.append(ExcludedChart(package.ref, "all_tools_failed"))
                continue

        eligible.append((package, outcome))

    return eligible, excluded
