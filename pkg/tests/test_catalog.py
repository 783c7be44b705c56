import hashlib
import io
import os
import stat
import tarfile
from pathlib import Path

import pytest

from chart_sentry.catalog import (
    ChartPackage,
    ChartRef,
    HubClient,
    RenderedManifest,
    dedupe,
    digest_path,
    filter_ineligible,
    package_from_dir,
    render_chart,
)
from chart_sentry.errors import (
    DecodeError,
    EnvironmentError_,
    IntegrityError,
    NotFoundError,
    RenderError,
    TransportError,
)

from conftest import CHARTS


def hub_packages(count, stars=None):
    return [
        {
            "package_id": f"pkg-{i}",
            "name": f"chart-{i}",
            "stars": stars[i] if stars else (100 - i),
            "version": "1.0.0",
            "repository": {"name": f"repo-{i % 2}"},
        }
        for i in range(count)
    ]


def paged(packages, page_size):
    def responder(path):
        from urllib.parse import parse_qs, urlparse

        query = parse_qs(urlparse(path).query)
        offset = int(query.get("offset", ["0"])[0])
        limit = int(query.get("limit", [str(page_size)])[0])
        return 200, {"packages": packages[offset : offset + limit]}

    return responder


def test_search_empty_hub(http_server):
    http_server.route("/api/v1/packages/search", paged([], 2))
    client = HubClient(base_url=http_server.url)
    assert client.search_charts(page_size=2) == []


def test_search_paginates_and_orders_by_stars(http_server):
    packages = hub_packages(6, stars=[5, 50, 1, 30, 10, 2])
    http_server.route("/api/v1/packages/search", paged(packages, 2))
    client = HubClient(base_url=http_server.url)
    refs = client.search_charts(page_size=2)
    assert len(refs) == 6
    assert [r.stars for r in refs] == [50, 30, 10, 5, 2, 1]
    search_calls = [p for p in http_server.requests if "search" in p]
    assert len(search_calls) == 4  # 3 full pages + the empty terminator page


def test_search_completeness_any_page_size(http_server):
    packages = hub_packages(7)
    http_server.route("/api/v1/packages/search", paged(packages, 3))
    for page_size in (1, 2, 3, 5, 7, 50):
        http_server.requests.clear()
        client = HubClient(base_url=http_server.url)
        refs = client.search_charts(page_size=page_size)
        assert len(refs) == 7, f"page_size={page_size}"


def test_search_respects_max_results(http_server):
    http_server.route("/api/v1/packages/search", paged(hub_packages(10), 4))
    client = HubClient(base_url=http_server.url)
    refs = client.search_charts(page_size=4, max_results=5)
    assert len(refs) == 5


def test_search_dedupes_repeated_triples(http_server):
    packages = hub_packages(3) + hub_packages(3)
    http_server.route("/api/v1/packages/search", paged(packages, 4))
    client = HubClient(base_url=http_server.url)
    refs = client.search_charts(page_size=4)
    assert len(refs) == 3


def test_search_malformed_page_names_offset(http_server):
    http_server.route("/api/v1/packages/search", lambda path: (200, {"nope": 1}))
    client = HubClient(base_url=http_server.url)
    with pytest.raises(DecodeError, match="offset 0"):
        client.search_charts(page_size=2)


def test_unreachable_endpoint_is_transport_error():
    client = HubClient(base_url="http://127.0.0.1:1", retries=0)
    with pytest.raises(TransportError):
        client.search_charts(page_size=2)


def make_tarball() -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        data = b"apiVersion: v2\nname: demo\nversion: 1.0.0\n"
        info = tarfile.TarInfo("demo/Chart.yaml")
        info.size = len(data)
        tar.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def test_fetch_chart_idempotent_and_digest_matches_oracle(http_server, tmp_path):
    blob = make_tarball()
    ref = ChartRef(name="demo", repository="repo", version="1.0.0", package_id="p1")
    http_server.route(
        "/api/v1/packages/helm/repo/demo/1.0.0",
        lambda path: (200, {"content_url": f"{http_server.url}/archives/demo.tgz"}),
    )
    http_server.route("/archives/demo.tgz", lambda path: (200, blob.decode("latin-1")))
    client = HubClient(base_url=http_server.url)

    first = client.fetch_chart(ref, tmp_path)
    second = client.fetch_chart(ref, tmp_path)
    assert first.content_digest == second.content_digest
    archives = [p for p in tmp_path.iterdir() if p.suffix == ".tgz"]
    assert len(archives) == 1
    # oracle: digest computed by an independent utility over the cached bytes
    expected = hashlib.sha256(archives[0].read_bytes()).hexdigest()
    assert first.content_digest == expected
    download_calls = [p for p in http_server.requests if "archives" in p]
    assert len(download_calls) == 1


def test_fetch_chart_missing_archive_raises_not_found(http_server, tmp_path):
    ref = ChartRef(name="gone", repository="repo", version="1.0.0")
    http_server.route(
        "/api/v1/packages/helm/repo/gone/1.0.0",
        lambda path: (404, {}),
    )
    client = HubClient(base_url=http_server.url)
    with pytest.raises(NotFoundError):
        client.fetch_chart(ref, tmp_path)


def test_fetch_chart_detects_cache_tampering(http_server, tmp_path):
    blob = make_tarball()
    ref = ChartRef(name="demo", repository="repo", version="1.0.0")
    http_server.route(
        "/api/v1/packages/helm/repo/demo/1.0.0",
        lambda path: (200, {"content_url": f"{http_server.url}/archives/demo.tgz"}),
    )
    http_server.route("/archives/demo.tgz", lambda path: (200, blob.decode("latin-1")))
    client = HubClient(base_url=http_server.url)
    package = client.fetch_chart(ref, tmp_path)
    package.archive_path.write_bytes(b"corrupted")
    with pytest.raises(IntegrityError):
        client.fetch_chart(ref, tmp_path)


def make_package(digest: str, name: str = "c") -> ChartPackage:
    return ChartPackage(
        ref=ChartRef(name=name, repository="r", version="1.0.0"),
        archive_path=Path(f"/nonexistent/{name}.tgz"),
        content_digest=digest,
    )


def test_dedupe_keeps_first_per_digest():
    packages = [make_package("d1", "a"), make_package("d2", "b"), make_package("d1", "c"),
                make_package("d3", "d"), make_package("d2", "e")]
    out = dedupe(packages)
    assert [p.ref.name for p in out] == ["a", "b", "d"]


def test_dedupe_identity_cases():
    assert dedupe([]) == []
    packages = [make_package("d1", "a"), make_package("d2", "b")]
    assert dedupe(packages) == packages
    assert dedupe(dedupe(packages)) == dedupe(packages)


def test_identical_dirs_share_digest(tmp_path):
    for name in ("one", "two"):
        d = tmp_path / name
        d.mkdir()
        (d / "Chart.yaml").write_text("name: same\nversion: 1.0.0\n")
    assert digest_path(tmp_path / "one") == digest_path(tmp_path / "two")


def test_render_offline_from_prerendered_manifest():
    package = package_from_dir(CHARTS / "busybox")
    rendered = render_chart(package)
    text = (CHARTS / "busybox" / "rendered.yaml").read_text()
    assert rendered.text == text
    assert rendered.line_count == len(text.splitlines())
    assert rendered.container_count == 1


def test_render_is_deterministic():
    package = package_from_dir(CHARTS / "worker")
    assert render_chart(package).text == render_chart(package).text


def test_render_counts_containers_across_documents(tmp_path):
    chart = tmp_path / "multi"
    chart.mkdir()
    (chart / "Chart.yaml").write_text("name: multi\nversion: 0.1.0\n")
    (chart / "rendered.yaml").write_text(
        "---\napiVersion: v1\nkind: Pod\nmetadata:\n  name: a\nspec:\n"
        "  containers:\n  - name: one\n  - name: two\n"
        "  initContainers:\n  - name: init\n"
    )
    rendered = render_chart(package_from_dir(chart))
    assert rendered.container_count == 3


def test_render_without_helm_or_prerendered_is_environment_error(tmp_path, monkeypatch):
    chart = tmp_path / "bare"
    chart.mkdir()
    (chart / "Chart.yaml").write_text("name: bare\nversion: 0.1.0\n")
    monkeypatch.setenv("PATH", str(tmp_path))
    with pytest.raises(EnvironmentError_):
        render_chart(package_from_dir(chart))


def test_render_subprocess_failure_carries_stderr(tmp_path, monkeypatch):
    chart = tmp_path / "broken"
    chart.mkdir()
    (chart / "Chart.yaml").write_text("name: broken\nversion: 0.1.0\n")
    fake_helm = tmp_path / "helm"
    fake_helm.write_text("#!/bin/sh\necho 'template error: boom' >&2\nexit 1\n")
    fake_helm.chmod(fake_helm.stat().st_mode | stat.S_IEXEC)
    monkeypatch.setenv("PATH", f"{tmp_path}{os.pathsep}{os.environ['PATH']}")
    with pytest.raises(RenderError) as err:
        render_chart(package_from_dir(chart))
    assert "boom" in err.value.stderr


def test_render_via_stub_helm_stdout(tmp_path, monkeypatch):
    chart = tmp_path / "stubbed"
    chart.mkdir()
    (chart / "Chart.yaml").write_text("name: stubbed\nversion: 0.1.0\n")
    fake_helm = tmp_path / "helm"
    fake_helm.write_text(
        "#!/bin/sh\nprintf -- '---\\napiVersion: v1\\nkind: Pod\\nmetadata:\\n  name: s\\n'\n"
    )
    fake_helm.chmod(fake_helm.stat().st_mode | stat.S_IEXEC)
    monkeypatch.setenv("PATH", f"{tmp_path}{os.pathsep}{os.environ['PATH']}")
    rendered = render_chart(package_from_dir(chart))
    assert "kind: Pod" in rendered.text
    assert rendered.line_count == 5


def rendered_for(package, text):
    return RenderedManifest(ref=package.ref, text=text, line_count=len(text.splitlines()),
                            container_count=0)


def test_filter_partitions_input():
    ok = make_package("d1", "ok")
    dup = make_package("d1", "dup")
    broken = make_package("d2", "broken")
    bad_yaml = make_package("d3", "bad")
    entries = [
        (ok, rendered_for(ok, "apiVersion: v1\nkind: Pod\nmetadata:\n  name: x\n")),
        (dup, rendered_for(dup, "apiVersion: v1\nkind: Pod\nmetadata:\n  name: x\n")),
        (broken, RenderError("helm exploded", stderr="trace")),
        (bad_yaml, rendered_for(bad_yaml, "kind: Pod\nmetadata: {unclosed\n")),
    ]
    eligible, excluded = filter_ineligible(entries)
    assert len(eligible) + len(excluded) == len(entries)
    reasons = {e.ref.name: e.reason for e in excluded}
    assert reasons == {"dup": "duplicate", "broken": "render_failure", "bad": "yaml_syntax_error"}
    assert [p.ref.name for p, _ in eligible] == ["ok"]


def test_filter_all_tools_failed():
    package = make_package("d9", "doomed")
    entries = [(package, rendered_for(package, "apiVersion: v1\nkind: Pod\nmetadata:\n  name: x\n"))]

    def failing_probe(pkg, manifest):
        raise RuntimeError("tool broke")

    eligible, excluded = filter_ineligible(entries, analyzer_probes=[failing_probe, failing_probe])
    assert eligible == []
    assert excluded[0].reason == "all_tools_failed"


def test_filter_one_working_tool_keeps_chart():
    package = make_package("d9", "survivor")
    entries = [(package, rendered_for(package, "apiVersion: v1\nkind: Pod\nmetadata:\n  name: x\n"))]

    def failing(pkg, manifest):
        raise RuntimeError("tool broke")

    eligible, excluded = filter_ineligible(entries, analyzer_probes=[failing, lambda p, m: []])
    assert len(eligible) == 1 and excluded == []


def test_filter_never_excludes_for_size():
    package = make_package("d4", "huge")
    huge_text = "---\n".join(
        f"apiVersion: v1\nkind: ConfigMap\nmetadata:\n  name: cm-{i}\ndata:\n  k: v\n"
        for i in range(2000)
    )
    eligible, excluded = filter_ineligible([(package, rendered_for(package, huge_text))])
    assert len(eligible) == 1 and excluded == []
