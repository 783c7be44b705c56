#!/usr/bin/env python3
"""Crawl the chart hub: search the catalog, cache archives, print a summary.

This is the online counterpart of the offline demo. Point it at the real hub
(default) or a staging/fixture server via --hub-url / CHART_SENTRY_HUB_URL.

Usage:
    python scripts/crawl_hub.py --max-charts 25 --cache-dir ./cache
"""

import argparse
import json
from pathlib import Path

from chart_sentry.catalog import HubClient, dedupe
from chart_sentry.errors import ChartSentryError


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--hub-url", default=None)
    parser.add_argument("--max-charts", type=int, default=25)
    parser.add_argument("--page-size", type=int, default=60)
    parser.add_argument("--cache-dir", type=Path, default=Path("cache"))
    parser.add_argument("--fetch", action="store_true", help="Also download archives.")
    parser.add_argument("--out", type=Path, default=Path("catalog.json"))
    args = parser.parse_args()

    client = HubClient(base_url=args.hub_url)
    refs = client.search_charts(page_size=args.page_size, max_results=args.max_charts)
    print(f"found {len(refs)} charts")
    for ref in refs[:10]:
        print(f"  {ref.stars:>6}★  {ref.repository}/{ref.name}@{ref.version}")

    entries = []
    packages = []
    for ref in refs:
        entry = {
            "name": ref.name,
            "repository": ref.repository,
            "version": ref.version,
            "stars": ref.stars,
            "package_id": ref.package_id,
        }
        if args.fetch:
            try:
                package = client.fetch_chart(ref, args.cache_dir)
                packages.append(package)
                entry["digest"] = package.content_digest
                entry["archive_path"] = str(package.archive_path)
            except ChartSentryError as exc:
                entry["fetch_error"] = str(exc)
        entries.append(entry)

    if args.fetch:
        unique = dedupe(packages)
        print(f"fetched {len(packages)} archives, {len(unique)} unique digests")
    args.out.write_text(json.dumps(entries, indent=2) + "\n")
    print(f"catalog written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
