"""Multi-document Kubernetes YAML handling with byte-exact spans.

A rendered chart is one big YAML stream. Scanners point at individual
resources inside it, and the remediation loop needs to cut a resource out,
hand it to a model, and splice the answer back without disturbing any other
byte of the stream. Everything here is therefore span-based: each document
remembers exactly which slice of the source text it came from, and splicing
only ever rewrites that slice.

Documents are split on top-level ``---`` separator lines. Anchors/aliases are
parsed but never rewritten; exotic YAML 1.2 constructs (inline content on the
separator line, directives) are out of scope.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field

import yaml

from .errors import AmbiguousResourceError, PatchError, ResourceLookupError

_SEPARATOR_RE = re.compile(r"^---\s*(#.*)?$")
_DOC_END_RE = re.compile(r"^\.\.\.\s*(#.*)?$")

DEFAULT_NAMESPACE = "default"


def normalize_namespace(namespace: str | None) -> str:
    """Empty/unset namespaces mean "default" for identity purposes."""
    return namespace if namespace else DEFAULT_NAMESPACE


@dataclass(frozen=True)
class ResourceId:
    """Identity of one Kubernetes resource: apiVersion, kind, name, namespace."""

    api_version: str
    kind: str
    name: str
    namespace: str = ""

    def __post_init__(self):
        if not self.kind or not self.name:
            raise ValueError("ResourceId requires non-empty kind and name")

    @property
    def normalized_namespace(self) -> str:
        return normalize_namespace(self.namespace)

    def matches(self, other: "ResourceId") -> bool:
        return (
            self.api_version == other.api_version
            and self.kind == other.kind
            and self.name == other.name
            and self.normalized_namespace == other.normalized_namespace
        )

    def __str__(self) -> str:
        return f"{self.api_version}/{self.kind}/{self.normalized_namespace}/{self.name}"


@dataclass(frozen=True)
class ResourceDoc:
    """One resource document plus its exact location in the parent stream.

    ``raw_text == parent_text[span[0]:span[1]]`` and re-parsing ``raw_text``
    yields ``tree`` again.
    """

    id: ResourceId
    raw_text: str
    span: tuple[int, int]
    tree: dict

    @classmethod
    def from_text(cls, text: str) -> "ResourceDoc":
        """Parse a standalone snippet (e.g. an extracted model answer)."""
        try:
            tree = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise PatchError(f"snippet does not parse as YAML: {exc}") from exc
        if not isinstance(tree, dict):
            raise PatchError("snippet is not a YAML mapping")
        rid = _identity_of(tree)
        if rid is None:
            raise PatchError("snippet lacks kind or metadata.name")
        return cls(id=rid, raw_text=text, span=(0, len(text)), tree=tree)


@dataclass(frozen=True)
class DocError:
    """A document that failed to parse; the rest of the stream is unaffected."""

    span: tuple[int, int]
    message: str


@dataclass(frozen=True)
class _Segment:
    # kinds: separator | doc | other | blank | error
    kind: str
    span: tuple[int, int]
    doc_index: int = -1


@dataclass
class ManifestSet:
    """A parsed multi-document stream that can be reassembled byte-for-byte."""

    source_text: str
    docs: list[ResourceDoc] = field(default_factory=list)
    errors: list[DocError] = field(default_factory=list)
    non_resource_docs: int = 0
    _segments: list[_Segment] = field(default_factory=list, repr=False)

    def reconstruct(self) -> str:
        return "".join(self.source_text[s.span[0]:s.span[1]] for s in self._segments)


def _identity_of(tree: dict) -> ResourceId | None:
    kind = tree.get("kind")
    metadata = tree.get("metadata") or {}
    name = metadata.get("name") if isinstance(metadata, dict) else None
    if not kind or not name:
        return None
    namespace = metadata.get("namespace") or ""
    return ResourceId(
        api_version=str(tree.get("apiVersion") or ""),
        kind=str(kind),
        name=str(name),
        namespace=str(namespace),
    )


def parse_manifests(text: str) -> ManifestSet:
    """Split a YAML stream on top-level ``---`` lines and parse each chunk.

    Chunks that fail to parse become per-document error entries; they never
    abort the rest of the stream. Documents without kind/metadata.name are
    counted but preserved verbatim (Helm notes, List objects, scalars).
    """
    mset = ManifestSet(source_text=text)
    if not text:
        return mset

    # Line offsets, keeping line endings so spans tile the text exactly.
    lines: list[tuple[int, int, str]] = []
    pos = 0
    for raw in text.splitlines(keepends=True):
        lines.append((pos, pos + len(raw), raw))
        pos += len(raw)

    chunk_start: int | None = None
    chunk_end = 0

    def close_chunk(end: int):
        nonlocal chunk_start
        if chunk_start is None or chunk_start == end:
            chunk_start = None
            return
        _classify_chunk(mset, chunk_start, end)
        chunk_start = None

    for start, end, raw in lines:
        stripped = raw.rstrip("\r\n")
        if _SEPARATOR_RE.match(stripped) or _DOC_END_RE.match(stripped):
            close_chunk(start)
            mset._segments.append(_Segment("separator", (start, end)))
        else:
            if chunk_start is None:
                chunk_start = start
            chunk_end = end
    close_chunk(chunk_end if chunk_start is not None else 0)
    return mset


def _classify_chunk(mset: ManifestSet, start: int, end: int) -> None:
    chunk = mset.source_text[start:end]
    span = (start, end)
    try:
        tree = yaml.safe_load(chunk)
    except yaml.YAMLError as exc:
        mset.errors.append(DocError(span=span, message=str(exc)))
        mset._segments.append(_Segment("error", span))
        return
    if tree is None:
        mset._segments.append(_Segment("blank", span))
        return
    rid = _identity_of(tree) if isinstance(tree, dict) else None
    if rid is None:
        mset.non_resource_docs += 1
        mset._segments.append(_Segment("other", span))
        return
    mset.docs.append(ResourceDoc(id=rid, raw_text=chunk, span=span, tree=tree))
    mset._segments.append(_Segment("doc", span, doc_index=len(mset.docs) - 1))


def locate_resource(mset: ManifestSet, rid: ResourceId) -> ResourceDoc:
    """Find the unique document with the given identity."""
    matches = [d for d in mset.docs if d.id.matches(rid)]
    if not matches:
        raise ResourceLookupError(f"no document matches {rid}")
    if len(matches) > 1:
        raise AmbiguousResourceError(f"{len(matches)} documents match {rid}")
    return matches[0]


def find_resource(
    mset: ManifestSet,
    kind: str,
    name: str,
    namespace: str | None = None,
    api_version: str | None = None,
) -> ResourceDoc | None:
    """Loose lookup used when a scanner reports a partial identity.

    api_version and namespace are matched only when given; returns None when
    no document or more than one document matches.
    """
    matches = []
    for d in mset.docs:
        if d.id.kind != kind or d.id.name != name:
            continue
        if namespace is not None and d.id.normalized_namespace != normalize_namespace(namespace):
            continue
        if api_version is not None and api_version != "" and d.id.api_version != api_version:
            continue
        matches.append(d)
    return matches[0] if len(matches) == 1 else None


def splice_resource(mset: ManifestSet, rid: ResourceId, replacement: ResourceDoc) -> ManifestSet:
    """Replace one document's bytes with the replacement snippet.

    Every byte outside the target span is preserved. The result must re-parse
    with the same document count, otherwise the patch is rejected.
    """
    target = locate_resource(mset, rid)
    try:
        rep_tree = yaml.safe_load(replacement.raw_text)
    except yaml.YAMLError as exc:
        raise PatchError(f"replacement does not parse: {exc}") from exc
    if not isinstance(rep_tree, dict):
        raise PatchError("replacement is not a YAML mapping")

    rep_text = replacement.raw_text
    start, end = target.span
    # Keep the stream well-formed: if the original chunk ended with a newline
    # (it does unless it sat at EOF), the replacement must too.
    if target.raw_text.endswith("\n") and not rep_text.endswith("\n"):
        rep_text += "\n"

    new_text = mset.source_text[:start] + rep_text + mset.source_text[end:]
    new_set = parse_manifests(new_text)
    old_count = len(mset.docs) + mset.non_resource_docs + len(mset.errors)
    new_count = len(new_set.docs) + new_set.non_resource_docs + len(new_set.errors)
    if new_count != old_count:
        raise PatchError(
            f"splice changed document count ({old_count} -> {new_count}); "
            "replacement probably contains a top-level '---'"
        )
    return new_set


def _normalize_lines(text: str) -> list[str]:
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and lines[-1] == "":
        lines.pop()
    return lines


@dataclass(frozen=True)
class SnippetDiff:
    """Line-based unified diff, insensitive to trailing whitespace."""

    is_empty: bool
    unified_text: str


def diff_resource(original: ResourceDoc, refactored: ResourceDoc) -> SnippetDiff:
    a = _normalize_lines(original.raw_text)
    b = _normalize_lines(refactored.raw_text)
    if a == b:
        return SnippetDiff(is_empty=True, unified_text="")
    diff = difflib.unified_diff(a, b, fromfile="original", tofile="refactored", lineterm="")
    return SnippetDiff(is_empty=False, unified_text="\n".join(diff))
