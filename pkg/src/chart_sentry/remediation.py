"""LLM remediation loop: prompt building, answer extraction, classification.

For each finding, the model gets one query built from three ingredients: the
resource kind, the violated policy's description, and the resource's YAML
snippet. The answer is parsed, spliced back into the manifest, the same tool
re-scans the patched manifest, and the attempt is classified:

* Refused  — the answer is textually identical to the original snippet;
* Correct  — the snippet changed and the original alert is gone;
* Wrong    — the snippet changed but the alert persists, or the answer was
  unusable (no parseable YAML, or a different resource came back).

Attempts whose provider failed outright are recorded but carry no outcome;
they are excluded from the Correct/Wrong/Refused denominator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

from .errors import PatchError, ProviderError, ResourceLookupError
from .findings import Finding
from .manifest import (
    ManifestSet,
    ResourceDoc,
    ResourceId,
    SnippetDiff,
    diff_resource,
    locate_resource,
    splice_resource,
)

OUTCOME_CORRECT = "Correct"
OUTCOME_WRONG = "Wrong"
OUTCOME_REFUSED = "Refused"

FAILURE_UNPARSEABLE = "unparseable_output"
FAILURE_IDENTITY = "identity_changed"
FAILURE_PROVIDER = "provider_error"

PROMPT_SUFFIX = "Output only the refactored YAML file."


@dataclass(frozen=True)
class Prompt:
    text: str
    finding: Finding
    snippet: ResourceDoc


def _directive_phrase(description: str) -> str:
    """Lowercase a leading title-cased verb ("Prevent ..."), leave acronyms."""
    phrase = description.strip().rstrip(".")
    if len(phrase) >= 2 and phrase[0].isupper() and phrase[1].islower():
        phrase = phrase[0].lower() + phrase[1:]
    return phrase


def build_prompt(finding: Finding, snippet: ResourceDoc) -> Prompt:
    phrase = _directive_phrase(finding.policy.description)
    text = (
        f"Refactor the following {snippet.id.kind} K8s resource to {phrase}. "
        f"{PROMPT_SUFFIX}\n\n{snippet.raw_text}"
    )
    return Prompt(text=text, finding=finding, snippet=snippet)


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)
_YAML_KEY_RE = re.compile(r"^(apiVersion|kind|metadata)\s*:", re.MULTILINE)


def _strip_document_markers(text: str) -> str:
    lines = [ln for ln in text.splitlines() if ln.strip() not in ("---", "...")]
    return "\n".join(lines).strip("\n") + "\n" if lines else ""


def extract_refactored(
    raw_response: str, original: ResourceDoc
) -> tuple[ResourceDoc | None, str | None]:
    """Pull the refactored document out of a model answer.

    Tries fenced code blocks first, then the bare answer, then the answer from
    its first YAML-looking line onward. Returns (doc, None) on success or
    (None, failure_detail) when the answer is unusable.
    """
    candidates: list[str] = [m.group(1) for m in _FENCE_RE.finditer(raw_response)]
    candidates.append(raw_response)
    key_match = _YAML_KEY_RE.search(raw_response)
    if key_match:
        candidates.append(raw_response[key_match.start():])

    saw_identity_mismatch = False
    for candidate in candidates:
        text = _strip_document_markers(candidate)
        if not text.strip():
            continue
        try:
            doc = ResourceDoc.from_text(text)
        except PatchError:
            continue
        if doc.id.kind == original.id.kind and doc.id.name == original.id.name:
            return doc, None
        saw_identity_mismatch = True
    return None, FAILURE_IDENTITY if saw_identity_mismatch else FAILURE_UNPARSEABLE


@dataclass
class RemediationAttempt:
    finding: Finding
    prompt: Prompt
    provider_id: str
    raw_response: str | None
    extracted: ResourceDoc | None
    diff: SnippetDiff | None
    post_findings: list[Finding] = field(default_factory=list)
    regression_findings: list[Finding] = field(default_factory=list)
    outcome: str | None = None
    failure_detail: str | None = None


def classify(
    finding: Finding,
    diff: SnippetDiff | None,
    rescan: list[Finding],
    failure_detail: str | None = None,
    tracked_resource: ResourceId | None = None,
) -> str | None:
    """Apply the diff+alert rules to one attempt.

    ``tracked_resource`` is the document's identity after the patch (it can
    drift, e.g. a namespace fix); the alert-persistence check follows it.
    """
    if failure_detail == FAILURE_PROVIDER:
        return None
    if failure_detail in (FAILURE_UNPARSEABLE, FAILURE_IDENTITY):
        return OUTCOME_WRONG
    assert diff is not None
    if diff.is_empty:
        return OUTCOME_REFUSED
    resource = tracked_resource or finding.resource
    persists = any(
        f.tool == finding.tool
        and f.policy.policy_id == finding.policy.policy_id
        and f.resource.matches(resource)
        and (f.location or "") == (finding.location or "")
        for f in rescan
    )
    return OUTCOME_WRONG if persists else OUTCOME_CORRECT


def _resource_key(rid: ResourceId) -> tuple:
    return (rid.api_version, rid.kind, rid.name, rid.normalized_namespace)


def remediate_findings(
    mset: ManifestSet,
    findings: list[Finding],
    provider,
    rescan: Callable[[ManifestSet], list[Finding]],
    *,
    baseline: list[Finding] | None = None,
    query: Callable | None = None,
    audit: Callable[[Finding, Prompt, str | None, str | None], None] | None = None,
) -> tuple[list[RemediationAttempt], ManifestSet]:
    """Run the remediation loop over findings of one manifest, in order.

    Findings on the same resource stack: each prompt is built against the
    latest patched snippet, and every successfully extracted patch is spliced
    before the next finding is attempted. Returns the attempts plus the final
    patched manifest.
    """
    from .providers import query_provider

    send = query or query_provider
    working = mset
    baseline_keys = {f.key() for f in (baseline if baseline is not None else findings)}
    aliases: dict[tuple, ResourceId] = {}
    attempts: list[RemediationAttempt] = []

    for finding in findings:
        rid = aliases.get(_resource_key(finding.resource), finding.resource)
        try:
            snippet = locate_resource(working, rid)
        except ResourceLookupError:
            # the resource vanished under a previous patch; treat like an
            # unusable answer so the attempt is still accounted for
            attempt = RemediationAttempt(
                finding=finding,
                prompt=Prompt(text="", finding=finding, snippet=None),  # type: ignore[arg-type]
                provider_id=getattr(provider, "provider_id", "unknown"),
                raw_response=None,
                extracted=None,
                diff=None,
                outcome=OUTCOME_WRONG,
                failure_detail=FAILURE_UNPARSEABLE,
            )
            attempts.append(attempt)
            continue

        prompt = build_prompt(finding, snippet)
        attempt = RemediationAttempt(
            finding=finding,
            prompt=prompt,
            provider_id=getattr(provider, "provider_id", "unknown"),
            raw_response=None,
            extracted=None,
            diff=None,
        )
        attempts.append(attempt)

        try:
            raw = send(provider, prompt)
        except ProviderError:
            attempt.failure_detail = FAILURE_PROVIDER
            attempt.outcome = classify(finding, None, [], FAILURE_PROVIDER)
            if audit:
                audit(finding, prompt, None, FAILURE_PROVIDER)
            continue
        attempt.raw_response = raw
        if audit:
            audit(finding, prompt, raw, None)

        doc, detail = extract_refactored(raw, snippet)
        if doc is None:
            attempt.failure_detail = detail
            attempt.outcome = classify(finding, None, [], detail)
            continue
        attempt.extracted = doc
        attempt.diff = diff_resource(snippet, doc)

        if attempt.diff.is_empty:
            attempt.outcome = OUTCOME_REFUSED
            continue

        try:
            patched = splice_resource(working, rid, doc)
        except PatchError:
            attempt.extracted = None
            attempt.diff = None
            attempt.failure_detail = FAILURE_UNPARSEABLE
            attempt.outcome = OUTCOME_WRONG
            continue

        working = patched
        aliases[_resource_key(finding.resource)] = doc.id
        post = rescan(working)
        attempt.post_findings = post
        attempt.regression_findings = [
            f for f in post if f.tool == finding.tool and f.key() not in baseline_keys
        ]
        attempt.outcome = classify(finding, attempt.diff, post, tracked_resource=doc.id)

    return attempts, working
