"""Completion providers: a deterministic offline mock plus two HTTP chatbots.

The provider contract is one call: ``send(prompt_text, params) -> completion
text``. Transport failures raise TransportError (retriable);
rejected credentials raise ProviderAuthError (fatal). ``query_provider``
wraps a provider with retry/backoff and an optional token-bucket rate limit.

The mock provider drives the whole pipeline offline. It recovers the policy
and snippet from the prompt text alone (it sees exactly what a real chatbot
would see) and answers according to its configured mode:

* fix   — apply a minimal edit that satisfies the policy, fenced in ```yaml;
* break — change the value in a way the policy still rejects;
* echo  — return the snippet unchanged;
* prose — refuse in plain English (no YAML at all);
* rename — answer with a different resource name (identity change);
* error — raise TransportError on every call.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field

import requests
import yaml

from .errors import ProviderAuthError, ProviderError, TransportError
from .policies import BUILTIN_BY_DESCRIPTION, pod_spec_of
from .quantity import QuantityError, parse_quantity
from .remediation import Prompt

DEFAULT_TEMPERATURE = 0.0


class TokenBucket:
    """Blocking token bucket: acquire() sleeps until a token is available."""

    def __init__(self, rate_per_sec: float, capacity: int = 1, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate_per_sec
        self.capacity = capacity
        self.tokens = float(capacity)
        self.updated = clock()
        self.clock = clock
        self.sleep = sleep

    def acquire(self) -> None:
        now = self.clock()
        self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
        self.updated = now
        if self.tokens < 1.0:
            wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)
            self.tokens = 1.0
            self.updated = self.clock()
        self.tokens -= 1.0


def query_provider(
    provider,
    prompt: Prompt,
    timeout: float = 60.0,
    retries: int = 2,
    backoff: float = 0.5,
    rate_limiter: TokenBucket | None = None,
    audit=None,
) -> str:
    """Send a prompt, retrying transport errors with exponential backoff.

    Raises ProviderError once retries are exhausted; auth failures propagate
    immediately. When an audit callback is given, every request/response pair
    is handed to it verbatim.
    """
    params = {"timeout": timeout, "temperature": DEFAULT_TEMPERATURE}
    last: Exception | None = None
    for attempt in range(retries + 1):
        if rate_limiter is not None:
            rate_limiter.acquire()
        try:
            response = provider.send(prompt.text, params)
            if audit:
                audit(prompt.text, response)
            return response
        except TransportError as exc:
            last = exc
            if attempt < retries and backoff > 0:
                time.sleep(backoff * (2**attempt))
    raise ProviderError(f"provider {getattr(provider, 'provider_id', '?')} failed after {retries + 1} tries") from last


# --- deterministic mock -------------------------------------------------------

_PROMPT_RE = re.compile(
    r"^Refactor the following (?P<kind>\S+) K8s resource to (?P<phrase>.+)\. "
    r"Output only the refactored YAML file\.$"
)


def _dump(tree: dict) -> str:
    return yaml.safe_dump(tree, sort_keys=False, default_flow_style=False)


def _containers_of(tree: dict, kind: str) -> list[dict]:
    spec, _ = pod_spec_of(tree, kind)
    if spec is None:
        return []
    out = []
    for section in ("containers", "initContainers"):
        entries = spec.get(section)
        if isinstance(entries, list):
            out.extend(c for c in entries if isinstance(c, dict))
    return out


def _insane(value, ceiling) -> bool:
    try:
        q = parse_quantity(value)
    except QuantityError:
        return True
    return not (0 < q <= ceiling)


class MockProvider:
    """Table-driven canned responses keyed by the builtin policy catalog."""

    def __init__(self, mode: str = "fix", mode_by_key: dict[str, str] | None = None,
                 model: str = "mock-refactorer"):
        self.provider_id = "mock"
        self.model = model
        self.default_mode = mode
        self.mode_by_key = mode_by_key or {}
        self.calls = 0

    def send(self, prompt_text: str, params: dict) -> str:
        self.calls += 1
        head, _, snippet = prompt_text.partition("\n\n")
        match = _PROMPT_RE.match(head.strip())
        phrase = match.group("phrase") if match else ""
        kind = match.group("kind") if match else ""
        policy = BUILTIN_BY_DESCRIPTION.get(phrase.lower())
        key = policy.canonical_key if policy else None
        mode = self.mode_by_key.get(key or "", self.default_mode)

        if mode == "error":
            raise TransportError("mock transport failure")
        if mode == "prose":
            return "I'm sorry, but I can't help with refactoring that resource."
        if mode == "echo":
            return snippet
        if mode == "rename":
            tree = yaml.safe_load(snippet)
            tree["metadata"]["name"] = str(tree["metadata"].get("name", "")) + "-v2"
            return f"```yaml\n{_dump(tree)}```"

        tree = yaml.safe_load(snippet)
        if mode == "break":
            changed = _apply_break(tree, kind, key)
        else:
            changed = _apply_fix(tree, kind, key)
        if not changed:
            # nothing to do for this policy inside the snippet: behave like a
            # model that answers with the original content
            return snippet
        return f"```yaml\n{_dump(tree)}```"


def _set_resource_value(tree: dict, kind: str, section: str, resource: str, value) -> bool:
    changed = False
    for container in _containers_of(tree, kind):
        resources = container.setdefault("resources", {})
        block = resources.get(section)
        if not isinstance(block, dict):
            block = {}
            resources[section] = block
        if block.get(resource) != value:
            if resource not in block:
                # insert first, mirroring the published example fix layout
                rebuilt = {resource: value}
                rebuilt.update(block)
                resources[section] = rebuilt
            else:
                block[resource] = value
            changed = True
    return changed


def _apply_fix(tree: dict, kind: str, key: str | None) -> bool:
    from fractions import Fraction

    if key == "memory-request":
        return _set_resource_value(tree, kind, "requests", "memory", "250Mi")
    if key == "memory-limit":
        return _set_resource_value(tree, kind, "limits", "memory", "250Mi")
    if key == "cpu-request":
        return _set_resource_value(tree, kind, "requests", "cpu", "250m")
    if key == "cpu-limit":
        return _set_resource_value(tree, kind, "limits", "cpu", "250m")
    if key == "resource-quantity-sanity":
        changed = False
        defaults = {"memory": "250Mi", "cpu": "250m"}
        ceilings = {"memory": Fraction(2**40), "cpu": Fraction(64)}
        for container in _containers_of(tree, kind):
            resources = container.get("resources")
            if not isinstance(resources, dict):
                continue
            for section in ("requests", "limits"):
                block = resources.get(section)
                if not isinstance(block, dict):
                    continue
                for res in ("memory", "cpu"):
                    if res in block and _insane(block[res], ceilings[res]):
                        block[res] = defaults[res]
                        changed = True
        return changed
    if key == "privilege-escalation":
        changed = False
        for container in _containers_of(tree, kind):
            sec = container.setdefault("securityContext", {})
            if sec.get("allowPrivilegeEscalation") is not False:
                sec["allowPrivilegeEscalation"] = False
                changed = True
        return changed
    if key == "privileged-container":
        changed = False
        for container in _containers_of(tree, kind):
            sec = container.get("securityContext")
            if isinstance(sec, dict) and sec.get("privileged") is True:
                sec["privileged"] = False
                changed = True
        return changed
    if key == "sys-admin-capability":
        changed = False
        for container in _containers_of(tree, kind):
            sec = container.get("securityContext")
            caps = sec.get("capabilities") if isinstance(sec, dict) else None
            added = caps.get("add") if isinstance(caps, dict) else None
            if isinstance(added, list) and "SYS_ADMIN" in added:
                added.remove("SYS_ADMIN")
                if not added:
                    caps.pop("add")
                if not caps:
                    sec.pop("capabilities")
                changed = True
        return changed
    if key == "image-tag-pinned":
        changed = False
        for container in _containers_of(tree, kind):
            image = container.get("image")
            if not isinstance(image, str) or "@" in image:
                continue
            tail = image.rsplit("/", 1)[-1]
            if ":" not in tail:
                container["image"] = image + ":1.0.0"
                changed = True
            elif tail.rsplit(":", 1)[1] in ("", "latest"):
                container["image"] = image.rsplit(":", 1)[0] + ":1.25.3"
                changed = True
        return changed
    if key == "default-namespace":
        metadata = tree.setdefault("metadata", {})
        if metadata.get("namespace") in (None, "", "default"):
            metadata["namespace"] = "app-namespace"
            return True
        return False
    if key == "hostpath-volume":
        spec, _ = pod_spec_of(tree, kind)
        if spec is None:
            return False
        volumes = spec.get("volumes")
        if not isinstance(volumes, list):
            return False
        removed = [v.get("name") for v in volumes if isinstance(v, dict) and "hostPath" in v]
        if not removed:
            return False
        spec["volumes"] = [v for v in volumes if not (isinstance(v, dict) and "hostPath" in v)]
        for container in _containers_of(tree, kind):
            mounts = container.get("volumeMounts")
            if isinstance(mounts, list):
                container["volumeMounts"] = [
                    m for m in mounts if not (isinstance(m, dict) and m.get("name") in removed)
                ]
                if not container["volumeMounts"]:
                    container.pop("volumeMounts")
        return True
    if key == "clusterrole-wildcard":
        changed = False
        for rule in tree.get("rules") or []:
            if isinstance(rule, dict) and "*" in (rule.get("verbs") or []) and "*" in (
                rule.get("resources") or []
            ):
                rule["verbs"] = ["get", "list", "watch"]
                changed = True
        return changed
    # network-policy-binding (and unknown policies): not fixable within the
    # snippet, so the mock leaves it untouched
    return False


def _apply_break(tree: dict, kind: str, key: str | None) -> bool:
    if key == "memory-request":
        return _set_resource_value(tree, kind, "requests", "memory", 0)
    if key == "memory-limit":
        return _set_resource_value(tree, kind, "limits", "memory", "john")
    if key == "cpu-request":
        return _set_resource_value(tree, kind, "requests", "cpu", 0)
    if key == "cpu-limit":
        return _set_resource_value(tree, kind, "limits", "cpu", 0)
    # generic off-target edit: visible in the diff, fixes nothing
    metadata = tree.setdefault("metadata", {})
    annotations = metadata.setdefault("annotations", {})
    annotations["refactored-by"] = "mock"
    return True


# --- HTTP chatbot providers ---------------------------------------------------

@dataclass
class OpenAIChatProvider:
    """Chat-completions endpoint client (key via OPENAI_API_KEY)."""

    model: str = "gpt-4"
    base_url: str = "https://api.openai.com"
    api_key: str | None = None
    provider_id: str = "openai"
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def send(self, prompt_text: str, params: dict) -> str:
        key = self.api_key or os.environ.get("OPENAI_API_KEY")
        if not key:
            raise ProviderAuthError("OPENAI_API_KEY is not set")
        try:
            response = self.session.post(
                f"{self.base_url.rstrip('/')}/v1/chat/completions",
                headers={"Authorization": f"Bearer {key}"},
                json={
                    "model": self.model,
                    "temperature": params.get("temperature", DEFAULT_TEMPERATURE),
                    "messages": [{"role": "user", "content": prompt_text}],
                },
                timeout=params.get("timeout", 60.0),
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code in (401, 403):
            raise ProviderAuthError(f"chat endpoint rejected credentials ({response.status_code})")
        if response.status_code >= 500 or response.status_code == 429:
            raise TransportError(f"chat endpoint returned {response.status_code}")
        response.raise_for_status()
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat completion response: {exc}") from exc


@dataclass
class GeminiProvider:
    """generateContent endpoint client (key via GEMINI_API_KEY)."""

    model: str = "gemini-pro"
    base_url: str = "https://generativelanguage.googleapis.com"
    api_key: str | None = None
    provider_id: str = "gemini"
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def send(self, prompt_text: str, params: dict) -> str:
        key = self.api_key or os.environ.get("GEMINI_API_KEY")
        if not key:
            raise ProviderAuthError("GEMINI_API_KEY is not set")
        url = f"{self.base_url.rstrip('/')}/v1beta/models/{self.model}:generateContent"
        try:
            response = self.session.post(
                url,
                params={"key": key},
                json={
                    "contents": [{"parts": [{"text": prompt_text}]}],
                    "generationConfig": {
                        "temperature": params.get("temperature", DEFAULT_TEMPERATURE)
                    },
                },
                timeout=params.get("timeout", 60.0),
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code in (401, 403):
            raise ProviderAuthError(f"gemini endpoint rejected credentials ({response.status_code})")
        if response.status_code >= 500 or response.status_code == 429:
            raise TransportError(f"gemini endpoint returned {response.status_code}")
        response.raise_for_status()
        try:
            parts = response.json()["candidates"][0]["content"]["parts"]
            return "".join(part.get("text", "") for part in parts)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed gemini response: {exc}") from exc


def make_provider(provider_id: str, model: str | None = None, **kwargs):
    if provider_id == "mock":
        return MockProvider(model=model or "mock-refactorer", **kwargs)
    if provider_id == "openai":
        return OpenAIChatProvider(model=model or "gpt-4", **kwargs)
    if provider_id == "gemini":
        return GeminiProvider(model=model or "gemini-pro", **kwargs)
    raise ValueError(f"unknown provider {provider_id!r}")
