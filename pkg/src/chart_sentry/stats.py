"""Binomial proportion intervals, outcome proportions, validation sampling.

Two classical interval constructions are implemented and reported side by
side: Agresti-Coull (adjusted counts ñ = n + z², x̃ = x + z²/2) and Wilson
(score-test inversion). They share the same center; Agresti-Coull is the
display default. Endpoints are clamped to [0, 1].
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import DomainError, UndefinedEstimateError

DEFAULT_Z = 1.96

# conventional two-sided critical values; other levels fall back to the
# inverse normal CDF
_Z_BY_LEVEL = {0.90: 1.645, 0.95: 1.96, 0.99: 2.576}


def z_for_confidence(level: float) -> float:
    if level in _Z_BY_LEVEL:
        return _Z_BY_LEVEL[level]
    if not 0 < level < 1:
        raise DomainError(f"confidence level must be in (0,1), got {level}")
    from statistics import NormalDist

    return NormalDist().inv_cdf(1 - (1 - level) / 2)


@dataclass(frozen=True)
class ProportionEstimate:
    x: int
    n: int
    z: float
    method: str
    point: float
    lo: float
    hi: float


def _validate(x: int, n: int, z: float) -> None:
    if n == 0:
        raise UndefinedEstimateError("no trials: estimate undefined")
    if n < 0 or x < 0 or x > n:
        raise DomainError(f"need 0 <= x <= n, got x={x} n={n}")
    if z < 0:
        raise DomainError(f"z must be >= 0, got {z}")


def agresti_coull(x: int, n: int, z: float = DEFAULT_Z) -> ProportionEstimate:
    """Interval from adjusted counts; the point estimate is the adjusted p̃."""
    _validate(x, n, z)
    z2 = z * z
    n_adj = n + z2
    p_adj = (x + z2 / 2) / n_adj
    half = z * math.sqrt(p_adj * (1 - p_adj) / n_adj)
    return ProportionEstimate(
        x=x,
        n=n,
        z=z,
        method="agresti_coull",
        point=p_adj,
        lo=max(0.0, p_adj - half),
        hi=min(1.0, p_adj + half),
    )


def wilson(x: int, n: int, z: float = DEFAULT_Z) -> ProportionEstimate:
    """Score interval; shares its center with agresti_coull."""
    _validate(x, n, z)
    p_hat = x / n
    z2 = z * z
    denom = 1 + z2 / n
    center = (p_hat + z2 / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p_hat * (1 - p_hat) / n + z2 / (4 * n * n))
    return ProportionEstimate(
        x=x,
        n=n,
        z=z,
        method="wilson",
        point=center,
        lo=max(0.0, center - half),
        hi=min(1.0, center + half),
    )


_METHODS = {"agresti_coull": agresti_coull, "wilson": wilson}


def interval(x: int, n: int, z: float = DEFAULT_Z, method: str = "agresti_coull") -> ProportionEstimate:
    return _METHODS[method](x, n, z)


@dataclass(frozen=True)
class OutcomeProportions:
    """Correct/Wrong/Refused shares of the attempted findings.

    ``point`` on each estimate is the raw proportion x/n (so the three points
    sum to one); lo/hi come from the configured interval method. The raw
    proportion always lies inside both intervals.
    """

    correct: ProportionEstimate
    wrong: ProportionEstimate
    refused: ProportionEstimate


def proportions_from_counts(
    n_correct: int, n_wrong: int, n_refused: int, z: float = DEFAULT_Z, method: str = "agresti_coull"
) -> OutcomeProportions:
    n = n_correct + n_wrong + n_refused
    if n == 0:
        raise UndefinedEstimateError("no classified attempts: proportions undefined")

    def build(x: int) -> ProportionEstimate:
        est = _METHODS[method](x, n, z)
        return ProportionEstimate(
            x=x, n=n, z=z, method=est.method, point=x / n, lo=est.lo, hi=est.hi
        )

    return OutcomeProportions(
        correct=build(n_correct), wrong=build(n_wrong), refused=build(n_refused)
    )


def proportions_from_outcomes(attempts, z: float = DEFAULT_Z, method: str = "agresti_coull") -> OutcomeProportions:
    """Compute C/W/R proportions from classified attempts.

    Attempts whose provider errored have no outcome and are excluded from the
    denominator.
    """
    counts = {"Correct": 0, "Wrong": 0, "Refused": 0}
    for attempt in attempts:
        outcome = getattr(attempt, "outcome", None) or (
            attempt.get("outcome") if isinstance(attempt, dict) else None
        )
        if outcome in counts:
            counts[outcome] += 1
    return proportions_from_counts(
        counts["Correct"], counts["Wrong"], counts["Refused"], z=z, method=method
    )


def sample_validation_subset(findings: list, size: int, seed: int) -> list:
    """Uniform sample without replacement, stratified by tool.

    Stratum quotas follow largest-remainder apportionment over per-tool
    population shares; the result is fully determined by the seed and returned
    in a normalized (sorted) order.
    """
    if size > len(findings):
        raise DomainError(f"sample size {size} exceeds population {len(findings)}")
    if size < 0:
        raise DomainError("sample size must be >= 0")

    def sort_key(f):
        return (
            f.tool,
            f.chart or "",
            f.resource.kind,
            f.resource.normalized_namespace,
            f.resource.name,
            f.location or "",
            f.policy.policy_id,
        )

    by_tool: dict[str, list] = {}
    for f in sorted(findings, key=sort_key):
        by_tool.setdefault(f.tool, []).append(f)

    total = len(findings)
    tools = sorted(by_tool)
    quotas = {}
    remainders = []
    assigned = 0
    for tool in tools:
        share = size * len(by_tool[tool]) / total
        quotas[tool] = int(share)
        assigned += quotas[tool]
        remainders.append((-(share - int(share)), tool))
    remainders.sort()
    for _, tool in remainders[: size - assigned]:
        quotas[tool] += 1

    rng = random.Random(seed)
    chosen = []
    for tool in tools:
        chosen.extend(rng.sample(by_tool[tool], quotas[tool]))
    return sorted(chosen, key=sort_key)
