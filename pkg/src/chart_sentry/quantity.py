"""Kubernetes resource quantity parsing.

Quantities appear in manifests as plain numbers ("2", "0.5"), decimal-suffixed
values ("100m", "250M"), binary-suffixed values ("250Mi", "1Ti"), or
scientific notation ("1e3"). Values are parsed exactly as Fractions so that
sanity thresholds compare without float noise.
"""

from __future__ import annotations

import re
from fractions import Fraction


class QuantityError(ValueError):
    """The value is not a parseable Kubernetes quantity."""


_SUFFIX: dict[str, Fraction] = {
    "n": Fraction(1, 10**9),
    "u": Fraction(1, 10**6),
    "m": Fraction(1, 1000),
    "": Fraction(1),
    "k": Fraction(10**3),
    "M": Fraction(10**6),
    "G": Fraction(10**9),
    "T": Fraction(10**12),
    "P": Fraction(10**15),
    "E": Fraction(10**18),
    "Ki": Fraction(2**10),
    "Mi": Fraction(2**20),
    "Gi": Fraction(2**30),
    "Ti": Fraction(2**40),
    "Pi": Fraction(2**50),
    "Ei": Fraction(2**60),
}

# number, then either a scientific exponent (12e3 / 12E3) or a unit suffix
_QUANTITY_RE = re.compile(
    r"^(?P<num>[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+))"
    r"(?:(?P<exp>[eE][+-]?[0-9]+)|(?P<suffix>Ki|Mi|Gi|Ti|Pi|Ei|[numkMGTPE]))?$"
)


def parse_quantity(value: object) -> Fraction:
    """Parse a Kubernetes quantity into an exact Fraction.

    Accepts ints/floats (as YAML delivers bare numbers) and suffixed strings.
    Raises QuantityError for anything else, including booleans and None.
    """
    if isinstance(value, bool) or value is None:
        raise QuantityError(f"not a quantity: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if not isinstance(value, str):
        raise QuantityError(f"not a quantity: {value!r}")

    text = value.strip()
    match = _QUANTITY_RE.match(text)
    if not match:
        raise QuantityError(f"not a quantity: {value!r}")
    number = Fraction(match.group("num"))
    if match.group("exp"):
        number *= Fraction(10) ** int(match.group("exp")[1:])
        return number
    suffix = match.group("suffix") or ""
    if suffix not in _SUFFIX:
        raise QuantityError(f"unknown suffix in quantity: {value!r}")
    return number * _SUFFIX[suffix]
