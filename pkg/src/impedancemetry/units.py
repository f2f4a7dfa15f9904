"""Parsing and formatting of physical quantities with explicit unit suffixes.

Configuration files carry strings such as ``"136 fF"`` or ``"3.7 aF/sqrt(Hz)"``.
Everything inside the package is SI; this module is the only place where
prefixes are interpreted.
"""

from __future__ import annotations

import math
import re
from decimal import Decimal

PREFIXES = {
    "a": 1e-18,
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "µ": 1e-6,
    "μ": 1e-6,
    "m": 1e-3,
    "": 1.0,
    "k": 1e3,
    "M": 1e6,
    "G": 1e9,
}

# canonical unit -> accepted spellings
UNITS = {
    "F": ("F",),
    "H": ("H",),
    "Hz": ("Hz",),
    "Ohm": ("Ohm", "ohm", "Ω"),
    "S": ("S",),
    "V": ("V",),
    "A": ("A",),
    "s": ("s",),
    "W": ("W",),
    "rad": ("rad",),
    "deg": ("deg", "°"),
    "dB": ("dB",),
    "Ohm/F": ("Ohm/F", "ohm/F", "Ω/F"),
    "F/V": ("F/V",),
    "rad/sqrt(Hz)": ("rad/sqrt(Hz)", "rad/√Hz"),
    "deg/sqrt(Hz)": ("deg/sqrt(Hz)", "°/√Hz"),
    "F/sqrt(Hz)": ("F/sqrt(Hz)", "F/√Hz"),
    "rad/F": ("rad/F",),
    "deg/F": ("deg/F", "°/F"),
    "mm2": ("mm2", "mm^2"),
    "H/mm2": ("H/mm2", "H/mm^2"),
    "1": ("1",),
}

_SPELLING = {s: canon for canon, spellings in UNITS.items() for s in spellings}
# dimension-less scale units that are not SI-prefixable
_NO_PREFIX = {"dB", "1", "mm2", "deg", "rad"}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)\s*$")


class UnitError(ValueError):
    """Raised for a malformed quantity or a unit that does not match."""


def _split_unit(token: str) -> tuple[int, str]:
    if token in _SPELLING:
        return 0, _SPELLING[token]
    for prefix in sorted(PREFIXES, key=len, reverse=True):
        if prefix and token.startswith(prefix):
            rest = token[len(prefix):]
            if rest in _SPELLING and _SPELLING[rest] not in _NO_PREFIX:
                return round(math.log10(PREFIXES[prefix])), _SPELLING[rest]
    raise UnitError(f"unknown unit {token!r}")


def parse_quantity(text: str, unit: str) -> float:
    """Parse ``text`` and return its value in SI units of ``unit``.

    Degrees are converted to radians when ``unit`` is a radian unit.

    Examples
    --------
    >>> parse_quantity("136 fF", "F")
    1.36e-13
    >>> round(parse_quantity("2 m°/√Hz", "rad/sqrt(Hz)"), 7)
    3.49e-05
    """
    if not isinstance(text, str):
        raise UnitError(f"expected a string with a unit suffix for [{unit}], got {text!r}")
    m = _QUANTITY.match(text)
    if m is None:
        raise UnitError(f"cannot parse quantity {text!r}; expected '<number> <unit>'")
    exponent, canon = _split_unit(m.group(2))
    # decimal scaling keeps "23 fF" identical to the literal 23e-15
    value = float(Decimal(m.group(1)).scaleb(exponent))
    if canon == unit:
        return value
    if canon == "deg" and unit == "rad":
        return math.radians(value)
    if canon == "deg/sqrt(Hz)" and unit == "rad/sqrt(Hz)":
        return math.radians(value)
    if canon == "deg/F" and unit == "rad/F":
        return math.radians(value)
    raise UnitError(f"{text!r} has unit {canon!r}, expected {unit!r}")


_ENGINEERING = ("a", "f", "p", "n", "u", "m", "", "k", "M", "G")


def _exact(value: float, prefix: str, unit: str) -> str | None:
    scaled = value / PREFIXES[prefix]
    # strip float noise from the prefix division, keep it only if exact
    text = f"{scaled:.15g}"
    if parse_quantity(f"{text} {prefix}{unit}", unit) == value:
        return text
    return None


def format_quantity(value: float, unit: str) -> str:
    """Format an SI value with an engineering prefix.

    The prefix puts the mantissa in ``[1, 1000)`` when that is exact under
    :func:`parse_quantity`; otherwise the plain SI value is written.

    >>> format_quantity(1.36e-13, "F")
    '136 fF'
    """
    value = float(value)
    if value == 0 or not math.isfinite(value) or unit in _NO_PREFIX or unit not in UNITS:
        return f"{value!r} {unit}"
    exp3 = int(math.floor(math.log10(abs(value)) / 3))
    idx = min(max(exp3 + 6, 0), len(_ENGINEERING) - 1)
    text = _exact(value, _ENGINEERING[idx], unit)
    if text is not None:
        return f"{text} {_ENGINEERING[idx]}{unit}"
    return f"{value!r} {unit}"
