"""Strict SI quantity strings: "36nm", "160uS", "0.63V", "80ns", "1kohm".

A number without a unit is rejected. Values come back normalized: lengths
in nm, everything else in the base SI unit (S, A, V, s, ohm).
"""
from __future__ import annotations

import re

PREFIX = {"": 1.0, "f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6,
          "m": 1e-3, "k": 1e3, "M": 1e6, "G": 1e9}

# unit symbol -> (dimension, scale to the normalized unit)
UNITS = {
    "ohm": ("resistance", 1.0), "Ω": ("resistance", 1.0),
    "S": ("conductance", 1.0),
    "A": ("current", 1.0),
    "V": ("voltage", 1.0),
    "s": ("time", 1.0),
    "m": ("length", 1e9),
}
_ORDER = sorted(UNITS, key=len, reverse=True)
_NUM = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(\S+)\s*$")


class UnitError(ValueError):
    pass


def parse_quantity(text, dimension: str = None):
    """Return (value, dimension). Raises UnitError for anything ambiguous."""
    if not isinstance(text, str):
        raise UnitError(f"{text!r}: expected a string with a unit")
    m = _NUM.match(text)
    if not m:
        raise UnitError(f"{text!r}: expected <number><unit>, e.g. 36nm or 160uS")
    num, sym = float(m.group(1)), m.group(2)
    for u in _ORDER:
        if sym.endswith(u) and sym[: -len(u)] in PREFIX:
            dim, scale = UNITS[u]
            if dimension is not None and dim != dimension:
                raise UnitError(f"{text!r}: is a {dim}, expected a {dimension}")
            return num * PREFIX[sym[: -len(u)]] * scale, dim
    raise UnitError(f"{text!r}: unknown unit {sym!r}")


def parse(text, dimension: str) -> float:
    return parse_quantity(text, dimension)[0]
