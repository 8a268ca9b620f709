"""Parsing and formatting of exact and floating scalars."""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational, Real
from typing import Union

from .errors import ArgumentError

Number = Union[int, float, Fraction]


def as_number(value) -> Number:
    """Coerce ``value`` to int, float or Fraction; strings such as "3/8" become Fractions."""
    if isinstance(value, bool):
        raise ArgumentError(f"boolean is not a number: {value!r}")
    if isinstance(value, (int, Fraction)):
        return value
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, Real):
        v = float(value)
        if not math.isfinite(v):
            raise ArgumentError(f"non-finite number: {value!r}")
        return v
    if isinstance(value, str):
        text = value.strip()
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError):
            pass
        try:
            v = float(text)
        except ValueError:
            raise ArgumentError(f"cannot parse number: {value!r}") from None
        if not math.isfinite(v):
            raise ArgumentError(f"non-finite number: {value!r}")
        return v
    raise ArgumentError(f"not a number: {value!r}")


def to_jsonable(value: Number):
    """Exact rationals become "p/q" strings (plain ints when integral); floats stay floats."""
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return int(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, int):
        return int(value)
    return float(value)


def parse_vector(text: str) -> list[Number]:
    """Parse "1,1/2,0.3" into a list of numbers."""
    parts = [p for p in text.replace(" ", "").split(",") if p != ""]
    if not parts:
        raise ArgumentError(f"empty vector: {text!r}")
    return [as_number(p) for p in parts]


def parse_matrix(text: str) -> list[list[Number]]:
    """Parse "a,b;c,d" (rows separated by semicolons) into a nested list."""
    rows = [parse_vector(row) for row in text.split(";") if row.strip()]
    if not rows or any(len(row) != len(rows[0]) for row in rows):
        raise ArgumentError(f"ragged or empty matrix: {text!r}")
    return rows
