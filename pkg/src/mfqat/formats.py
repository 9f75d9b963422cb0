"""Minifloat format descriptors.

A format ``E<e>M<m>`` packs a sign bit, an ``e``-bit exponent field and an
``m``-bit mantissa field into ``1 + e + m`` bits. There are no NaN/Inf or
subnormal encodings: every codeword is a normal value except for the zero
rule, which comes in two flavours:

* ``ZERO_POINT``  -- only the pattern with exponent field 0 *and* mantissa
  field 0 means zero (one extra binade of normal values).
* ``ZERO_BINADE`` -- every codeword with exponent field 0 means zero.

Values that overflow saturate to the largest representable magnitude.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass


class ZeroEncoding(enum.Enum):
    ZERO_POINT = "zero-point"
    ZERO_BINADE = "zero-binade"


_FORMAT_RE = re.compile(r"^e(\d+)m(\d+)(:zb)?$")


@dataclass(frozen=True)
class MinifloatFormat:
    """E<e>M<m> format: 1 sign bit, e exponent bits, m mantissa bits."""

    e: int
    m: int
    zero_encoding: ZeroEncoding = ZeroEncoding.ZERO_POINT

    def __post_init__(self):
        if not 1 <= self.e <= 8:
            raise ValueError(f"exponent bits must be in [1, 8], got {self.e}")
        if not 1 <= self.m <= 23:
            raise ValueError(f"mantissa bits must be in [1, 23], got {self.m}")
        if self.width > 32:
            raise ValueError(f"total width {self.width} exceeds 32 bits")

    @property
    def width(self) -> int:
        """Total codeword width in bits."""
        return 1 + self.e + self.m

    @property
    def exp_field_max(self) -> int:
        """Largest raw exponent field value, 2^e - 1."""
        return (1 << self.e) - 1

    @property
    def ieee_bias(self) -> int:
        """The IEEE-like default exponent bias, 2^(e-1) - 1."""
        return (1 << (self.e - 1)) - 1

    def x_min(self, e_b: int) -> float:
        """Smallest positive representable magnitude for integer bias e_b."""
        if self.zero_encoding is ZeroEncoding.ZERO_POINT:
            # exponent field 0, mantissa field 1
            return math.ldexp(1.0 + math.ldexp(1.0, -self.m), -e_b)
        # exponent field 1, mantissa field 0
        return math.ldexp(1.0, 1 - e_b)

    def x_max(self, e_b: int) -> float:
        """Largest representable magnitude for integer bias e_b."""
        return math.ldexp(2.0 - math.ldexp(1.0, -self.m), self.exp_field_max - e_b)

    def __str__(self) -> str:
        s = f"E{self.e}M{self.m}"
        if self.zero_encoding is ZeroEncoding.ZERO_BINADE:
            s += ":zb"
        return s


@dataclass(frozen=True)
class QuantRange:
    """Representable magnitude range [x_min, x_max] of a (format, bias) pair."""

    x_min: float
    x_max: float

    def __post_init__(self):
        if not 0.0 < self.x_min < self.x_max:
            raise ValueError(f"bad range [{self.x_min}, {self.x_max}]")


def quant_range(fmt: MinifloatFormat, e_b: int) -> QuantRange:
    return QuantRange(fmt.x_min(e_b), fmt.x_max(e_b))


def parse_format(
    text: str, default_encoding: ZeroEncoding = ZeroEncoding.ZERO_POINT
) -> MinifloatFormat:
    """Parse a format string like ``E3M2`` or ``e3m2:zb`` (case-insensitive).

    The ``:zb`` suffix selects the zero-binade encoding; without it
    ``default_encoding`` applies.
    """
    match = _FORMAT_RE.match(text.strip().lower())
    if not match:
        raise ValueError(f"bad format string {text!r}; expected E<e>M<m>[:zb]")
    e, m, zb = int(match.group(1)), int(match.group(2)), match.group(3)
    encoding = ZeroEncoding.ZERO_BINADE if zb else default_encoding
    return MinifloatFormat(e, m, encoding)
