"""Bit-exact codec between codewords and real values.

Codeword layout is big-field-first: ``s | E_X | M_X`` with the sign in the
MSB. A nonzero codeword decodes to ``(-1)^s * (1 + M_X/2^m) * 2^(E_X - E_B)``
where ``E_B`` is the integer exponent bias. Decoding is exact in double
precision for every supported format and bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import MinifloatFormat, ZeroEncoding

# enumerate_values materialises every codeword; cap the width so a typo can
# not ask for a multi-gigabyte table.
_ENUMERATE_MAX_WIDTH = 24


class NotRepresentableError(ValueError):
    """Value is not in the exact value set of a (format, bias) pair."""


@dataclass(frozen=True)
class Codeword:
    """A packed codeword; field extraction is pure bit slicing."""

    bits: int

    def sign(self, fmt: MinifloatFormat) -> int:
        return (self.bits >> (fmt.e + fmt.m)) & 1

    def exp_field(self, fmt: MinifloatFormat) -> int:
        return (self.bits >> fmt.m) & ((1 << fmt.e) - 1)

    def mant_field(self, fmt: MinifloatFormat) -> int:
        return self.bits & ((1 << fmt.m) - 1)


def make_codeword(sign: int, exp_field: int, mant_field: int, fmt: MinifloatFormat) -> Codeword:
    if sign not in (0, 1):
        raise ValueError(f"sign bit must be 0 or 1, got {sign}")
    if not 0 <= exp_field <= fmt.exp_field_max:
        raise ValueError(f"exponent field {exp_field} out of range for {fmt}")
    if not 0 <= mant_field < (1 << fmt.m):
        raise ValueError(f"mantissa field {mant_field} out of range for {fmt}")
    return Codeword((sign << (fmt.e + fmt.m)) | (exp_field << fmt.m) | mant_field)


def _validate_bits(c: Codeword, fmt: MinifloatFormat) -> None:
    if not 0 <= c.bits < (1 << fmt.width):
        raise ValueError(f"codeword 0x{c.bits:x} out of range for {fmt}")


def decode(c: Codeword, fmt: MinifloatFormat, e_b: int) -> float:
    """Decode a codeword to its real value. Total over valid codewords."""
    _validate_bits(c, fmt)
    s, ex, mx = c.sign(fmt), c.exp_field(fmt), c.mant_field(fmt)
    if fmt.zero_encoding is ZeroEncoding.ZERO_BINADE:
        if ex == 0:
            return 0.0
    elif ex == 0 and mx == 0:
        # covers the negative-zero pattern as well
        return 0.0
    value = math.ldexp((1 << fmt.m) + mx, ex - e_b - fmt.m)
    return -value if s else value


def encode(v: float, fmt: MinifloatFormat, e_b: int) -> Codeword:
    """Encode an exactly representable value; zero gets the all-zero codeword.

    Raises NotRepresentableError when ``v`` is not in the value set (quantize
    first if in doubt).
    """
    if not math.isfinite(v):
        raise NotRepresentableError(f"{v!r} is not finite")
    if v == 0.0:
        return Codeword(0)
    sign = 1 if v < 0 else 0
    a = abs(v)
    mant, exp2 = math.frexp(a)  # a = mant * 2^exp2, mant in [0.5, 1)
    binade = exp2 - 1
    ex = binade + e_b
    if not 0 <= ex <= fmt.exp_field_max:
        raise NotRepresentableError(f"{v!r} outside exponent range of {fmt} with bias {e_b}")
    frac = math.ldexp(a, fmt.m - binade) - (1 << fmt.m)
    mx = int(frac)
    if frac != mx or not 0 <= mx < (1 << fmt.m):
        raise NotRepresentableError(f"{v!r} not on the mantissa grid of {fmt}")
    if ex == 0:
        if fmt.zero_encoding is ZeroEncoding.ZERO_BINADE:
            raise NotRepresentableError(
                f"{v!r} falls in the zero binade of {fmt} with bias {e_b}"
            )
        if mx == 0:
            # that pattern is the zero codeword, so the value itself is absent
            raise NotRepresentableError(
                f"{v!r} collides with the zero codeword of {fmt} with bias {e_b}"
            )
    return make_codeword(sign, ex, mx, fmt)


def decode_bits_array(bits: np.ndarray, fmt: MinifloatFormat, e_b: int) -> np.ndarray:
    """Vectorised decode of an array of packed codeword integers."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size and (bits.min() < 0 or bits.max() >= (1 << fmt.width)):
        raise ValueError(f"codeword out of range for {fmt}")
    s = (bits >> (fmt.e + fmt.m)) & 1
    ex = (bits >> fmt.m) & ((1 << fmt.e) - 1)
    mx = bits & ((1 << fmt.m) - 1)
    values = np.ldexp(((1 << fmt.m) + mx).astype(np.float64), ex - e_b - fmt.m)
    values[s == 1] *= -1.0
    if fmt.zero_encoding is ZeroEncoding.ZERO_BINADE:
        values[ex == 0] = 0.0
    else:
        values[(ex == 0) & (mx == 0)] = 0.0
    return values


def enumerate_values(fmt: MinifloatFormat, e_b: int) -> np.ndarray:
    """All distinct decoded values of a (format, bias) pair, increasing.

    Cardinality is 2^width - 1 for zero-point (the two signed zero patterns
    alias) and 2^width - (2*2^m - 1) for zero-binade.
    """
    if fmt.width > _ENUMERATE_MAX_WIDTH:
        raise ValueError(
            f"{fmt} has {fmt.width}-bit codewords; refusing to enumerate more "
            f"than {_ENUMERATE_MAX_WIDTH} bits"
        )
    bits = np.arange(1 << fmt.width, dtype=np.int64)
    return np.unique(decode_bits_array(bits, fmt, e_b))
