"""Golden models of the minifloat multiplier and hybrid fixed-point MAC.

The multiplier is purely combinational: it XORs the signs, adds the raw
exponent fields into an (e+1)-bit output, and truncates the exact significand
product (2 integer bits, 2m fractional bits) down to m+1 fractional bits.
There is no renormalisation inside the multiplier; the fixed-point conversion
absorbs it. Zero detection depends on the zero encoding: the all-zero-binade
variant only looks at the exponent field, the zero-point variant also needs
the mantissa field.

The hybrid MAC converts each truncated product to a signed integer on a
shared fixed-point grid and accumulates in W-bit two's-complement arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .codec import Codeword
from .formats import MinifloatFormat, ZeroEncoding


class OverflowPolicy(enum.Enum):
    SATURATE = "saturate"
    ERROR = "error"


class MacOverflowError(OverflowError):
    def __init__(self, message: str, term_index: int | None = None):
        super().__init__(message)
        self.term_index = term_index


@dataclass(frozen=True)
class MulResult:
    """Raw multiplier output fields.

    ``mant_ext`` is an integer in units of 2^-(m+1): two integer bits and
    m+1 fractional bits, so 2^(m+1) <= mant_ext < 2^(m+3) for nonzero
    results. ``exp_ext`` is the raw sum of the input exponent fields and
    still carries twice the encoding bias.
    """

    sign: int
    exp_ext: int
    mant_ext: int
    is_zero: int


def zero_detect(c: Codeword, fmt: MinifloatFormat) -> int:
    """1 iff the codeword means zero under the format's zero encoding."""
    if fmt.zero_encoding is ZeroEncoding.ZERO_BINADE:
        return int(c.exp_field(fmt) == 0)
    return int(c.exp_field(fmt) == 0 and c.mant_field(fmt) == 0)


def minifloat_mul_golden(a: Codeword, b: Codeword, fmt: MinifloatFormat, e_b: int = 0) -> MulResult:
    """Bit-exact model of the minifloat multiplier datapath.

    The output fields do not depend on the exponent bias (exp_ext keeps the
    raw field sum); ``e_b`` only matters when decoding the result value.
    """
    if zero_detect(a, fmt) or zero_detect(b, fmt):
        return MulResult(sign=0, exp_ext=0, mant_ext=0, is_zero=1)
    m = fmt.m
    sign = a.sign(fmt) ^ b.sign(fmt)
    # exact significand product with 2m fractional bits
    p = ((1 << m) + a.mant_field(fmt)) * ((1 << m) + b.mant_field(fmt))
    mant_ext = p >> (m - 1)  # keep m+1 fractional bits, truncate toward zero
    exp_ext = a.exp_field(fmt) + b.exp_field(fmt)  # fits in e+1 bits
    return MulResult(sign=sign, exp_ext=exp_ext, mant_ext=mant_ext, is_zero=0)


def mul_result_value(r: MulResult, fmt: MinifloatFormat, exp_bias: int) -> float:
    """Decoded real value of a multiplier result.

    ``exp_bias`` is the total bias carried by exp_ext (2*E_B when both
    operands share one bias, E_B_x + E_B_w otherwise).
    """
    if r.is_zero:
        return 0.0
    value = math.ldexp(r.mant_ext, r.exp_ext - exp_bias - (fmt.m + 1))
    return -value if r.sign else value


@dataclass(frozen=True)
class MacConfig:
    """Fixed-point accumulator configuration for one (format, biases) setup.

    ``lsb_exp`` is the log2 weight of one accumulator LSB; the default
    -(exp_bias + m + 1) makes every truncated product exactly representable.
    """

    fmt: MinifloatFormat
    exp_bias: int  # sum of the operand exponent biases
    width: int = 32
    policy: OverflowPolicy = OverflowPolicy.SATURATE
    lsb_exp: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.width < self.fmt.m + 3:
            raise ValueError(f"accumulator width {self.width} < m + 3")
        if self.lsb_exp is None:
            object.__setattr__(self, "lsb_exp", -(self.exp_bias + self.fmt.m + 1))

    @classmethod
    def for_format(
        cls,
        fmt: MinifloatFormat,
        e_b: int,
        width: int = 32,
        policy: OverflowPolicy = OverflowPolicy.SATURATE,
    ) -> "MacConfig":
        return cls(fmt=fmt, exp_bias=2 * e_b, width=width, policy=policy)

    @property
    def int_min(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def int_max(self) -> int:
        return (1 << (self.width - 1)) - 1


def _fit(value: int, cfg: MacConfig, term_index: int | None = None) -> int:
    if cfg.int_min <= value <= cfg.int_max:
        return value
    if cfg.policy is OverflowPolicy.SATURATE:
        return cfg.int_min if value < cfg.int_min else cfg.int_max
    raise MacOverflowError(
        f"{value} outside {cfg.width}-bit accumulator range"
        + (f" at term {term_index}" if term_index is not None else ""),
        term_index,
    )


def to_fixed_point(r: MulResult, cfg: MacConfig, term_index: int | None = None) -> int:
    """Signed integer whose value times 2^lsb_exp equals the product exactly."""
    if r.is_zero:
        return 0
    shift = r.exp_ext - cfg.exp_bias - (cfg.fmt.m + 1) - cfg.lsb_exp
    if shift >= 0:
        mag = r.mant_ext << shift
    else:
        mag, rem = divmod(r.mant_ext, 1 << -shift)
        if rem:
            raise ValueError(
                f"product not representable at lsb 2^{cfg.lsb_exp} "
                f"(mant_ext={r.mant_ext}, exp_ext={r.exp_ext})"
            )
    return _fit(-mag if r.sign else mag, cfg, term_index)


def hybrid_mac_dot(
    x: list[Codeword],
    w: list[Codeword],
    fmt: MinifloatFormat,
    e_b_x: int,
    e_b_w: int,
    cfg: MacConfig | None = None,
) -> float:
    """Dot product through the minifloat multiplier and fixed-point adder.

    Exact (equal to the rational sum of the truncated products) whenever the
    W-bit accumulator never overflows.
    """
    if len(x) != len(w):
        raise ValueError(f"length mismatch: {len(x)} vs {len(w)}")
    if cfg is None:
        cfg = MacConfig(fmt=fmt, exp_bias=e_b_x + e_b_w)
    elif cfg.exp_bias != e_b_x + e_b_w:
        raise ValueError("MacConfig exp_bias does not match the operand biases")
    acc = 0
    for i, (xi, wi) in enumerate(zip(x, w)):
        term = to_fixed_point(minifloat_mul_golden(xi, wi, fmt), cfg, term_index=i)
        acc = _fit(acc + term, cfg, term_index=i)
    return math.ldexp(acc, cfg.lsb_exp)


# Post-synthesis LUT usage of the multiplier for each (e, m) and zero
# encoding; reference data, not derived by this package.
_LUT_ZERO_BINADE = {
    (1, 1): 4, (1, 2): 4, (1, 3): 6,
    (2, 1): 6, (2, 2): 6, (2, 3): 8,
    (3, 1): 8, (3, 2): 8, (3, 3): 10,
    (4, 1): 9, (4, 2): 9, (4, 3): 11,
}
_LUT_ZERO_POINT = {
    (1, 1): 4, (1, 2): 6, (1, 3): 8,
    (2, 1): 7, (2, 2): 7, (2, 3): 9,
    (3, 1): 7, (3, 2): 8, (3, 3): 11,
    (4, 1): 9, (4, 2): 10, (4, 3): 13,
}

LUT_TABLE = {
    ZeroEncoding.ZERO_BINADE: dict(_LUT_ZERO_BINADE),
    ZeroEncoding.ZERO_POINT: dict(_LUT_ZERO_POINT),
}


def lut_cost(fmt: MinifloatFormat) -> int:
    """LUT count of the multiplier for formats with e in 1..4, m in 1..3."""
    try:
        return LUT_TABLE[fmt.zero_encoding][(fmt.e, fmt.m)]
    except KeyError:
        raise LookupError(f"{fmt} outside the LUT reference table") from None


def verify_exhaustive(fmt: MinifloatFormat, e_b: int) -> tuple[int, int, float]:
    """Check every codeword pair against exact rational arithmetic.

    Returns (pairs, exact_pairs, max_relative_error). A pair counts as exact
    when the decoded multiplier output equals the significand product
    truncated to m+1 fractional bits (and the zero flag matches the zero
    rule); the relative error is measured against the untruncated product.
    """
    from fractions import Fraction

    from .codec import decode

    n = 1 << fmt.width
    words = [Codeword(bits) for bits in range(n)]
    values = [Fraction(decode(c, fmt, e_b)) for c in words]
    pairs = exact = 0
    max_rel = 0.0
    grid = Fraction(1, 1 << (fmt.m + 1))
    for i, a in enumerate(words):
        for j, b in enumerate(words):
            pairs += 1
            r = minifloat_mul_golden(a, b, fmt)
            product = values[i] * values[j]
            if product == 0:
                if r.is_zero:
                    exact += 1
                continue
            scale = Fraction(2) ** (a.exp_field(fmt) + b.exp_field(fmt) - 2 * e_b)
            sig = abs(product) / scale
            truncated = (sig // grid) * grid * scale
            got = Fraction(abs(mul_result_value(r, fmt, 2 * e_b)))
            sign_ok = (r.sign == 1) == (product < 0)
            if not r.is_zero and sign_ok and got == truncated:
                exact += 1
            rel = abs(got * (1 if product > 0 else 1) - abs(product)) / abs(product)
            max_rel = max(max_rel, float(rel))
    return pairs, exact, max_rel


def emit_test_vectors(fmt: MinifloatFormat, e_b: int, stream) -> int:
    """Write one stimulus line per codeword pair; returns the line count.

    Line format (hexadecimal fields):
        a_bits b_bits sign exp_ext mant_ext is_zero
    """
    n = 1 << fmt.width
    count = 0
    for a_bits in range(n):
        a = Codeword(a_bits)
        for b_bits in range(n):
            r = minifloat_mul_golden(a, Codeword(b_bits), fmt, e_b)
            stream.write(
                f"{a_bits:x} {b_bits:x} {r.sign:x} {r.exp_ext:x} {r.mant_ext:x} {r.is_zero:x}\n"
            )
            count += 1
    return count
