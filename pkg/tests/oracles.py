"""Independent reference implementations used only by the tests.

These deliberately avoid the code paths of the package: the quantizer oracle
works on exact integer ratios with a hand-rolled ties-to-even division, the
multiplier oracle works in Fractions, and gradients come from central finite
differences. They encode the intended semantics, not the implementation.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from mfqat.formats import MinifloatFormat, ZeroEncoding


def oracle_quantize_scalar(x: float, fmt: MinifloatFormat, e0: float) -> float:
    """Clamp, round within the binade with ties to even, flush below x_min."""
    e_b = math.ceil(e0)
    x_max = fmt.x_max(e_b)
    x_min = fmt.x_min(e_b)
    if x == 0.0:
        return 0.0
    sign = -1.0 if x < 0 else 1.0
    a = min(abs(x), x_max)
    p, q = a.as_integer_ratio()  # q is a power of two
    binade = (p.bit_length() - 1) - (q.bit_length() - 1)
    shift = fmt.m - binade
    num, den = (p << shift, q) if shift >= 0 else (p, q << -shift)
    n, rem = divmod(num, den)
    if 2 * rem > den or (2 * rem == den and n % 2 == 1):
        n += 1
    value = math.ldexp(n, binade - fmt.m)
    if value < x_min:
        return 0.0
    return sign * value


def oracle_quantize(xs, fmt: MinifloatFormat, e0: float) -> np.ndarray:
    return np.array([oracle_quantize_scalar(float(v), fmt, e0) for v in np.ravel(xs)])


def oracle_mul_fields(a_bits: int, b_bits: int, fmt: MinifloatFormat):
    """Expected multiplier output as (sign, exp_ext, mant_ext, is_zero),
    derived through rational arithmetic."""
    e, m = fmt.e, fmt.m
    def fields(bits):
        return (bits >> (e + m)) & 1, (bits >> m) & ((1 << e) - 1), bits & ((1 << m) - 1)
    sa, ea, ma = fields(a_bits)
    sb, eb, mb = fields(b_bits)
    def is_zero(ex, mx):
        if fmt.zero_encoding is ZeroEncoding.ZERO_BINADE:
            return ex == 0
        return ex == 0 and mx == 0
    if is_zero(ea, ma) or is_zero(eb, mb):
        return 0, 0, 0, 1
    sig = Fraction((1 << m) + ma, 1 << m) * Fraction((1 << m) + mb, 1 << m)
    mant = (sig * (1 << (m + 1))).__floor__()  # truncate toward zero (sig > 0)
    return sa ^ sb, ea + eb, int(mant), 0


def oracle_mul_value(a_bits: int, b_bits: int, fmt: MinifloatFormat, e_b: int) -> Fraction:
    """Exact value of the truncated product, for the value contract."""
    sign, exp_ext, mant, zero = oracle_mul_fields(a_bits, b_bits, fmt)
    if zero:
        return Fraction(0)
    value = Fraction(mant, 1 << (fmt.m + 1)) * Fraction(2) ** (exp_ext - 2 * e_b)
    return -value if sign else value


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(1e-6, float(np.max(np.abs(numeric))))
    err = float(np.max(np.abs(analytic - numeric))) / scale
    assert err < rtol, f"gradient mismatch: relative error {err:.3e} >= {rtol}"
