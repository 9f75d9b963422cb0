"""Saturating minifloat quantizer with a learned real exponent bias.

The forward path, elementwise over a tensor X:

    E_B     = ceil(E0)
    X_c     = clamp(X, -x_max, x_max)
    scale   = 2^(floor(log2 |X_c|) - m)
    X_q     = round_to_nearest_even(X_c / scale) * scale
    X_q     = 0 where |X_q| < x_min

Every step is exact in double precision (the binade is taken from frexp, the
scale is a power of two), so outputs land exactly on the representable grid.
Note the flush step follows the rounded value: inputs just below x_min can map
to 0 even when x_min is the nearer grid point.

The backward path is a straight-through estimator: the gradient passes
through unchanged (optionally zeroed outside the clamp range), while the
bias gradient collects -ln(2) * x_max * sign(X) over saturated elements only;
rounding, flush and the ceil are treated as locally constant.
"""

from __future__ import annotations

import math

import numpy as np

from .formats import MinifloatFormat

_LN2 = math.log(2.0)


class NonFiniteInputError(ValueError):
    """An input element is NaN or infinite."""


class InitMode:
    """Exponent-bias initialisation rules from a maximum magnitude."""

    PAPER_FORMULA = "paper-formula"  # 2^(e-1) - ceil(log2(max/(2 - 2^-m)))
    TIGHT_FIT = "tight-fit"          # 2^e - 1 - ceil(...): smallest x_max >= max


class QuantizerState:
    """Learned exponent bias for one tensor role.

    The real bias ``e0`` is the trainable quantity; the integer bias used by
    the forward path is ``ceil(e0)``, recomputed on every read. ``e0`` must
    stay finite; assigning a non-finite value raises immediately so training
    aborts with a usable diagnostic.
    """

    __slots__ = ("format", "learnable", "_e0", "grad_e0", "observed_max")

    def __init__(self, fmt: MinifloatFormat, e0: float | None = None, learnable: bool = False):
        self.format = fmt
        self.learnable = learnable
        self._e0: float | None = None
        if e0 is not None:
            self.e0 = e0
        self.grad_e0 = 0.0
        self.observed_max = 0.0

    @property
    def e0(self) -> float:
        if self._e0 is None:
            raise RuntimeError("exponent bias not set; calibrate or assign e0 first")
        return self._e0

    @e0.setter
    def e0(self, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteInputError(f"exponent bias became non-finite: {value!r}")
        self._e0 = value

    @property
    def is_set(self) -> bool:
        return self._e0 is not None

    @property
    def e_b(self) -> int:
        """Integer bias ceil(e0); never cached."""
        return math.ceil(self.e0)

    def observe(self, x: np.ndarray) -> None:
        if x.size:
            self.observed_max = max(self.observed_max, float(np.max(np.abs(x))))

    def __repr__(self) -> str:
        e0 = f"{self._e0:g}" if self._e0 is not None else "unset"
        return f"QuantizerState({self.format}, e0={e0}, learnable={self.learnable})"


def _check_finite(x: np.ndarray) -> None:
    finite = np.isfinite(x)
    if not finite.all():
        idx = int(np.flatnonzero(~finite.ravel())[0])
        raise NonFiniteInputError(
            f"non-finite element {x.ravel()[idx]!r} at flat index {idx}"
        )


def quantize(x, fmt: MinifloatFormat, e0: float) -> np.ndarray:
    """Quantize a tensor onto the (fmt, ceil(e0)) grid. Idempotent.

    Biases are limited to |ceil(e0)| <= 900 so that every intermediate stays
    inside the normal double range and the arithmetic is exact.
    """
    if not math.isfinite(e0):
        raise NonFiniteInputError(f"exponent bias must be finite, got {e0!r}")
    e_b = math.ceil(e0)
    if abs(e_b) > 900:
        raise NonFiniteInputError(f"exponent bias {e_b} outside the supported range")
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    x_max = fmt.x_max(e_b)
    x_min = fmt.x_min(e_b)

    xc = np.clip(x, -x_max, x_max)
    # frexp gives |xc| = mant * 2^exp2 with mant in [0.5, 1): the binade is
    # exp2 - 1, exact where floor(log2) would be one ulp off near boundaries.
    # Inputs below binade -1000 sit far under any representable x_min; the
    # floor keeps the scale a nonzero power of two and they flush to 0.
    _, exp2 = np.frexp(xc)
    scale = np.ldexp(1.0, np.maximum(exp2, -1000) - 1 - fmt.m)
    q = np.rint(xc / scale) * scale  # exact: power-of-two scale
    q[np.abs(q) < x_min] = 0.0
    return q


def saturation_bias_grad(g_up: np.ndarray, x: np.ndarray, fmt: MinifloatFormat,
                         e0: float) -> float:
    """Bias gradient: sum of g_up * (-ln 2) * x_max * sign(X) over |X| > x_max."""
    e_b = math.ceil(e0)
    x_max = fmt.x_max(e_b)
    saturated = np.abs(x) > x_max
    if not saturated.any():
        return 0.0
    return -_LN2 * x_max * float(np.sum(g_up[saturated] * np.sign(x[saturated])))


def quantize_backward(
    g_up,
    x,
    fmt: MinifloatFormat,
    e0: float,
    ste_clip_zero: bool = False,
) -> tuple[np.ndarray, float]:
    """Straight-through backward of :func:`quantize`.

    Returns (g_x, g_e0). g_x equals the upstream gradient (zeroed outside
    [-x_max, x_max] when ``ste_clip_zero``); g_e0 sums
    ``g_up * (-ln 2) * x_max * sign(X)`` over elements with |X| > x_max.
    """
    g_up = np.asarray(g_up, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if g_up.shape != x.shape:
        raise ValueError(f"gradient shape {g_up.shape} != input shape {x.shape}")
    if ste_clip_zero:
        x_max = fmt.x_max(math.ceil(e0))
        g_x = np.where(np.abs(x) > x_max, 0.0, g_up)
    else:
        g_x = g_up.copy()
    return g_x, saturation_bias_grad(g_up, x, fmt, e0)


def _ceil_log2_ratio(num: float, den: float) -> int:
    """Exact ceil(log2(num/den)) for positive finite doubles."""
    pn, qn = num.as_integer_ratio()
    pd, qd = den.as_integer_ratio()
    a = pn * qd  # num/den = a/b with a, b > 0
    b = qn * pd

    def le_pow2(k: int) -> bool:
        return a <= (b << k) if k >= 0 else (a << -k) <= b

    k = a.bit_length() - b.bit_length() + 1
    while not le_pow2(k):
        k += 1
    while le_pow2(k - 1):
        k -= 1
    return k


def init_exponent_bias(max_abs: float, fmt: MinifloatFormat, mode: str = InitMode.PAPER_FORMULA) -> float:
    """Initial real exponent bias from the largest observed magnitude."""
    if not (math.isfinite(max_abs) and max_abs > 0):
        raise ValueError(f"max_abs must be positive and finite, got {max_abs!r}")
    top_mant = 2.0 - math.ldexp(1.0, -fmt.m)
    k = _ceil_log2_ratio(max_abs, top_mant)
    if mode == InitMode.PAPER_FORMULA:
        return float((1 << (fmt.e - 1)) - k)
    if mode == InitMode.TIGHT_FIT:
        return float(fmt.exp_field_max - k)
    raise ValueError(f"unknown init mode {mode!r}")


def fixed_point_quantize(x, bits: int, max_abs: float) -> np.ndarray:
    """Symmetric fixed-point quantization with a power-of-two scale.

    The scale is S = 2^ceil(log2 max_abs); codes are clamped to the signed
    ``bits``-bit range [-2^(bits-1), 2^(bits-1)-1].
    """
    if bits < 2:
        raise ValueError(f"bits must be >= 2, got {bits}")
    if not (math.isfinite(max_abs) and max_abs > 0):
        raise ValueError(f"max_abs must be positive and finite, got {max_abs!r}")
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    step = math.ldexp(1.0, _ceil_log2_ratio(max_abs, 1.0) - (bits - 1))
    half = 1 << (bits - 1)
    codes = np.clip(np.rint(x / step), -half, half - 1)
    return codes * step
