"""mfqat: bit-exact minifloat arithmetic, quantization-aware training with
learned integer exponent biases, and golden models of the minifloat
multiply-accumulate datapath."""

from ._malloc import tune_malloc

tune_malloc()

from .codec import Codeword, NotRepresentableError, decode, encode, enumerate_values, make_codeword
from .formats import MinifloatFormat, QuantRange, ZeroEncoding, parse_format, quant_range
from .quantizer import (
    InitMode,
    NonFiniteInputError,
    QuantizerState,
    fixed_point_quantize,
    init_exponent_bias,
    quantize,
    quantize_backward,
)

__version__ = "0.1.0"

__all__ = [
    "Codeword",
    "InitMode",
    "MinifloatFormat",
    "NonFiniteInputError",
    "NotRepresentableError",
    "QuantRange",
    "QuantizerState",
    "ZeroEncoding",
    "decode",
    "encode",
    "enumerate_values",
    "fixed_point_quantize",
    "init_exponent_bias",
    "make_codeword",
    "parse_format",
    "quant_range",
    "quantize",
    "quantize_backward",
    "__version__",
]
