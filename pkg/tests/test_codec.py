import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfqat.codec import (
    Codeword,
    NotRepresentableError,
    decode,
    decode_bits_array,
    encode,
    enumerate_values,
    make_codeword,
)
from mfqat.formats import MinifloatFormat, ZeroEncoding

E2M2 = MinifloatFormat(2, 2)


def test_decode_zero_codeword():
    for fmt in (E2M2, MinifloatFormat(3, 1), MinifloatFormat(4, 3, ZeroEncoding.ZERO_BINADE)):
        assert decode(Codeword(0), fmt, 1) == 0.0


def test_decode_examples():
    # (s=0, E=1, M=01) at bias 1 -> (1 + 1/4) * 2^0
    assert decode(make_codeword(0, 1, 0b01, E2M2), E2M2, 1) == 1.25
    # (s=1, E=3, M=11) at bias 1 -> -(1 + 3/4) * 2^2 = -x_max
    assert decode(make_codeword(1, 3, 0b11, E2M2), E2M2, 1) == -7.0
    assert E2M2.x_max(1) == 7.0


def test_negative_zero_pattern_decodes_to_zero():
    negzero = make_codeword(1, 0, 0, E2M2)
    assert decode(negzero, E2M2, 1) == 0.0


def test_zero_binade_decodes_whole_binade_to_zero():
    fmt = MinifloatFormat(2, 2, ZeroEncoding.ZERO_BINADE)
    for mx in range(4):
        for s in (0, 1):
            assert decode(make_codeword(s, 0, mx, fmt), fmt, 1) == 0.0
    # zero-point keeps those as values
    assert decode(make_codeword(0, 0, 1, E2M2), E2M2, 1) == 0.625


def test_encode_examples():
    assert encode(0.0, E2M2, 1).bits == 0
    assert encode(1.25, E2M2, 1) == make_codeword(0, 1, 0b01, E2M2)
    with pytest.raises(NotRepresentableError):
        encode(1.3, E2M2, 1)


def test_encode_rejects_zero_binade_values():
    fmt = MinifloatFormat(2, 2, ZeroEncoding.ZERO_BINADE)
    with pytest.raises(NotRepresentableError):
        encode(0.625, fmt, 1)  # would need the zeroed binade
    with pytest.raises(NotRepresentableError):
        encode(0.5, E2M2, 1)   # collides with the zero codeword
    with pytest.raises(NotRepresentableError):
        encode(float("nan"), E2M2, 1)
    with pytest.raises(NotRepresentableError):
        encode(100.0, E2M2, 1)  # above the exponent range


def test_enumerate_sizes_and_example_grid():
    # 15 distinct values for a 4-bit-wide format with the zero-point rule
    fmt = MinifloatFormat(1, 2)
    values = enumerate_values(fmt, 0)
    assert values.size == 2 ** fmt.width - 1 == 15
    expected_subset = [-3.5, -3.0, -2.5, -2.0, -1.5, 0.0, 1.5, 2.0, 2.5, 3.0, 3.5]
    assert set(expected_subset) <= set(values.tolist())
    assert enumerate_values(MinifloatFormat(1, 1), 0).size == 7


def test_enumerate_sorted_and_symmetric():
    for fmt in (E2M2, MinifloatFormat(3, 3), MinifloatFormat(2, 1, ZeroEncoding.ZERO_BINADE)):
        values = enumerate_values(fmt, 2)
        assert np.all(np.diff(values) > 0)
        np.testing.assert_array_equal(values, -values[::-1])


def test_enumerate_max_equals_x_max():
    values = enumerate_values(E2M2, 1)
    assert values.size == 31
    assert values.max() == 7.0


def test_zero_encoding_cardinality_gap():
    for e in range(1, 5):
        for m in range(1, 4):
            zp = enumerate_values(MinifloatFormat(e, m, ZeroEncoding.ZERO_POINT), 1)
            zb = enumerate_values(MinifloatFormat(e, m, ZeroEncoding.ZERO_BINADE), 1)
            assert zp.size - zb.size == 2 * (2 ** m - 1)


def test_enumerate_width_guard():
    with pytest.raises(ValueError):
        enumerate_values(MinifloatFormat(8, 23), 127)


def test_decode_bits_array_matches_scalar():
    for enc in ZeroEncoding:
        fmt = MinifloatFormat(3, 2, enc)
        bits = np.arange(1 << fmt.width)
        vec = decode_bits_array(bits, fmt, 2)
        scalar = np.array([decode(Codeword(int(b)), fmt, 2) for b in bits])
        np.testing.assert_array_equal(vec, scalar)


@settings(max_examples=200, deadline=None)
@given(
    e=st.integers(1, 4),
    m=st.integers(1, 3),
    e_b=st.integers(-4, 8),
    zb=st.booleans(),
    bits=st.integers(0, (1 << 8) - 1),
)
def test_roundtrip_property(e, m, e_b, zb, bits):
    fmt = MinifloatFormat(e, m, ZeroEncoding.ZERO_BINADE if zb else ZeroEncoding.ZERO_POINT)
    bits %= 1 << fmt.width
    value = decode(Codeword(bits), fmt, e_b)
    again = encode(value, fmt, e_b)
    assert decode(again, fmt, e_b) == value
    if value == 0.0:
        assert again.bits == 0  # canonical zero
