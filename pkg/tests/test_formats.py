import pytest

from mfqat.formats import MinifloatFormat, ZeroEncoding, parse_format, quant_range


def test_parse_basic():
    fmt = parse_format("E3M2")
    assert (fmt.e, fmt.m) == (3, 2)
    assert fmt.zero_encoding is ZeroEncoding.ZERO_POINT
    assert str(fmt) == "E3M2"


def test_parse_case_insensitive_and_suffix():
    fmt = parse_format("e4m3:ZB".lower())
    assert (fmt.e, fmt.m) == (4, 3)
    assert fmt.zero_encoding is ZeroEncoding.ZERO_BINADE
    assert str(fmt) == "E4M3:zb"
    assert parse_format(" E2M1 ").zero_encoding is ZeroEncoding.ZERO_POINT


def test_parse_default_encoding():
    fmt = parse_format("E2M2", default_encoding=ZeroEncoding.ZERO_BINADE)
    assert fmt.zero_encoding is ZeroEncoding.ZERO_BINADE
    # explicit suffix wins over the default
    assert parse_format("E2M2:zb", ZeroEncoding.ZERO_POINT).zero_encoding is ZeroEncoding.ZERO_BINADE


@pytest.mark.parametrize("text", ["E0M2", "E9M1", "E3M0", "E3M24", "M2E3", "e3", "x"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        parse_format(text)


def test_field_bounds():
    with pytest.raises(ValueError):
        MinifloatFormat(0, 2)
    with pytest.raises(ValueError):
        MinifloatFormat(3, 0)
    with pytest.raises(ValueError):
        MinifloatFormat(9, 2)
    fmt = MinifloatFormat(8, 23)
    assert fmt.width == 32


def test_ieee_bias():
    assert MinifloatFormat(3, 2).ieee_bias == 3
    assert MinifloatFormat(2, 2).ieee_bias == 1
    assert MinifloatFormat(8, 23).ieee_bias == 127


def test_quant_range_zero_point():
    fmt = MinifloatFormat(2, 2)
    r = quant_range(fmt, 1)
    assert r.x_min == 0.625  # 2^-1 * (1 + 1/4)
    assert r.x_max == 7.0    # 2^(3-1) * (2 - 1/4)


def test_quant_range_zero_binade():
    fmt = MinifloatFormat(2, 2, ZeroEncoding.ZERO_BINADE)
    r = quant_range(fmt, 1)
    assert r.x_min == 1.0    # 2^(1-1)
    assert r.x_max == 7.0


def test_quant_range_ordering():
    for e in range(1, 5):
        for m in range(1, 4):
            for enc in ZeroEncoding:
                fmt = MinifloatFormat(e, m, enc)
                for e_b in range(-4, 9):
                    r = quant_range(fmt, e_b)
                    assert 0.0 < r.x_min < r.x_max
