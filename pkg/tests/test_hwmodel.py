import io
from fractions import Fraction

import pytest

from mfqat.codec import Codeword, decode, encode
from mfqat.formats import MinifloatFormat, ZeroEncoding
from mfqat.hwmodel import (
    LUT_TABLE,
    MacConfig,
    MacOverflowError,
    OverflowPolicy,
    emit_test_vectors,
    hybrid_mac_dot,
    lut_cost,
    minifloat_mul_golden,
    mul_result_value,
    to_fixed_point,
    zero_detect,
)

from oracles import oracle_mul_fields, oracle_mul_value

E2M2 = MinifloatFormat(2, 2)
E2M2_ZB = MinifloatFormat(2, 2, ZeroEncoding.ZERO_BINADE)


class TestZeroDetect:
    def test_all_zero_pattern(self):
        for fmt in (E2M2, E2M2_ZB):
            assert zero_detect(Codeword(0), fmt) == 1

    def test_zero_binade_vs_zero_point(self):
        c = Codeword(0b00001)  # E=0, M=1
        assert zero_detect(c, E2M2_ZB) == 1
        assert zero_detect(c, E2M2) == 0

    def test_nonzero_exponent(self):
        c = Codeword(0b00100)  # E=1, M=0
        assert zero_detect(c, E2M2) == 0
        assert zero_detect(c, E2M2_ZB) == 0


class TestMultiplier:
    def test_exact_product(self):
        r = minifloat_mul_golden(encode(1.25, E2M2, 1), encode(1.5, E2M2, 1), E2M2)
        assert mul_result_value(r, E2M2, 2) == 1.875
        assert (r.sign, r.exp_ext, r.mant_ext, r.is_zero) == (0, 2, 15, 0)

    def test_truncated_product(self):
        c = encode(1.75, E2M2, 1)
        r = minifloat_mul_golden(c, c, E2M2)
        # 1.75^2 = 3.0625 = 11.0001b, truncated to 3 fractional bits -> 3.0
        assert mul_result_value(r, E2M2, 2) == 3.0

    def test_zero_absorbs(self):
        zero = Codeword(0)
        for bits in range(1 << E2M2.width):
            r = minifloat_mul_golden(zero, Codeword(bits), E2M2)
            assert r.is_zero == 1
            assert mul_result_value(r, E2M2, 2) == 0.0

    def test_sign_rule(self):
        a = encode(-1.5, E2M2, 1)
        b = encode(2.0, E2M2, 1)
        assert minifloat_mul_golden(a, b, E2M2).sign == 1
        assert minifloat_mul_golden(a, a, E2M2).sign == 0

    def test_commutative_exhaustive_small(self):
        fmt = MinifloatFormat(2, 1)
        n = 1 << fmt.width
        for i in range(n):
            for j in range(i, n):
                assert minifloat_mul_golden(Codeword(i), Codeword(j), fmt) == \
                    minifloat_mul_golden(Codeword(j), Codeword(i), fmt)

    @pytest.mark.parametrize("enc", list(ZeroEncoding))
    def test_matches_rational_oracle(self, enc):
        fmt = MinifloatFormat(3, 2, enc)
        e_b = 3
        n = 1 << fmt.width
        for i in range(n):
            for j in range(n):
                r = minifloat_mul_golden(Codeword(i), Codeword(j), fmt)
                assert (r.sign, r.exp_ext, r.mant_ext, r.is_zero) == \
                    oracle_mul_fields(i, j, fmt), (i, j)
                got = Fraction(mul_result_value(r, fmt, 2 * e_b))
                assert got == oracle_mul_value(i, j, fmt, e_b)

    def test_truncation_relative_error_bound(self):
        fmt = MinifloatFormat(2, 3)
        n = 1 << fmt.width
        for i in range(n):
            for j in range(n):
                a, b = Codeword(i), Codeword(j)
                va = Fraction(decode(a, fmt, 1))
                vb = Fraction(decode(b, fmt, 1))
                if va * vb == 0:
                    continue
                got = Fraction(mul_result_value(minifloat_mul_golden(a, b, fmt), fmt, 2))
                rel = abs(got - va * vb) / abs(va * vb)
                assert rel < Fraction(1, 1 << fmt.m)


class TestFixedPoint:
    def test_zero_maps_to_zero(self):
        cfg = MacConfig.for_format(E2M2, 1)
        r = minifloat_mul_golden(Codeword(0), Codeword(0b00100), E2M2)
        assert to_fixed_point(r, cfg) == 0

    def test_example_sixty(self):
        cfg = MacConfig.for_format(E2M2, 1)
        assert cfg.lsb_exp == -5
        r = minifloat_mul_golden(encode(1.25, E2M2, 1), encode(1.5, E2M2, 1), E2M2)
        assert to_fixed_point(r, cfg) == 60  # 1.875 / 2^-5

    def test_max_product_fits_default_width(self):
        cfg = MacConfig.for_format(E2M2, 1)
        top = Codeword((E2M2.exp_field_max << E2M2.m) | (E2M2.m and (1 << E2M2.m) - 1))
        r = minifloat_mul_golden(top, top, E2M2)
        value = to_fixed_point(r, cfg)
        assert value == r.mant_ext << r.exp_ext
        assert value <= cfg.int_max

    def test_sign(self):
        cfg = MacConfig.for_format(E2M2, 1)
        r = minifloat_mul_golden(encode(-1.5, E2M2, 1), encode(2.0, E2M2, 1), E2M2)
        assert to_fixed_point(r, cfg) < 0

    def test_width_guard(self):
        with pytest.raises(ValueError):
            MacConfig.for_format(E2M2, 1, width=4)  # < m + 3


class TestHybridMac:
    def test_all_zero_vector(self):
        zeros = [Codeword(0)] * 8
        assert hybrid_mac_dot(zeros, zeros, E2M2, 1, 1) == 0.0

    def test_exhaustive_pairs_match_rational_sum(self):
        fmt = E2M2
        n = 1 << fmt.width
        xs, ws = [], []
        for i in range(n):
            for j in range(n):
                xs.append(Codeword(i))
                ws.append(Codeword(j))
        assert len(xs) == 4096
        got = hybrid_mac_dot(xs, ws, fmt, 1, 1)
        want = sum(oracle_mul_value(x.bits, w.bits, fmt, 1) for x, w in zip(xs, ws))
        assert Fraction(got) == want

    def test_distinct_biases(self):
        x = [encode(2.0, E2M2, 0)]
        w = [encode(1.5, E2M2, 3)]
        got = hybrid_mac_dot(x, w, E2M2, 0, 3)
        assert got == 2.0 * 1.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hybrid_mac_dot([Codeword(0)], [], E2M2, 1, 1)

    def test_overflow_policies(self):
        fmt = E2M2
        top = encode(7.0, fmt, 1)
        many = [top] * 64
        tight = MacConfig(fmt=fmt, exp_bias=2, width=13, policy=OverflowPolicy.ERROR)
        with pytest.raises(MacOverflowError) as err:
            hybrid_mac_dot(many, many, fmt, 1, 1, tight)
        assert err.value.term_index is not None
        sat = MacConfig(fmt=fmt, exp_bias=2, width=13, policy=OverflowPolicy.SATURATE)
        got = hybrid_mac_dot(many, many, fmt, 1, 1, sat)
        assert got == sat.int_max * 2.0 ** sat.lsb_exp


class TestLutTable:
    def test_spot_values(self):
        assert lut_cost(MinifloatFormat(3, 3, ZeroEncoding.ZERO_BINADE)) == 10
        assert lut_cost(MinifloatFormat(3, 3, ZeroEncoding.ZERO_POINT)) == 11
        assert lut_cost(MinifloatFormat(1, 1, ZeroEncoding.ZERO_BINADE)) == 4
        assert lut_cost(MinifloatFormat(1, 1, ZeroEncoding.ZERO_POINT)) == 4
        assert lut_cost(MinifloatFormat(4, 3, ZeroEncoding.ZERO_BINADE)) == 11
        assert lut_cost(MinifloatFormat(4, 3, ZeroEncoding.ZERO_POINT)) == 13

    def test_outside_table(self):
        with pytest.raises(LookupError):
            lut_cost(MinifloatFormat(5, 2))

    def test_cost_nondecreasing_in_mantissa(self):
        for enc, table in LUT_TABLE.items():
            for e in range(1, 5):
                costs = [table[(e, m)] for m in range(1, 4)]
                assert costs == sorted(costs), (enc, e, costs)

    def test_complete_coverage(self):
        for table in LUT_TABLE.values():
            assert set(table) == {(e, m) for e in range(1, 5) for m in range(1, 4)}


class TestVectorEmitter:
    def test_line_format_and_count(self):
        fmt = MinifloatFormat(1, 1)
        buf = io.StringIO()
        n = emit_test_vectors(fmt, 0, buf)
        lines = buf.getvalue().strip().split("\n")
        assert n == len(lines) == (1 << fmt.width) ** 2 == 64
        for line in lines:
            fields = line.split()
            assert len(fields) == 6
            a, b, sign, exp_ext, mant, zero = (int(f, 16) for f in fields)
            r = minifloat_mul_golden(Codeword(a), Codeword(b), fmt)
            assert (r.sign, r.exp_ext, r.mant_ext, r.is_zero) == (sign, exp_ext, mant, zero)
