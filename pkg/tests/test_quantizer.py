import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfqat.codec import enumerate_values
from mfqat.formats import MinifloatFormat, ZeroEncoding
from mfqat.quantizer import (
    InitMode,
    NonFiniteInputError,
    QuantizerState,
    fixed_point_quantize,
    init_exponent_bias,
    quantize,
    quantize_backward,
)

from oracles import oracle_quantize_scalar

E2M2 = MinifloatFormat(2, 2)
E3M2 = MinifloatFormat(3, 2)


class TestQuantize:
    def test_worked_examples(self):
        # E2M2, E0 = 1: x_min = 0.625, x_max = 7.0
        out = quantize([1.1, 8.0, 0.55, 0.0, 1.125], E2M2, 1.0)
        np.testing.assert_array_equal(out, [1.0, 7.0, 0.0, 0.0, 1.0])

    def test_saturation_both_signs(self):
        np.testing.assert_array_equal(quantize([123.0, -123.0], E2M2, 1.0), [7.0, -7.0])

    def test_flush_is_not_nearest(self):
        # 0.55 rounds to 0.5 inside its binade, which is below x_min, so the
        # output is 0 even though 0.625 is the nearer representable value
        assert quantize([0.55], E2M2, 1.0)[0] == 0.0
        assert abs(0.55 - 0.625) < abs(0.55 - 0.0)

    def test_ceil_of_real_bias(self):
        # E0 = 0.3 -> E_B = 1, same grid as E0 = 1.0
        np.testing.assert_array_equal(
            quantize([1.1, 8.0], E2M2, 0.3), quantize([1.1, 8.0], E2M2, 1.0)
        )

    def test_non_finite_input_rejected(self):
        with pytest.raises(NonFiniteInputError) as err:
            quantize([1.0, np.nan, 2.0], E2M2, 1.0)
        assert "index 1" in str(err.value)
        with pytest.raises(NonFiniteInputError):
            quantize([np.inf], E2M2, 1.0)
        with pytest.raises(NonFiniteInputError):
            quantize([1.0], E2M2, float("nan"))

    def test_shape_preserved(self):
        x = np.linspace(-3, 3, 24).reshape(2, 3, 4)
        assert quantize(x, E3M2, 2.0).shape == (2, 3, 4)

    def test_membership(self, rng):
        for enc in ZeroEncoding:
            fmt = MinifloatFormat(3, 2, enc)
            grid = enumerate_values(fmt, 3)
            x = rng.uniform(-2 * fmt.x_max(3), 2 * fmt.x_max(3), size=4096)
            q = quantize(x, fmt, 3.0)
            assert np.isin(q, grid).all()

    def test_oracle_equivalence_spot(self, rng):
        for enc in ZeroEncoding:
            for e0 in (-2.0, 0.4, 3.0):
                fmt = MinifloatFormat(2, 3, enc)
                x = rng.uniform(-20, 20, size=2000)
                got = quantize(x, fmt, e0)
                want = [oracle_quantize_scalar(float(v), fmt, e0) for v in x]
                np.testing.assert_array_equal(got, want)

    @settings(max_examples=300, deadline=None)
    @given(x=st.floats(-1e6, 1e6), e=st.integers(1, 4), m=st.integers(1, 3),
           e0=st.integers(-4, 8))
    def test_idempotent(self, x, e, m, e0):
        fmt = MinifloatFormat(e, m)
        once = quantize([x], fmt, float(e0))
        twice = quantize(once, fmt, float(e0))
        np.testing.assert_array_equal(once, twice)

    @settings(max_examples=300, deadline=None)
    @given(a=st.floats(-100, 100), b=st.floats(-100, 100))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        qa, qb = quantize([lo, hi], E3M2, 2.0)
        assert qa <= qb


class TestQuantizeBackward:
    def test_in_range_passthrough(self):
        x = np.array([0.7, -1.5, 3.0])
        g = np.array([1.0, 2.0, 3.0])
        g_x, g_e0 = quantize_backward(g, x, E2M2, 1.0)
        np.testing.assert_array_equal(g_x, g)
        assert g_e0 == 0.0

    def test_saturated_bias_gradient(self):
        g_x, g_e0 = quantize_backward([1.0], [8.0], E2M2, 1.0)
        assert g_e0 == pytest.approx(-math.log(2.0) * 7.0, abs=1e-12)
        g_x, g_e0 = quantize_backward([1.0], [-8.0], E2M2, 1.0)
        assert g_e0 == pytest.approx(math.log(2.0) * 7.0, abs=1e-12)
        np.testing.assert_array_equal(g_x, [1.0])

    def test_clip_zero_variant(self):
        x = np.array([0.7, 8.0, -9.0])
        g = np.ones(3)
        g_x, _ = quantize_backward(g, x, E2M2, 1.0, ste_clip_zero=True)
        np.testing.assert_array_equal(g_x, [1.0, 0.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            quantize_backward(np.ones(3), np.ones(4), E2M2, 1.0)

    def test_fd_of_relaxed_surrogate(self):
        # relaxed surrogate: E_B = E0 is a real, the rounding/flush machinery
        # is held locally constant, so the only smooth E0 dependence is the
        # clamp bound x_max(E0); at integer E0 the FD of sum(clamp(X)) must
        # match the analytic saturation rule
        fmt = E3M2

        def relaxed_clamp_sum(x, e0):
            x_max = (2.0 - 2.0 ** -fmt.m) * 2.0 ** (fmt.exp_field_max - e0)
            return float(np.sum(np.clip(x, -x_max, x_max)))

        e0 = 2.0
        x = np.array([100.0, -80.0, 64.0, 3.0, -0.001])  # mixed saturation
        h = 1e-5
        fd = (relaxed_clamp_sum(x, e0 + h) - relaxed_clamp_sum(x, e0 - h)) / (2 * h)
        _, g_e0 = quantize_backward(np.ones_like(x), x, fmt, e0)
        assert g_e0 == pytest.approx(fd, rel=1e-3)


class TestInitExponentBias:
    def test_paper_formula_log_term_zero(self):
        for fmt in (E2M2, E3M2, MinifloatFormat(4, 3)):
            top = 2.0 - 2.0 ** -fmt.m
            assert init_exponent_bias(top, fmt) == 2 ** (fmt.e - 1)

    def test_paper_formula_example(self):
        assert init_exponent_bias(3.5, E3M2, InitMode.PAPER_FORMULA) == 3.0

    def test_tight_fit_example(self):
        e0 = init_exponent_bias(3.5, E3M2, InitMode.TIGHT_FIT)
        assert e0 == 6.0
        assert E3M2.x_max(math.ceil(e0)) == 3.5

    def test_tight_fit_is_smallest_cover(self):
        rng = np.random.default_rng(3)
        for max_abs in rng.uniform(1e-3, 1e3, size=50):
            e0 = init_exponent_bias(float(max_abs), E3M2, InitMode.TIGHT_FIT)
            e_b = math.ceil(e0)
            assert E3M2.x_max(e_b) >= max_abs
            assert E3M2.x_max(e_b + 1) < max_abs

    def test_rejects_bad_max(self):
        for bad in (0.0, -1.0, float("inf"), float("nan")):
            with pytest.raises(ValueError):
                init_exponent_bias(bad, E3M2)
        with pytest.raises(ValueError):
            init_exponent_bias(1.0, E3M2, "unknown-mode")


class TestFixedPointQuantize:
    def test_zero(self):
        assert fixed_point_quantize([0.0], 6, 1.0)[0] == 0.0

    def test_positive_clamp_bound(self):
        s = 4.0  # max_abs = 4 -> scale 2^2
        step = s / 2 ** 5
        out = fixed_point_quantize([s], 6, s)
        assert out[0] == (2 ** 5 - 1) * step == s * 31 / 32

    def test_negative_bound_not_clamped_to_positive(self):
        s = 4.0
        step = s / 2 ** 5
        assert fixed_point_quantize([-s], 6, s)[0] == -(2 ** 5) * step == -s

    def test_rounds_below_half_step(self):
        step = 2.0 ** math.ceil(math.log2(3.0)) / 2 ** 5
        assert fixed_point_quantize([step * 0.49], 6, 3.0)[0] == 0.0
        assert fixed_point_quantize([step * 0.51], 6, 3.0)[0] == step

    def test_non_power_of_two_max(self):
        # scale rounds the max up to a power of two
        out = fixed_point_quantize(np.linspace(-3, 3, 100), 4, 3.0)
        step = 4.0 / 2 ** 3
        np.testing.assert_array_equal(out / step, np.round(out / step))

    def test_rejects(self):
        with pytest.raises(ValueError):
            fixed_point_quantize([1.0], 1, 1.0)
        with pytest.raises(ValueError):
            fixed_point_quantize([1.0], 6, 0.0)
        with pytest.raises(NonFiniteInputError):
            fixed_point_quantize([np.nan], 6, 1.0)


class TestQuantizerState:
    def test_bias_recomputed_on_read(self):
        st_ = QuantizerState(E3M2, e0=1.2)
        assert st_.e_b == 2
        st_.e0 = 0.9
        assert st_.e_b == 1
        st_.e0 = -0.4
        assert st_.e_b == 0

    def test_unset_reads_fail(self):
        st_ = QuantizerState(E3M2)
        assert not st_.is_set
        with pytest.raises(RuntimeError):
            _ = st_.e0

    def test_non_finite_assignment_rejected(self):
        st_ = QuantizerState(E3M2, e0=1.0)
        with pytest.raises(NonFiniteInputError):
            st_.e0 = float("nan")
        with pytest.raises(NonFiniteInputError):
            st_.e0 = float("inf")

    def test_observe_tracks_running_max(self):
        st_ = QuantizerState(E3M2)
        st_.observe(np.array([1.0, -3.0]))
        st_.observe(np.array([2.0]))
        assert st_.observed_max == 3.0
