import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcbackstep.barrier import (EDGE_MARGIN, BarrierDomainError, BarrierSpec,
                                inverse_derivatives, tanh_barrier)


def test_forward_midpoint(barrier):
    assert barrier.forward(0.0) == pytest.approx(12.0, abs=1e-15)


def test_inverse_examples(barrier):
    assert barrier.inverse(12.0) == pytest.approx(0.0, abs=1e-12)
    assert barrier.inverse(12.1) == pytest.approx(0.5 * math.log(3.0), rel=1e-12)


def test_derivatives_examples(barrier):
    d1, d2 = inverse_derivatives(barrier, 12.0)
    assert d1 == pytest.approx(5.0, rel=1e-12)
    assert d2 == pytest.approx(0.0, abs=1e-9)
    d1, _ = inverse_derivatives(barrier, 12.1)
    assert d1 == pytest.approx(0.5 * 0.4 / (0.1 * 0.3), rel=1e-12)


def test_fused_matches_separate(barrier):
    for v in np.linspace(11.81, 12.19, 17):
        s, d1, d2 = barrier.inverse_with_derivatives(v)
        assert s == pytest.approx(barrier.inverse(v), rel=1e-14, abs=1e-15)
        assert d1 == pytest.approx(barrier.inverse_d1(v), rel=1e-14)
        assert d2 == pytest.approx(barrier.inverse_d2(v), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("v", [11.8, 12.2, 11.0, 13.0, 11.8 + EDGE_MARGIN / 2])
def test_domain_error(barrier, v):
    with pytest.raises(BarrierDomainError):
        inverse_derivatives(barrier, v)
    with pytest.raises(BarrierDomainError):
        barrier.inverse(v)


@pytest.mark.parametrize("lo,hi", [(12.0, 12.0), (12.2, 11.8), (0.0, 1.0), (-1.0, 1.0),
                                   (1.0, math.inf)])
def test_bad_spec(lo, hi):
    with pytest.raises(ValueError):
        BarrierSpec(lo, hi)


def test_limits(barrier):
    assert barrier.forward(40.0) == pytest.approx(12.2, abs=1e-12)
    assert barrier.forward(-40.0) == pytest.approx(11.8, abs=1e-12)


def test_round_trip_grid(band, barrier):
    eps = 1e-6
    grid = np.linspace(band.v_min + eps, band.v_max - eps, 2001)
    back = np.array([barrier.forward(barrier.inverse(v)) for v in grid])
    assert np.max(np.abs(back - grid)) <= 1e-12 * band.width


def test_inverse_monotone(band, barrier):
    grid = np.linspace(band.v_min + 1e-6, band.v_max - 1e-6, 2001)
    s = np.array([barrier.inverse(v) for v in grid])
    assert np.all(np.diff(s) > 0)


def test_derivatives_vs_finite_differences(band, barrier):
    # 100 interior points, central differences with h = 1e-6 V
    h = 1e-6
    grid = np.linspace(band.v_min, band.v_max, 102)[1:-1]
    for v in grid:
        fd1 = (barrier.inverse(v + h) - barrier.inverse(v - h)) / (2 * h)
        fd2 = (barrier.inverse_d1(v + h) - barrier.inverse_d1(v - h)) / (2 * h)
        d1, d2 = inverse_derivatives(barrier, v)
        assert abs(fd1 - d1) <= 1e-6 * abs(d1)
        assert abs(fd2 - d2) <= 1e-6 * max(abs(d2), d1)


bands = st.tuples(st.floats(1.0, 100.0), st.floats(1e-3, 10.0)).map(
    lambda p: BarrierSpec(p[0], p[0] + p[1]))


@given(bands, st.floats(0.0, 1.0))
def test_round_trip_property(spec, frac):
    bar = tanh_barrier(spec)
    v = spec.v_min + spec.width * (0.001 + 0.998 * frac)
    assert abs(bar.forward(bar.inverse(v)) - v) <= 1e-12 * max(spec.width, spec.v_max * 1e-3)


@given(bands, st.floats(0.0, 1.0))
def test_slope_positive_property(spec, frac):
    bar = tanh_barrier(spec)
    v = spec.v_min + spec.width * (0.001 + 0.998 * frac)
    assert bar.inverse_d1(v) > 0


@settings(max_examples=200)
@given(bands, st.floats(-1e6, 1e6, allow_nan=False))
def test_bounded_argument_stays_in_band(spec, s):
    # saturates to the closed band in floating point for |s| beyond ~19
    v = tanh_barrier(spec).forward(s)
    assert spec.v_min <= v <= spec.v_max
    if abs(s) < 15:
        assert spec.v_min < v < spec.v_max
