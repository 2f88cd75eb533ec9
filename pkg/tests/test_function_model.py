import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynlab.errors import FloatRangeOverflow, NearZeroDivision, OutOfValidity, Unsupported
from dynlab.function_model import ComplexSample, FunctionSpec, wrap_angle

F = FunctionSpec


def test_evaluate_examples():
    assert F.scaled_exp(1).evaluate(0j) == pytest.approx(1)
    assert F.polynomial([-1, 0, 0, 1]).evaluate(2) == pytest.approx(7)
    # oracle: mpmath at 30 digits
    ref = complex(mpmath.sin(mpmath.mpc(0, 1)))
    assert abs(F.sin().evaluate(1j) - ref) <= 1e-12 * abs(ref)


def test_evaluate_overflow_and_log_range():
    f = F.scaled_exp(1)
    with pytest.raises(FloatRangeOverflow):
        f.evaluate(1000.0)
    s = f.evaluate_log(math.log(1000.0), 0.0)
    assert s.log_mag == pytest.approx(1000.0)
    s = f.evaluate_log(math.log(100.0), 0.0)
    assert s.log_mag == pytest.approx(100.0) and s.arg == pytest.approx(0.0)


def test_evaluate_log_polynomial_doubling():
    f = F.polynomial([0, 0, 1])
    for L, th in [(3.0, 1.0), (800.0, 2.5), (-4.0, -3.0)]:
        s = f.evaluate_log(L, th)
        assert s.log_mag == pytest.approx(2 * L)
        assert s.arg == pytest.approx(float(wrap_angle(2 * th)))


def test_evaluate_log_unsupported_for_sin_out_of_range():
    with pytest.raises(Unsupported):
        F.sin().evaluate_log(800.0, 0.3)


def test_taylor_validity():
    f = F.taylor_exp(40, 5.0)
    assert f.evaluate(3.0) == pytest.approx(math.exp(3.0), rel=1e-12)
    with pytest.raises(OutOfValidity):
        f.evaluate(6.0)


def test_log_derivative_examples():
    assert F.scaled_exp(0.25).log_derivative(3 + 2j) == pytest.approx(1)
    assert F.polynomial([0, 0, 0, 1]).log_derivative(2.0) == pytest.approx(1.5)
    assert abs(F.sin().log_derivative(math.pi / 2)) < 1e-12
    with pytest.raises(NearZeroDivision):
        F.sin().log_derivative(0.0)


def test_known_zeros_examples():
    z = F.sin().known_zeros(10)
    assert sorted(w.real for w in z) == pytest.approx([k * math.pi for k in range(-3, 4)])
    assert F.scaled_exp(1).known_zeros(1e6) == []
    roots = F.polynomial([-1, 0, 0, 1]).known_zeros(2)
    assert len(roots) == 3
    for w in roots:
        assert abs(w**3 - 1) < 1e-12


def test_known_zeros_are_zeros_on_fine_grid():
    for f in (F.sin(), F.cos(), F.polynomial([-1, 0, 0, 1]), F.polynomial([2, -3, 1])):
        for w in f.known_zeros(12):
            assert abs(f.evaluate(w)) < 1e-9
            ring = w + 1e-3 * np.exp(1j * np.linspace(0, 2 * np.pi, 16, endpoint=False))
            assert np.all(np.abs(f.evaluate(ring)) > 1e-9)


def test_complex_sample_invariants():
    s = ComplexSample.from_complex(-2.0)
    assert -math.pi < s.arg <= math.pi
    assert s.to_complex() == pytest.approx(-2.0)
    assert ComplexSample.zero().is_zero


def test_json_round_trip():
    for f in (F.scaled_exp(0.25), F.sin().shifted(1.0), F.polynomial([1, 2j, 3]), F.taylor_exp(20, 3.0)):
        g = F.from_json(f.to_json())
        assert g == f


def test_normalized():
    f = F.sin().shifted(1.0).normalized()
    assert f.evaluate(0j) == pytest.approx(1)
    assert f.is_normalized()


FAMILIES = [F.scaled_exp(0.25), F.sin(), F.cos(), F.polynomial([-1, 0, 0, 1]), F.taylor_exp(60, 6.0)]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(range(len(FAMILIES))), st.floats(-4, 4), st.floats(-4, 4))
def test_log_derivative_matches_central_difference(i, x, y):
    f = FAMILIES[i]
    z = complex(x, y)
    fz = f.evaluate(z)
    if abs(fz) < 1e-3:
        return
    h = 1e-6 * max(1.0, abs(z))
    fd = (f.evaluate(z + h) - f.evaluate(z - h)) / (2 * h * fz)
    ld = f.log_derivative(z)
    assert abs(ld - fd) <= 1e-5 * max(1.0, abs(ld))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(range(4)), st.floats(-20, 20), st.floats(-20, 20))
def test_evaluate_log_agrees_with_evaluate(i, x, y):
    f = FAMILIES[i]
    z = complex(x, y)
    w = f.evaluate(z)
    if w == 0:
        return
    s = f.evaluate_log(math.log(abs(z)) if z else -math.inf, cmath.phase(z)) if z else None
    if s is None or s.is_zero:
        return
    assert abs(s.log_mag - math.log(abs(w))) < 1e-9
