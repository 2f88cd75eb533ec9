import math

import mpmath
import numpy as np
import pytest

from dynlab.errors import NormalizationError, ZeroOnContour
from dynlab.function_model import FunctionSpec as F
from dynlab.modulus import (
    characteristic_T,
    count_zeros,
    hadamard_convexity,
    integrated_counting,
    log_max_modulus,
    max_modulus,
    min_modulus,
    nevanlinna_identity_check,
    radius_profile,
)


def mp_T(f, r, breaks=None):
    """Independent oracle: mpmath Gauss-Legendre quadrature of log+|f| split at the kinks."""
    def g(t):
        z = complex(r * math.cos(float(t)), r * math.sin(float(t)))
        return max(0.0, float(f.log_abs(z)))
    pts = breaks or [0, mpmath.pi / 2, 3 * mpmath.pi / 2, 2 * mpmath.pi]
    return float(mpmath.quad(g, pts)) / (2 * math.pi)


def test_max_min_modulus_examples(exp1):
    assert max_modulus(exp1, 10) == pytest.approx(math.exp(10), rel=1e-9)
    assert max_modulus(F.sin(), 2) == pytest.approx(math.sinh(2), rel=1e-9)
    assert min_modulus(exp1, 10) == pytest.approx(math.exp(-10), rel=1e-9)
    assert min_modulus(F.sin(), math.pi) < 1e-9
    assert min_modulus(F.polynomial([-1, 0, 0, 1]), 2) == pytest.approx(7, rel=1e-9)


def test_taylor_matches_dense_sweep():
    f = F.taylor_exp(40, 5.0)
    theta = np.linspace(0, 2 * np.pi, 100_000, endpoint=False)
    dense = float(np.max(np.abs(f.evaluate(5 * np.exp(1j * theta)))))
    assert max_modulus(f, 5) == pytest.approx(dense, rel=1e-9)
    assert max_modulus(f, 5) == pytest.approx(max_modulus(F.scaled_exp(1), 5), rel=1e-9)


def test_log_max_modulus_beyond_float(exp1):
    assert log_max_modulus(exp1, 1e5) == pytest.approx(1e5, rel=1e-12)


def test_resolution_saturates():
    for f in (F.sin(), F.cos(), F.polynomial([-1, 0, 0, 1]), F.scaled_exp(0.25)):
        a, b = log_max_modulus(f, 7.3, 256), log_max_modulus(f, 7.3, 4096)
        assert math.exp(a - b) == pytest.approx(1, abs=1e-6)


def test_characteristic_T_examples(exp1):
    assert characteristic_T(exp1, 10) == pytest.approx(mp_T(exp1, 10), rel=1e-8)
    assert characteristic_T(exp1, 10) == pytest.approx(10 / math.pi, rel=1e-8)
    assert characteristic_T(F.polynomial([0, 0, 0, 1]), math.e) == pytest.approx(3, rel=1e-12)
    assert characteristic_T(F.polynomial([0, 0.1]), 1) == 0


def test_characteristic_T_sin_oracle():
    # oracle: locate the |sin| = 1 crossings with mpmath, then integrate each smooth piece
    r = 6.0
    with mpmath.workdps(30):
        g = lambda t: mpmath.log(abs(mpmath.sin(r * mpmath.expj(t))))
        ts = [mpmath.mpf(k) * 2 * mpmath.pi / 1024 for k in range(1025)]
        roots = [mpmath.findroot(g, (a, b), solver="anderson") for a, b in zip(ts, ts[1:]) if g(a) * g(b) < 0]
        pts = [mpmath.mpf(0)] + roots + [2 * mpmath.pi]
        ref = sum(mpmath.quad(lambda t: max(g(t), 0), [a, b]) for a, b in zip(pts, pts[1:])) / (2 * mpmath.pi)
    assert characteristic_T(F.sin(), r) == pytest.approx(float(ref), rel=1e-8)


def test_count_zeros_examples(exp1):
    assert count_zeros(F.sin(), 10) == 7
    assert count_zeros(exp1, 100) == 0
    assert count_zeros(F.polynomial([-1, 0, 0, 1]), 2) == 3
    with pytest.raises(ZeroOnContour):
        count_zeros(F.sin(), math.pi)


def test_count_zeros_monotone_jumps():
    f = F.sin()
    rs = np.linspace(0.5, 12.0, 30)
    n = [count_zeros(f, r) for r in rs if min(abs(r - k * math.pi) for k in range(5)) > 1e-3]
    assert n == sorted(n)
    assert count_zeros(f, math.pi - 0.01) == 1 and count_zeros(f, math.pi + 0.01) == 3


def test_integrated_counting():
    assert integrated_counting([1.0, -1.0], math.e) == pytest.approx(2.0)
    assert integrated_counting([0.0], math.e) == pytest.approx(1.0)
    assert integrated_counting([5.0], 2.0) == 0.0


def test_identity_examples(exp1):
    rep = nevanlinna_identity_check(exp1, 20)
    assert rep.N0 == 0
    assert rep.m_inverse == pytest.approx(20 / math.pi, rel=1e-8)
    assert rep.residual < 1e-6 and rep.ok
    with pytest.raises(NormalizationError):
        nevanlinna_identity_check(F.polynomial([0, 0, 0, 1]), 5)
    rep = nevanlinna_identity_check(F.sin().shifted(1.0), 10)
    assert rep.residual < 1.0 and rep.left_inequality and rep.right_inequality


def test_profile_invariants():
    f = F.sin()
    profs = [radius_profile(f, r) for r in np.geomspace(2, 40, 12)]
    for p in profs:
        assert p.log_L <= p.log_M
        assert p.T <= max(p.log_M, 0) + 1e-9
    N0 = [p.N0 for p in profs]
    assert N0 == sorted(N0)
    assert hadamard_convexity(profs) == []
