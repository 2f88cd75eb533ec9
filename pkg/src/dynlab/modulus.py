"""Maximum/minimum modulus, the Nevanlinna characteristic and zero counting.

All circle quantities are computed in the log domain; ``M`` and ``L`` are only
materialized when they fit in a double.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateT,
    FloatRangeOverflow,
    NonConvergence,
    NonIntegerResidue,
    NormalizationError,
    ZeroOnContour,
)
from .function_model import LOG_FLOAT_MAX, FunctionSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_RESOLUTION = 1024


@dataclass(frozen=True)
class Extremum:
    log_value: float
    theta: float

    @property
    def overflow(self) -> bool:
        return self.log_value > LOG_FLOAT_MAX

    @property
    def value(self) -> float:
        if self.overflow:
            raise FloatRangeOverflow("modulus exceeds float range", self.log_value)
        return math.exp(self.log_value) if self.log_value > -math.inf else 0.0


def _golden_max(g, a, b, tol: float = 1e-9, max_iter: int = 200):
    """Golden-section maximization run on several brackets at once (arrays a, b)."""
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(max_iter):
        if np.all(np.abs(b - a) < tol):
            break
        left = gc > gd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - GOLDEN * (b - a), d)
        d_new = np.where(left, c, a + GOLDEN * (b - a))
        fresh = np.where(left, c_new, d_new)
        gf = g(fresh)
        gc, gd = np.where(left, gf, gd), np.where(left, gc, gf)
        c, d = c_new, d_new
    x = (a + b) / 2
    return x, g(x)


def circle_extremum(f: FunctionSpec, r: float, resolution: int = DEFAULT_RESOLUTION,
                    kind: str = "max") -> Extremum:
    """Uniform theta-sweep followed by golden-section refinement around the best 3 samples."""
    if r <= 0:
        raise ValueError("r must be positive")
    if resolution < 64:
        raise ValueError("resolution must be >= 64")
    sign = 1.0 if kind == "max" else -1.0
    theta = np.linspace(-np.pi, np.pi, resolution, endpoint=False)
    vals = sign * np.asarray(f.log_abs(r * np.exp(1j * theta)), dtype=float)
    if np.any(np.isnan(vals)):
        raise NonConvergence("non-finite modulus on the circle")
    h = 2 * np.pi / resolution
    best_i = int(np.argmax(vals))
    best = Extremum(sign * float(vals[best_i]), float(theta[best_i]))
    if not math.isfinite(vals[best_i]):
        return best

    def g(t):
        return sign * np.asarray(f.log_abs(r * np.exp(1j * t)), dtype=float)

    top = np.argsort(vals)[::-1][:3]
    ts, vs = _golden_max(g, theta[top] - h, theta[top] + h)
    for t, v in zip(ts, vs):
        if v > sign * best.log_value:
            best = Extremum(sign * float(v), float(t))
    return best


def max_modulus(f: FunctionSpec, r: float, resolution: int = DEFAULT_RESOLUTION) -> float:
    """M(r, f).  Raises FloatRangeOverflow (with ``log_value``) past double range."""
    return circle_extremum(f, r, resolution, "max").value


def min_modulus(f: FunctionSpec, r: float, resolution: int = DEFAULT_RESOLUTION) -> float:
    return circle_extremum(f, r, resolution, "min").value


def log_max_modulus(f: FunctionSpec, r: float, resolution: int = DEFAULT_RESOLUTION) -> float:
    return circle_extremum(f, r, resolution, "max").log_value


def log_min_modulus(f: FunctionSpec, r: float, resolution: int = DEFAULT_RESOLUTION) -> float:
    return circle_extremum(f, r, resolution, "min").log_value


def _unit_nodes(n: int, offset: bool) -> np.ndarray:
    """e^{i theta_k} on n equispaced angles, shifted by half a step if ``offset``."""
    if n <= 2**17:
        return _cached_nodes(n, offset)
    return np.exp(2j * np.pi * (np.arange(n) + (0.5 if offset else 0.0)) / n)


@lru_cache(maxsize=24)
def _cached_nodes(n: int, offset: bool) -> np.ndarray:
    out = np.exp(2j * np.pi * (np.arange(n) + (0.5 if offset else 0.0)) / n)
    out.flags.writeable = False
    return out


def _circle_mean(func, r: float, quadrature_points: int, rtol: float, atol: float, cap: int) -> float:
    """Periodic trapezoid mean over the circle with doubling until convergence."""
    n = quadrature_points
    prev = float(np.mean(func(r * _unit_nodes(n, False))))
    while True:
        if 2 * n > cap:
            raise NonConvergence(f"quadrature did not converge with {n} points")
        # reuse the previous nodes; only the midpoints are new
        cur = 0.5 * (prev + float(np.mean(func(r * _unit_nodes(n, True)))))
        n *= 2
        if abs(cur - prev) <= max(rtol * abs(cur), atol):
            return cur
        prev = cur


def characteristic_T(f: FunctionSpec, r: float, quadrature_points: int = 256, *,
                     rtol: float = 1e-8, cap: int = 2**24) -> float:
    """T(r, f) = (1/2pi) int log+ |f(r e^{it})| dt for entire f."""
    if r <= 0:
        raise ValueError("r must be positive")
    if quadrature_points < 256:
        raise ValueError("quadrature_points must be >= 256")

    def integrand(z):
        return np.maximum(np.asarray(f.log_abs(z), dtype=float), 0.0)

    return _circle_mean(integrand, r, quadrature_points, rtol, 1e-300, cap)


def proximity_inverse(f: FunctionSpec, r: float, quadrature_points: int = 256, *,
                      rtol: float = 1e-8, cap: int = 2**24) -> float:
    """m(r, 1/f) = (1/2pi) int log+ (1/|f|)."""

    def integrand(z):
        return np.maximum(-np.asarray(f.log_abs(z), dtype=float), 0.0)

    return _circle_mean(integrand, r, quadrature_points, rtol, 1e-12, cap)


def count_zeros(f: FunctionSpec, r: float, quadrature_points: int = 1024, *,
                max_points: int = 2**20) -> int:
    """n(r, 0) by the argument principle (trapezoid on the circle)."""
    if r <= 0:
        raise ValueError("r must be positive")
    try:
        zeros = f.known_zeros(2 * r, allow_root_finding=False)
    except Exception:
        zeros = None
    if zeros is not None:
        for z in zeros:
            if abs(abs(z) - r) < 1e-6 * r:
                raise ZeroOnContour(f"zero {z} within 1e-6 r of |z| = {r}")
    n = quadrature_points
    prev = None
    while n <= max_points:
        theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        z = r * np.exp(1j * theta)
        try:
            ld = f.log_derivative(z)
        except Exception as exc:
            raise ZeroOnContour(str(exc)) from exc
        val = float(np.mean(ld * z).real)
        if prev is not None and abs(val - prev) < 1e-6:
            break
        prev = val
        n *= 2
    k = round(val)
    if abs(val - k) > 0.1:
        raise NonIntegerResidue(f"argument-principle value {val:.4f} is not near an integer")
    return int(k)


def integrated_counting(zeros, r: float) -> float:
    """N(r, 0) = sum over |z_j| <= r of log(r / |z_j|); zeros at 0 contribute log r."""
    total = 0.0
    for z in zeros:
        a = abs(z)
        if a <= r:
            total += math.log(r / a) if a > 0 else math.log(r)
    return total


@dataclass
class RadiusProfile:
    r: float
    log_M: float
    log_L: float
    T: float
    n0: int
    N0: float
    samples_per_circle: int
    refined: bool = True
    error: str | None = None

    @property
    def M_overflow(self) -> bool:
        return self.log_M > LOG_FLOAT_MAX

    @property
    def L_overflow(self) -> bool:
        return self.log_L > LOG_FLOAT_MAX

    @property
    def ok(self) -> bool:
        return self.error is None


def radius_profile(f: FunctionSpec, r: float, resolution: int = DEFAULT_RESOLUTION,
                   quadrature_points: int = 256, rtol: float = 1e-8) -> RadiusProfile:
    log_M = log_max_modulus(f, r, resolution)
    log_L = log_min_modulus(f, r, resolution)
    T = characteristic_T(f, r, quadrature_points, rtol=rtol)
    try:
        zeros = f.known_zeros(r)
        n0 = len(zeros)
        N0 = integrated_counting(zeros, r)
    except Exception:
        n0 = count_zeros(f, r)
        N0 = float("nan")
    return RadiusProfile(r, log_M, log_L, T, n0, N0, resolution, True)


def hadamard_convexity(profiles, rtol: float = 1e-6) -> list:
    """Three-point convexity of log M in log r; returns indices of violations."""
    pts = [(math.log(p.r), p.log_M) for p in profiles if p.ok]
    bad = []
    for i in range(1, len(pts) - 1):
        (x0, y0), (x1, y1), (x2, y2) = pts[i - 1], pts[i], pts[i + 1]
        chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0)
        if y1 > chord + rtol * max(1.0, abs(chord)):
            bad.append(i)
    return bad


@dataclass
class IdentityReport:
    r: float
    T: float
    N0: float
    m_inverse: float
    residual: float
    tolerance: float
    log_plus_M: float
    T_2r: float
    left_inequality: bool
    right_inequality: bool
    normalization_factor: complex = 1.0
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.residual <= self.tolerance and self.left_inequality and self.right_inequality


def characteristic_bounds(f: FunctionSpec, r: float, R: float, *, rtol: float = 1e-8,
                          resolution: int = DEFAULT_RESOLUTION):
    """Both sides of T(r) <= log+ M(r) <= (R+r)/(R-r) T(R); returns (T, log+M, T(R), left, right)."""
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    T = characteristic_T(f, r, rtol=rtol)
    lpM = max(log_max_modulus(f, r, resolution), 0.0)
    TR = characteristic_T(f, R, rtol=rtol)
    slack = 1e-7 * max(1.0, lpM)
    left = T <= lpM + slack
    right = lpM <= (R + r) / (R - r) * TR + slack
    return T, lpM, TR, left, right


def nevanlinna_identity_check(f: FunctionSpec, r: float, tolerance: float | None = None,
                              rtol: float = 1e-10) -> IdentityReport:
    """Residual of T(r) = N(r,0) + m(r,1/f) + O(1) after rescaling to f(0) = 1."""
    if r <= 1:
        raise ValueError("r must exceed 1")
    f0 = f.evaluate(0j)
    if abs(f0) < 1e-12:
        raise NormalizationError("f(0) = 0; cannot rescale to f(0) = 1")
    g = f.normalized()
    if tolerance is None:
        tolerance = 1.0 + abs(math.log(abs(f0)))
    T, lpM, T2, left, right = characteristic_bounds(g, r, 2 * r, rtol=rtol)
    N0 = integrated_counting(g.known_zeros(r), r)
    m_inv = proximity_inverse(g, r, rtol=rtol)
    residual = abs(T - N0 - m_inv)
    return IdentityReport(
        r=r, T=T, N0=N0, m_inverse=m_inv, residual=residual, tolerance=tolerance,
        log_plus_M=lpM, T_2r=T2, left_inequality=left, right_inequality=right,
        normalization_factor=1.0 / f0,
        checks={"first_main_theorem": residual <= tolerance,
                "T_le_logplusM": left, "logplusM_le_3T2r": right},
    )


def require_T_above_e(T: float, where: str = "") -> None:
    if not T > math.e:
        raise DegenerateT(f"T = {T:.6g} <= e{(' at ' + where) if where else ''}")
