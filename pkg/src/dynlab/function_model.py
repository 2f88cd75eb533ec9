"""Entire functions as evaluatable specs.

Every family is written as ``f(z) = scale * base(z + shift)`` so that shifted
and rescaled variants (needed to enforce ``f(0) = 1``) stay inside the same
closed-form machinery.  Evaluators accept scalars or numpy arrays.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    FloatRangeOverflow,
    NearZeroDivision,
    NormalizationError,
    OutOfValidity,
    Unsupported,
)

KINDS = ("scaled_exp", "sin", "cos", "polynomial", "taylor")

# log of the largest finite double, minus a little headroom
LOG_FLOAT_MAX = 709.0
ZERO_TOL = 1e-12
TAIL_RTOL = 1e-14


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    t = np.asarray(theta, dtype=float)
    w = np.pi - np.mod(np.pi - t, 2.0 * np.pi)
    if np.ndim(theta) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class ComplexSample:
    """A complex number held as (log|w|, arg w); ``is_zero`` replaces log 0."""

    log_mag: float
    arg: float
    is_zero: bool = False

    def __post_init__(self):
        if not self.is_zero and not math.isfinite(self.log_mag):
            raise ValueError("log_mag must be finite; use is_zero for 0")
        object.__setattr__(self, "arg", wrap_angle(self.arg))

    @classmethod
    def zero(cls) -> "ComplexSample":
        return cls(0.0, 0.0, is_zero=True)

    @classmethod
    def from_complex(cls, w: complex) -> "ComplexSample":
        if w == 0:
            return cls.zero()
        return cls(math.log(abs(w)), cmath.phase(w))

    def to_complex(self) -> complex:
        if self.is_zero:
            return 0j
        if self.log_mag > LOG_FLOAT_MAX:
            raise FloatRangeOverflow("sample exceeds float range", self.log_mag)
        return cmath.rect(math.exp(self.log_mag), self.arg)


def parse_complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        re, im = value
        return complex(float(re), float(im))
    if isinstance(value, str):
        return complex(value.replace(" ", "").replace("i", "j"))
    return complex(value)


def _complex_json(c: complex):
    c = complex(c)
    return c.real if c.imag == 0 else [c.real, c.imag]


@dataclass(frozen=True)
class FunctionSpec:
    kind: str
    lam: complex = 1.0
    coefficients: tuple = field(default_factory=tuple)
    validity_radius: float = math.inf
    scale: complex = 1.0
    shift: complex = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}")
        object.__setattr__(self, "lam", complex(self.lam))
        object.__setattr__(self, "scale", complex(self.scale))
        object.__setattr__(self, "shift", complex(self.shift))
        coeffs = tuple(complex(c) for c in self.coefficients)
        if self.kind in ("polynomial", "taylor"):
            while len(coeffs) > 1 and coeffs[-1] == 0:
                coeffs = coeffs[:-1]
            if not coeffs:
                raise ValueError("coefficient list is empty")
        object.__setattr__(self, "coefficients", coeffs)
        if self.kind == "scaled_exp" and self.lam == 0:
            raise ValueError("lambda must be nonzero")

    # -- constructors -------------------------------------------------------
    @classmethod
    def scaled_exp(cls, lam=1.0) -> "FunctionSpec":
        return cls("scaled_exp", lam=lam)

    @classmethod
    def sin(cls) -> "FunctionSpec":
        return cls("sin")

    @classmethod
    def cos(cls) -> "FunctionSpec":
        return cls("cos")

    @classmethod
    def polynomial(cls, coefficients: Sequence[complex]) -> "FunctionSpec":
        """Coefficients in ascending order: ``[c0, c1, ...]``."""
        return cls("polynomial", coefficients=tuple(coefficients))

    @classmethod
    def taylor(cls, coefficients: Sequence[complex], validity_radius: float) -> "FunctionSpec":
        return cls("taylor", coefficients=tuple(coefficients), validity_radius=float(validity_radius))

    @classmethod
    def taylor_exp(cls, n_terms: int, validity_radius: float) -> "FunctionSpec":
        return cls.taylor([1.0 / math.factorial(k) for k in range(n_terms)], validity_radius)

    def shifted(self, shift: complex) -> "FunctionSpec":
        """z -> f(z + shift)."""
        return replace(self, shift=self.shift + complex(shift))

    def rescaled(self, factor: complex) -> "FunctionSpec":
        return replace(self, scale=self.scale * complex(factor))

    def normalized(self) -> "FunctionSpec":
        """Return f / f(0); raises NormalizationError when f(0) = 0."""
        f0 = self.log_sample(0j)
        if f0.is_zero or abs(self.evaluate(0j)) < ZERO_TOL:
            raise NormalizationError(f"{self.label()} vanishes at the origin")
        return self.rescaled(1.0 / self.evaluate(0j))

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.evaluate(0j) - 1.0) <= tol

    @property
    def is_transcendental(self) -> bool:
        return self.kind not in ("polynomial",)

    @property
    def exp_log_coeff(self) -> complex:
        """log of the effective multiplier c in ``c e^z`` (scaled_exp only)."""
        return cmath.log(self.scale) + cmath.log(self.lam) + self.shift

    def label(self) -> str:
        return self.kind

    # -- serialization ------------------------------------------------------
    def to_json(self) -> dict:
        params: dict = {}
        if self.kind == "scaled_exp":
            params["lambda"] = _complex_json(self.lam)
        if self.kind in ("polynomial", "taylor"):
            params["coefficients"] = [_complex_json(c) for c in self.coefficients]
        if self.kind == "taylor":
            params["validity_radius"] = self.validity_radius
        if self.scale != 1:
            params["scale"] = _complex_json(self.scale)
        if self.shift != 0:
            params["shift"] = _complex_json(self.shift)
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_json(cls, doc) -> "FunctionSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        kind = doc["kind"]
        p = doc.get("params", {})
        kwargs = {}
        if "lambda" in p:
            kwargs["lam"] = parse_complex(p["lambda"])
        if "coefficients" in p:
            kwargs["coefficients"] = tuple(parse_complex(c) for c in p["coefficients"])
        if "validity_radius" in p:
            kwargs["validity_radius"] = float(p["validity_radius"])
        if "scale" in p:
            kwargs["scale"] = parse_complex(p["scale"])
        if "shift" in p:
            kwargs["shift"] = parse_complex(p["shift"])
        return cls(kind, **kwargs)

    # -- internals ----------------------------------------------------------
    def _sin_shift(self) -> complex:
        # cos w = sin(w + pi/2)
        return self.shift + (math.pi / 2 if self.kind == "cos" else 0.0)

    def _check_taylor(self, z: np.ndarray) -> None:
        if np.any(np.abs(z) > self.validity_radius * (1 + 1e-12)):
            raise OutOfValidity(
                f"|z| = {float(np.max(np.abs(z))):.6g} beyond validity radius {self.validity_radius}"
            )

    def _taylor_sum(self, w: np.ndarray, coeffs) -> np.ndarray:
        c = np.asarray(coeffs)[::-1]
        return np.polyval(c, w)

    def _taylor_checked(self, w: np.ndarray) -> np.ndarray:
        self._check_taylor(w)
        s = self._taylor_sum(w, self.coefficients)
        n = len(self.coefficients)
        # next-term estimate: magnitude of the last retained term
        last = np.abs(self.coefficients[-1]) * np.abs(w) ** (n - 1)
        if np.any(last > TAIL_RTOL * np.abs(s)):
            raise OutOfValidity("Taylor tail exceeds tolerance; increase terms or reduce |z|")
        return s

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, z):
        """f(z).  Raises FloatRangeOverflow when the result leaves double range."""
        scalar = np.ndim(z) == 0
        za = np.asarray(z, dtype=complex)
        w = za + self.shift
        with np.errstate(over="ignore", invalid="ignore"):
            if self.kind == "scaled_exp":
                logc = self.exp_log_coeff
                if np.any(za.real + logc.real > LOG_FLOAT_MAX):
                    raise FloatRangeOverflow("exp overflow; use evaluate_log", None)
                out = np.exp(za + logc)
            elif self.kind in ("sin", "cos"):
                ws = za + self._sin_shift()
                if np.any(np.abs(ws.imag) > LOG_FLOAT_MAX):
                    raise FloatRangeOverflow("sin overflow; use evaluate_log", None)
                out = self.scale * np.sin(ws)
            elif self.kind == "polynomial":
                out = self.scale * self._taylor_sum(w, self.coefficients)
            else:
                out = self.scale * self._taylor_checked(w)
        if not np.all(np.isfinite(out)):
            raise FloatRangeOverflow("value exceeds float range", None)
        return complex(out) if scalar else out

    __call__ = evaluate

    def derivative(self, z):
        scalar = np.ndim(z) == 0
        za = np.asarray(z, dtype=complex)
        w = za + self.shift
        with np.errstate(over="ignore", invalid="ignore"):
            if self.kind == "scaled_exp":
                out = np.exp(za + self.exp_log_coeff)
            elif self.kind in ("sin", "cos"):
                out = self.scale * np.cos(za + self._sin_shift())
            else:
                c = np.asarray(self.coefficients)
                dc = c[1:] * np.arange(1, len(c)) if len(c) > 1 else np.zeros(1, complex)
                if self.kind == "taylor":
                    self._check_taylor(w)
                out = self.scale * self._taylor_sum(w, dc)
        if not np.all(np.isfinite(out)):
            raise FloatRangeOverflow("derivative exceeds float range", None)
        return complex(out) if scalar else out

    def log_abs(self, z):
        """log|f(z)| without overflow; -inf at exact zeros."""
        scalar = np.ndim(z) == 0
        za = np.asarray(z, dtype=complex)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            if self.kind == "scaled_exp":
                out = self.exp_log_coeff.real + za.real
            elif self.kind in ("sin", "cos"):
                if scalar:
                    return math.log(abs(self.scale)) + _log_abs_sin_scalar(complex(za) + self._sin_shift())
                out = np.log(abs(self.scale)) + _log_abs_sin(za + self._sin_shift())
            elif self.kind == "polynomial":
                out = np.log(abs(self.scale)) + _log_abs_poly(za + self.shift, self.coefficients)
            else:
                out = np.log(np.abs(self.evaluate(za)))
        return float(out) if scalar else out

    def log_sample(self, z: complex) -> ComplexSample:
        la = self.log_abs(z)
        if la == -math.inf:
            return ComplexSample.zero()
        if self.kind == "scaled_exp":
            return ComplexSample(la, self.exp_log_coeff.imag + complex(z).imag)
        if self.kind in ("sin", "cos"):
            th = cmath.phase(self.scale) + float(_arg_sin(np.asarray(complex(z) + self._sin_shift())))
            return ComplexSample(la, th)
        if self.kind == "polynomial":
            th = cmath.phase(self.scale) + float(_arg_poly(np.asarray(complex(z) + self.shift), self.coefficients))
            return ComplexSample(la, th)
        return ComplexSample(la, cmath.phase(self.evaluate(z)))

    def evaluate_log_array(self, log_mag, arg):
        """Vectorized log-polar evaluation: (log|z|, arg z) -> (log|f|, arg f).

        Inputs may carry log|z| far beyond the double range of |z| itself for
        the exponential and polynomial families.
        """
        L = np.asarray(log_mag, dtype=float)
        th = np.asarray(arg, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.kind == "scaled_exp" and self.shift == 0:
                c = self.exp_log_coeff
                r = np.exp(L)
                out_L = c.real + r * np.cos(th)
                out_t = wrap_angle(c.imag + r * np.sin(th))
                return out_L, out_t
            if self.kind == "polynomial" and self.shift == 0:
                return _poly_log_eval(L, th, self.coefficients, self.scale)
            big = L > LOG_FLOAT_MAX
            if np.any(big):
                raise Unsupported(f"{self.kind}: extended-range evaluation unavailable for |z| beyond float range")
            z = np.exp(L) * np.exp(1j * th)
            out_L = np.asarray(self.log_abs(z), dtype=float)
            if self.kind in ("sin", "cos"):
                out_t = wrap_angle(np.angle(self.scale) + _arg_sin(z + self._sin_shift()))
            elif self.kind == "polynomial":
                out_t = wrap_angle(np.angle(self.scale) + _arg_poly(z + self.shift, self.coefficients))
            elif self.kind == "scaled_exp":
                out_t = wrap_angle(self.exp_log_coeff.imag + z.imag)
            else:
                out_t = np.angle(self.evaluate(z))
            return out_L, out_t

    def evaluate_log(self, z_logmag: float, z_arg: float) -> ComplexSample:
        L, t = self.evaluate_log_array(np.array([z_logmag]), np.array([z_arg]))
        if L[0] == -math.inf:
            return ComplexSample.zero()
        if not math.isfinite(L[0]):
            raise FloatRangeOverflow("log-modulus exceeds float range", float(L[0]))
        return ComplexSample(float(L[0]), float(t[0]))

    def log_derivative(self, z):
        """f'(z)/f(z) by closed form per family."""
        scalar = np.ndim(z) == 0
        za = np.asarray(z, dtype=complex)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.kind == "scaled_exp":
                out = np.ones_like(za)
            else:
                if np.any(np.asarray(self.log_abs(za)) < math.log(ZERO_TOL)):
                    raise NearZeroDivision("|f(z)| below tolerance")
                if self.kind in ("sin", "cos"):
                    out = _cot(za + self._sin_shift())
                else:
                    out = self.derivative(za) / self.evaluate(za) if self.kind == "taylor" else \
                        _poly_logderiv(za + self.shift, self.coefficients)
        return complex(out) if scalar else out

    def branch_log(self, z: complex) -> complex | None:
        """A globally continuous log f(z) where one exists (exp family only)."""
        if self.kind == "scaled_exp":
            return self.exp_log_coeff + complex(z)
        return None

    # -- zeros --------------------------------------------------------------
    def known_zeros(self, r: float, *, allow_root_finding: bool = True, cap: int = 10**6) -> list:
        """All zeros with |z| <= r (with multiplicity), sorted by modulus."""
        if r <= 0:
            raise ValueError("r must be positive")
        if self.kind == "scaled_exp":
            return []
        if self.kind in ("sin", "cos"):
            s = self._sin_shift()
            # zeros of sin(z + s): z = k pi - s
            kmin = math.floor((-r + s.real) / math.pi) - 1
            kmax = math.ceil((r + s.real) / math.pi) + 1
            if kmax - kmin > cap:
                raise Unsupported(f"zero set of size ~{kmax - kmin} exceeds cap {cap}")
            zs = [complex(k * math.pi) - s for k in range(kmin, kmax + 1)]
            zs = [z for z in zs if abs(z) <= r * (1 + 1e-14)]
            return sorted(zs, key=lambda z: (abs(z), cmath.phase(z)))
        if self.kind == "polynomial":
            roots = np.roots(np.asarray(self.coefficients)[::-1]) - self.shift
            zs = [complex(z) for z in roots if abs(z) <= r * (1 + 1e-12)]
            return sorted(zs, key=lambda z: (abs(z), cmath.phase(z)))
        if not allow_root_finding:
            raise Unsupported("no zero generator for Taylor series and root finding disabled")
        return self._taylor_zeros(r)

    def _taylor_zeros(self, r: float) -> list:
        rr = min(r, self.validity_radius)
        roots = np.roots(np.asarray(self.coefficients)[::-1]) - self.shift
        out = []
        for z0 in roots:
            if abs(z0) > rr * 1.01 + 1e-9:
                continue
            z = complex(z0)
            for _ in range(30):
                try:
                    fz, dz = self.evaluate(z), self.derivative(z)
                except OutOfValidity:
                    break
                if dz == 0:
                    break
                step = fz / dz
                z -= step
                if abs(step) < 1e-15 * max(1.0, abs(z)):
                    break
            try:
                ok = abs(z) <= rr and abs(self._taylor_sum(np.asarray(z + self.shift), self.coefficients)) < 1e-9
            except OutOfValidity:
                ok = False
            if ok:
                out.append(z)
        return sorted(out, key=lambda z: (abs(z), cmath.phase(z)))

    # -- closed forms (test oracles and extended-range shortcuts) -----------
    def closed_form_log_M(self, r: float) -> float | None:
        if self.kind == "scaled_exp":
            return self.exp_log_coeff.real + r
        if self.kind == "sin" and self.shift == 0:
            return math.log(abs(self.scale)) + _log_sinh(r)
        return None

    def closed_form_log_L(self, r: float) -> float | None:
        if self.kind == "scaled_exp":
            return self.exp_log_coeff.real - r
        return None

    def closed_form_T(self, r: float) -> float | None:
        """Exact characteristic of c e^z: (r/pi)(sin a - k a) with k = -log|c|/r, a = arccos k."""
        if self.kind != "scaled_exp":
            return None
        k = -self.exp_log_coeff.real / r
        if k >= 1:
            return 0.0
        if k <= -1:
            return self.exp_log_coeff.real
        a = math.acos(k)
        return (r / math.pi) * (math.sin(a) - k * a)


def _log_sinh(r: float) -> float:
    if r > 20:
        return r - math.log(2) + math.log1p(-math.exp(-2 * r))
    return math.log(math.sinh(r))


def _log_abs_sin(w: np.ndarray) -> np.ndarray:
    # |sin(x+iy)|^2 = e^{2|y|}/4 * (expm1(-2|y|)^2 + 4 e^{-2|y|} sin^2 x), no overflow or cancellation
    ay = np.abs(w.imag)
    s = np.sin(w.real)
    with np.errstate(divide="ignore"):
        return ay - math.log(2) + 0.5 * np.log(np.expm1(-2 * ay) ** 2 + 4 * np.exp(-2 * ay) * s * s)


def _log_abs_sin_scalar(w: complex) -> float:
    ay = abs(w.imag)
    s = math.sin(w.real)
    q = math.expm1(-2 * ay) ** 2 + 4 * math.exp(-2 * ay) * s * s
    return ay - math.log(2) + 0.5 * math.log(q) if q > 0 else -math.inf


def _arg_sin(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    y = w.imag
    out = np.empty(w.shape, dtype=float)
    small = np.abs(y) <= 20
    out[small] = np.angle(np.sin(w[small]))
    pos = (~small) & (y > 0)
    neg = (~small) & (y < 0)
    out[pos] = np.pi / 2 - w[pos].real + np.angle(1 - np.exp(2j * w[pos]))
    out[neg] = -np.pi / 2 + w[neg].real + np.angle(1 - np.exp(-2j * w[neg]))
    return wrap_angle(out)


def _cot(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    out = np.empty(w.shape, dtype=complex)
    up = w.imag >= 0
    e = np.exp(2j * w[up])
    out[up] = 1j * (e + 1) / (e - 1)
    e = np.exp(-2j * w[~up])
    out[~up] = 1j * (1 + e) / (1 - e)
    return out


def _poly_big_parts(w: np.ndarray, coeffs):
    """For |w| large: p(w) = c_d w^d (1 + q), returns log|1+q|, arg(1+q)."""
    d = len(coeffs) - 1
    lead = coeffs[-1]
    inv = 1.0 / w
    q = np.zeros(w.shape, dtype=complex)
    for k in range(d):
        q += (coeffs[k] / lead) * inv ** (d - k)
    return np.log(np.abs(1 + q)), np.angle(1 + q)


def _log_abs_poly(w: np.ndarray, coeffs) -> np.ndarray:
    d = len(coeffs) - 1
    aw = np.abs(w)
    big = aw > 1e8
    out = np.empty(w.shape, dtype=float)
    out[~big] = np.log(np.abs(np.polyval(np.asarray(coeffs)[::-1], w[~big])))
    if np.any(big):
        corr, _ = _poly_big_parts(w[big], coeffs)
        out[big] = math.log(abs(coeffs[-1])) + d * np.log(aw[big]) + corr
    return out


def _arg_poly(w: np.ndarray, coeffs) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    d = len(coeffs) - 1
    big = np.abs(w) > 1e8
    out = np.empty(w.shape, dtype=float)
    out[~big] = np.angle(np.polyval(np.asarray(coeffs)[::-1], w[~big]))
    if np.any(big):
        _, corr = _poly_big_parts(w[big], coeffs)
        out[big] = cmath.phase(coeffs[-1]) + d * np.angle(w[big]) + corr
    return wrap_angle(out)


def _poly_log_eval(L, th, coeffs, scale):
    """log-polar polynomial evaluation valid for any finite log|z|."""
    d = len(coeffs) - 1
    big = L > 18.0
    out_L = np.empty(L.shape, dtype=float)
    out_t = np.empty(L.shape, dtype=float)
    if np.any(~big):
        z = np.exp(L[~big]) * np.exp(1j * th[~big])
        p = scale * np.polyval(np.asarray(coeffs)[::-1], z)
        with np.errstate(divide="ignore"):
            out_L[~big] = np.log(np.abs(p))
        out_t[~big] = np.angle(p)
    if np.any(big):
        # 1/z is representable even when z is not
        inv = np.exp(-L[big]) * np.exp(-1j * th[big])
        lead = coeffs[-1]
        q = np.zeros(inv.shape, dtype=complex)
        for k in range(d):
            q += (coeffs[k] / lead) * inv ** (d - k)
        out_L[big] = math.log(abs(scale * lead)) + d * L[big] + np.log(np.abs(1 + q))
        out_t[big] = cmath.phase(scale * lead) + d * th[big] + np.angle(1 + q)
    return out_L, wrap_angle(out_t)


def _poly_logderiv(w: np.ndarray, coeffs) -> np.ndarray:
    c = np.asarray(coeffs)[::-1]
    dc = np.polyder(c) if len(c) > 1 else np.zeros(1)
    return np.polyval(dc, w) / np.polyval(c, w)


# -- module-level API mirroring the operation names ---------------------------

def evaluate(f: FunctionSpec, z):
    return f.evaluate(z)


def evaluate_log(f: FunctionSpec, z_logmag: float, z_arg: float) -> ComplexSample:
    return f.evaluate_log(z_logmag, z_arg)


def log_derivative(f: FunctionSpec, z):
    return f.log_derivative(z)


def known_zeros(f: FunctionSpec, r: float, **kw) -> list:
    return f.known_zeros(r, **kw)
