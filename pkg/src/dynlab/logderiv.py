"""Logarithmic-derivative estimates, exclusion disks, good radii and Koebe checks.

Exclusion disks use a Cartan-type greedy covering.  With a radius profile
rho(k) increasing in k, each step picks the largest k for which some closed
disk of radius rho(k) holds k of the remaining points and removes them.  For z
outside every enlarged disk, the open disk D(z, rho(m)) holds at most m - 1
points, so the m-th nearest point is at distance >= rho(m).  Choosing

    linear    rho(k) = k H / (n c),        c = (1 + log n) / H_n
    quadratic rho(k) = c H sqrt(k / n),    c = 1 - 1 / (2 sqrt n)

gives sum 1/|z - z_k| <= n(1 + log n)/H resp. 2n/H, while the enlarged radii
(at most 2 rho(k_i)) satisfy sum t <= 2H resp. sum s^2 <= 4H^2.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import BudgetExceeded, DegenerateT, InjectivityViolation, NormalizationError
from .function_model import FunctionSpec
from .modulus import characteristic_T, log_max_modulus

COUNT_RTOL = 1e-12


class DiskMode(str, Enum):
    QUADRATIC = "QuadraticSum"
    LINEAR = "LinearSum"


def r_shell(r: float, m: float, T: float) -> float:
    """R_m(r) = r (1 + m / (log T)^2)."""
    if not T > math.e:
        raise DegenerateT(f"T = {T!r} must exceed e")
    return r * (1.0 + m / math.log(T) ** 2)


def r_shell_log(r: float, m: float, log_T: float) -> float:
    """Same as :func:`r_shell` but takes log T (for T beyond double range)."""
    if not log_T > 1.0:
        raise DegenerateT(f"log T = {log_T!r} must exceed 1")
    return r * (1.0 + m / log_T**2)


# ---------------------------------------------------------------------------
# Goldberg estimate


@dataclass
class GoldbergCheck:
    z: complex
    s: float
    bound: float
    log_derivative_abs: float
    T_s: float
    zero_term: float

    @property
    def ok(self) -> bool:
        return self.log_derivative_abs <= self.bound * (1 + 1e-12)


def goldberg_bound(f: FunctionSpec, z: complex, s: float, zeros=None, *, T_s: float | None = None) -> float:
    """4s/(s-|z|)^2 T(s) + sum_{|z_j|<=s} 2/|z - z_j| for f rescaled to f(0) = 1."""
    return goldberg_check(f, z, s, zeros, T_s=T_s).bound


def goldberg_check(f: FunctionSpec, z: complex, s: float, zeros=None, *, T_s: float | None = None) -> GoldbergCheck:
    z = complex(z)
    if not s > abs(z):
        raise ValueError("need s > |z|")
    if abs(f.evaluate(0j)) < 1e-12:
        raise NormalizationError("f(0) = 0; cannot rescale to f(0) = 1")
    g = f if f.is_normalized() else f.normalized()
    if zeros is None:
        zeros = g.known_zeros(s)
    if T_s is None:
        T_s = characteristic_T(g, s)
    zs = np.asarray([w for w in zeros if abs(w) <= s], dtype=complex)
    with np.errstate(divide="ignore"):
        zero_term = float(np.sum(2.0 / np.abs(z - zs))) if zs.size else 0.0
    bound = 4 * s / (s - abs(z)) ** 2 * T_s + zero_term
    try:
        ld = abs(complex(g.log_derivative(z)))
    except Exception:
        ld = math.inf
    return GoldbergCheck(z, s, bound, ld, T_s, zero_term)


# ---------------------------------------------------------------------------
# Exclusion disks


@dataclass
class ExclusionDiskSet:
    mode: DiskMode
    H: float
    n: int
    disks: list  # (center, radius)
    bound: float
    verification: dict = field(default_factory=dict)

    @property
    def budget(self) -> float:
        r = np.array([d[1] for d in self.disks])
        return float(np.sum(r**2)) if self.mode == DiskMode.QUADRATIC else float(np.sum(r))

    @property
    def budget_limit(self) -> float:
        return 4 * self.H**2 if self.mode == DiskMode.QUADRATIC else 2 * self.H

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        inside = np.zeros(z.shape, dtype=bool)
        for c, rad in self.disks:
            inside |= np.abs(z - c) < rad
        return inside

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "H": self.H,
            "n": self.n,
            "bound": self.bound,
            "budget": self.budget,
            "budget_limit": self.budget_limit,
            "disks": [{"center": [c.real, c.imag], "radius": rad} for c, rad in self.disks],
            "verification": self.verification,
        }


def _mode(mode) -> DiskMode:
    if isinstance(mode, DiskMode):
        return mode
    key = str(mode).lower()
    if key in ("i", "1", "quadratic", "quadraticsum", "part_i"):
        return DiskMode.QUADRATIC
    if key in ("ii", "2", "linear", "linearsum", "part_ii"):
        return DiskMode.LINEAR
    raise ValueError(f"unknown mode {mode!r}")


def _max_cover(pts: np.ndarray, R: float):
    """Center and members of a closed disk of radius R holding the most points."""
    tol = R * COUNT_RTOL
    d = np.abs(pts[:, None] - pts[None, :])
    counts = np.sum(d <= R + tol, axis=1)
    best = int(np.argmax(counts))
    best_center, best_count = pts[best], int(counts[best])
    # two-point boundary centers
    i, j = np.nonzero(np.triu((d > 0) & (d <= 2 * R), 1))
    if i.size:
        p, q = pts[i], pts[j]
        mid = 0.5 * (p + q)
        half = 0.5 * np.abs(q - p)
        h = np.sqrt(np.maximum(R * R - half * half, 0.0))
        unit = 1j * (q - p) / np.abs(q - p)
        for cand in (mid + h * unit, mid - h * unit):
            # chunk to bound memory at large n
            for s in range(0, cand.size, 2048):
                cc = cand[s:s + 2048]
                cnt = np.sum(np.abs(cc[:, None] - pts[None, :]) <= R + tol, axis=1)
                k = int(np.argmax(cnt))
                if cnt[k] > best_count:
                    best_count, best_center = int(cnt[k]), cc[k]
    members = np.abs(pts - best_center) <= R + tol
    return best_center, best_count, members


def fuchs_macintyre_disks(zeros, H: float, mode="QuadraticSum", *, cap: int = 10_000,
                          verify_samples: int = 0, seed: int = 0) -> ExclusionDiskSet:
    """Exclusion disks for sum_k 1/|z - z_k| (multiplicities by repetition)."""
    pts = np.asarray(list(zeros), dtype=complex).ravel()
    n = pts.size
    if n < 1:
        raise ValueError("need at least one point")
    if n > cap:
        raise ValueError(f"{n} points exceed the cap {cap}")
    if not H > 0:
        raise ValueError("H must be positive")
    mode = _mode(mode)
    if mode == DiskMode.QUADRATIC:
        c = 1.0 - 1.0 / (2.0 * math.sqrt(n))
        bound = 2.0 * n / H

        def rho(k):
            return c * H * math.sqrt(k / n)
    else:
        harmonic = float(np.sum(1.0 / np.arange(1, n + 1)))
        c = (1.0 + math.log(n)) / harmonic
        bound = n * (1.0 + math.log(n)) / H

        def rho(k):
            return k * H / (n * c)

    remaining = pts.copy()
    disks = []
    while remaining.size:
        k = remaining.size
        while True:
            center, count, members = _max_cover(remaining, rho(k))
            if count >= k:
                break
            # max count is monotone in the radius, so no k in (count, k) can work
            k = max(count, 1)
        removed = remaining[members]
        spread = float(np.max(np.abs(removed - center)))
        if spread == 0.0:
            radius = rho(k)
        else:
            radius = rho(k) + spread
        disks.append((complex(center), float(radius)))
        remaining = remaining[~members]

    out = ExclusionDiskSet(mode, float(H), int(n), disks, float(bound))
    if out.budget > out.budget_limit * (1 + 1e-9) or len(disks) > n:
        raise BudgetExceeded(f"budget {out.budget} exceeds {out.budget_limit}")
    if verify_samples:
        out.verification = verify_exclusion(out, pts, verify_samples, seed=seed)
    return out


def zero_sum(z, zeros) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    zs = np.asarray(zeros, dtype=complex)
    out = np.zeros(z.shape)
    for w in zs:
        out += 1.0 / np.abs(z - w)
    return out


def verify_exclusion(ds: ExclusionDiskSet, zeros, samples: int = 10_000, *, seed: int = 0) -> dict:
    """Monte Carlo maximum of the zero sum outside the disks.

    Half the samples are uniform in a box around the points, half sit just
    outside disk boundaries where the sum is largest.
    """
    rng = np.random.default_rng(seed)
    zs = np.asarray(zeros, dtype=complex)
    pad = 2 * ds.H + 1e-9
    lo_re, hi_re = zs.real.min() - pad, zs.real.max() + pad
    lo_im, hi_im = zs.imag.min() - pad, zs.imag.max() + pad
    n_box = samples // 2
    box = rng.uniform(lo_re, hi_re, n_box) + 1j * rng.uniform(lo_im, hi_im, n_box)
    n_edge = samples - n_box
    which = rng.integers(0, len(ds.disks), n_edge)
    centers = np.array([d[0] for d in ds.disks])[which]
    radii = np.array([d[1] for d in ds.disks])[which]
    ang = rng.uniform(0, 2 * np.pi, n_edge)
    edge = centers + radii * (1 + 1e-9) * np.exp(1j * ang)
    z = np.concatenate([box, edge])
    z = z[~ds.contains(z)]
    if z.size == 0:
        return {"samples": 0, "max_sum": None, "violations": 0, "ok": True}
    s = zero_sum(z, zs)
    viol = int(np.sum(s > ds.bound * (1 + 1e-12)))
    return {"samples": int(z.size), "max_sum": float(s.max()), "violations": viol, "ok": viol == 0}


# ---------------------------------------------------------------------------
# Growth lemma / good radii


@dataclass
class RadiusCheck:
    r: float
    T_r: float
    T_R6: float
    good: bool
    log_M: float | None = None
    b1_holds: bool | None = None


@dataclass
class GoodRadiusScan:
    radii: list
    phi_spec: str
    exceptional_log_measure_estimate: float

    @property
    def bad(self) -> list:
        return [c.r for c in self.radii if not c.good]

    def to_json(self) -> dict:
        return {"radii": [asdict(c) for c in self.radii], "phi_spec": self.phi_spec,
                "exceptional_log_measure_estimate": self.exceptional_log_measure_estimate}


def _log_measure_of_bad(r_grid: np.ndarray, bad: np.ndarray) -> float:
    """Sum of log-lengths of grid intervals [r_i, r_{i+1}] with r_i bad (last bad radius uses the previous interval)."""
    lr = np.log(r_grid)
    total = 0.0
    used = set()
    for i in np.nonzero(bad)[0]:
        j = i if i + 1 < len(lr) else i - 1
        if j >= 0 and j not in used:
            used.add(j)
            total += lr[j + 1] - lr[j]
    return float(total)


def growth_lemma_scan(F: Callable[[float], float], phi: Callable[[float], float], r_grid) -> list:
    """Abstract form: flags r with F(r (1 + 1/phi(F(r)))) > F(r) + 1."""
    out = []
    for r in np.asarray(r_grid, dtype=float):
        Fr = float(F(r))
        shell = r * (1 + 1 / phi(Fr))
        Fs = float(F(shell))
        out.append((float(r), Fr, Fs, Fs <= Fr + 1))
    return out


def good_radius_scan(f: FunctionSpec | None, r_grid, *, T_func: Callable[[float], float] | None = None,
                     check_b1: bool = True, rtol: float = 1e-8) -> GoodRadiusScan:
    """Test T(R_6(r)) <= e T(r) on a grid, and log M <= T (log T)^2 at good radii.

    ``T_func`` replaces the quadrature (synthetic profiles); then no M check is made.
    """
    rs = np.sort(np.asarray(r_grid, dtype=float))
    if T_func is None:
        if f is None:
            raise ValueError("need f or T_func")

        def T_func(r):
            return characteristic_T(f, r, rtol=rtol)
    checks = []
    for r in rs:
        T = float(T_func(r))
        if not T > math.e:
            raise DegenerateT(f"T({r:g}) = {T:.6g} <= e")
        R6 = r_shell(r, 6, T)
        T6 = float(T_func(R6))
        good = T6 <= math.e * T
        c = RadiusCheck(float(r), T, T6, bool(good))
        if f is not None and check_b1 and good:
            c.log_M = float(log_max_modulus(f, r))
            c.b1_holds = bool(c.log_M <= T * math.log(T) ** 2)
        checks.append(c)
    bad = np.array([not c.good for c in checks])
    est = _log_measure_of_bad(rs, bad)
    return GoodRadiusScan(checks, "phi(x) = x^2/6, F = log T, good iff T(R_6(r)) <= e T(r)", est)


# ---------------------------------------------------------------------------
# Koebe distortion


@dataclass
class DiskMap:
    """A map ``func`` on D(a, r) with optional derivative and inverse."""
    func: Callable
    a: complex
    r: float
    derivative: Callable | None = None

    def __call__(self, z):
        return self.func(z)

    def deriv(self, z):
        if self.derivative is not None:
            return self.derivative(z)
        h = 1e-4 * self.r
        z = np.asarray(z, dtype=complex)
        g = self.func
        d1 = (g(z + h) - g(z - h)) / (2 * h)
        d2 = (g(z + h / 2) - g(z - h / 2)) / h
        return (4 * d2 - d1) / 3


@dataclass
class KoebeReport:
    lam: float
    samples: int
    ratio_range: tuple
    ratio_bounds: tuple
    deriv_range: tuple
    deriv_bounds: tuple
    distortion_ok: bool
    derivative_ok: bool
    quarter_rays: int
    quarter_hits: int
    slack: float

    @property
    def quarter_ok(self) -> bool:
        return self.quarter_hits == self.quarter_rays

    @property
    def ok(self) -> bool:
        return self.distortion_ok and self.derivative_ok and self.quarter_ok

    def to_json(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def _newton_ray(gm: DiskMap, target_dir: complex, length: float, steps: int = 64) -> bool:
    """Continue g(z) = g(a) + t e^{i phi}, t in [0, length], from z = a."""
    g, dg = gm.func, gm.deriv
    z = complex(gm.a)
    ga = complex(g(np.complex128(z)))
    for t in np.linspace(0.0, length, steps + 1)[1:]:
        w = ga + t * target_dir
        for _ in range(50):
            gz = complex(g(np.complex128(z)))
            step = (gz - w) / complex(dg(np.complex128(z)))
            z -= step
            if abs(z - gm.a) >= gm.r:
                return False
            if abs(step) <= 1e-14 * max(1.0, abs(z)):
                break
        if abs(complex(g(np.complex128(z))) - w) > 1e-9 * max(1.0, abs(w), length):
            return False
    return True


def koebe_check(gm: DiskMap, lam: float, samples: int = 256, *, points=None, rays: int = 50,
                slack: float = 1e-9, seed: int = 0) -> KoebeReport:
    """Distortion sandwiches on closed D(a, lam r) and the one-quarter inclusion."""
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    a, r = complex(gm.a), float(gm.r)
    if points is None:
        k = max(samples - samples // 4, 1)
        rad = lam * r * np.sqrt(rng.uniform(0, 1, k))
        inner = a + rad * np.exp(1j * rng.uniform(0, 2 * np.pi, k))
        rim = a + lam * r * np.exp(1j * np.linspace(0, 2 * np.pi, samples - k, endpoint=False))
        z = np.concatenate([inner, rim])
    else:
        z = np.asarray(points, dtype=complex).ravel()
    z = z[np.abs(z - a) > 0]
    ga = complex(gm(np.complex128(a)))
    dga = abs(complex(gm.deriv(np.complex128(a))))
    gz = np.asarray(gm(z), dtype=complex)

    # injectivity on the sample set (plus a)
    imgs = np.concatenate([gz, [ga]])
    if imgs.size > 1:
        srt = np.sort_complex(imgs)
        d = np.abs(np.diff(srt))
        pair = np.abs(imgs[:, None] - imgs[None, :]) if imgs.size <= 4096 else None
        if pair is not None:
            np.fill_diagonal(pair, np.inf)
            dmin = float(pair.min())
        else:
            dmin = float(d.min())
        if dmin <= 1e-15 * max(1.0, float(np.abs(imgs).max())):
            raise InjectivityViolation("two sample points share an image")

    ratio = np.abs(gz - ga) / np.abs(z - a) / dga
    lo, hi = 1 / (1 + lam) ** 2, 1 / (1 - lam) ** 2
    dr = np.abs(np.asarray(gm.deriv(z), dtype=complex)) / dga
    dlo, dhi = (1 - lam) / (1 + lam) ** 3, (1 + lam) / (1 - lam) ** 3
    dist_ok = bool(np.all(ratio >= lo - slack) and np.all(ratio <= hi + slack))
    der_ok = bool(np.all(dr >= dlo - slack) and np.all(dr <= dhi + slack))

    length = 0.999 * dga * r / 4
    hits = 0
    for phi in np.linspace(0, 2 * np.pi, rays, endpoint=False):
        if _newton_ray(gm, complex(math.cos(phi), math.sin(phi)), length):
            hits += 1
    return KoebeReport(
        lam=lam, samples=int(z.size),
        ratio_range=(float(ratio.min()), float(ratio.max())), ratio_bounds=(lo, hi),
        deriv_range=(float(dr.min()), float(dr.max())), deriv_bounds=(dlo, dhi),
        distortion_ok=dist_ok, derivative_ok=der_ok,
        quarter_rays=rays, quarter_hits=hits, slack=slack,
    )
