"""Candidate sets, disk packings and the nested inverse-branch cascade.

Points near a level radius r are held in a relative frame z = r (1 + u) e^{i theta},
so that every quantity stays meaningful when r itself is far beyond double range
(the exponential family reaches log r ~ 1e10 at the third level).
"""
from __future__ import annotations

import cmath
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    BadRadius,
    CriticalSeed,
    DegenerateT,
    DepthUnreachable,
    DynlabError,
    EmptyAfterExclusion,
    EmptyCandidate,
    NearZeroDivision,
    NoConvergence,
    PreconditionViolated,
    WrongBranch,
)
from .function_model import LOG_FLOAT_MAX, ComplexSample, FunctionSpec, wrap_angle
from .logderiv import DiskMap, fuchs_macintyre_disks, koebe_check
from .modulus import characteristic_T, log_max_modulus

EPS = sys.float_info.epsilon
KOEBE_M = 20.0
LOG_PI = math.log(math.pi)


def _is_exp(f: FunctionSpec) -> bool:
    return f.kind == "scaled_exp"


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x <= LOG_FLOAT_MAX + 0.78 else math.inf


# ---------------------------------------------------------------------------
# per-radius scale data


@dataclass(frozen=True)
class LevelScale:
    log_r: float
    log_T: float
    log_M: float  # may be inf when r is beyond double range

    @property
    def r(self) -> float:
        return _exp_or_inf(self.log_r)

    @property
    def T(self) -> float:
        return _exp_or_inf(self.log_T)

    @property
    def L2(self) -> float:
        """(log T)^2."""
        return self.log_T**2

    def rho_rel(self, delta: float) -> float:
        return math.exp(-(1 - 2 * delta) * self.log_T)

    def log_rho(self, delta: float) -> float:
        return self.log_r - (1 - 2 * delta) * self.log_T


def level_scale(f: FunctionSpec, log_r: float) -> LevelScale:
    """T(r) and log M(r) in log form; closed forms where available."""
    if _is_exp(f):
        c = f.exp_log_coeff.real
        r = _exp_or_inf(log_r)
        if math.isfinite(r):
            T = f.closed_form_T(r)
            log_T = math.log(T) if T > 0 else -math.inf
            return LevelScale(log_r, log_T, c + r)
        # T = (r/pi)(1 + O(1/r)) once r dwarfs log|c|
        return LevelScale(log_r, log_r - LOG_PI, math.inf)
    r = _exp_or_inf(log_r)
    if not math.isfinite(r):
        raise DepthUnreachable(f"{f.kind}: radius e^{log_r:.6g} beyond double range")
    T = f.closed_form_T(r)
    if T is None:
        T = characteristic_T(f, r)
    lm = f.closed_form_log_M(r)
    if lm is None:
        lm = log_max_modulus(f, r)
    return LevelScale(log_r, math.log(T) if T > 0 else -math.inf, lm)


def _require_T(sc: LevelScale) -> None:
    if not sc.log_T > 1.0:
        raise DegenerateT(f"T(r) = {math.exp(sc.log_T):.6g} <= e at r = {sc.r:.6g}")


def is_good_radius(f: FunctionSpec, log_r: float, sc: LevelScale | None = None) -> bool:
    """T(R_6(r)) <= e T(r), compared in log form."""
    sc = sc or level_scale(f, log_r)
    _require_T(sc)
    log_R6 = log_r + math.log1p(6.0 / sc.L2)
    sc6 = level_scale(f, log_R6)
    return sc6.log_T <= sc.log_T + 1.0


# ---------------------------------------------------------------------------
# candidate set A(r)


@dataclass
class CandidateSet:
    f: FunctionSpec
    r: float
    delta: float
    T_r: float
    log_r: float
    log_T: float
    log_M: float
    u: np.ndarray  # radial offsets, |z| = r (1 + u)
    theta: np.ndarray
    flags: np.ndarray
    n_rings: int
    n_angles: int
    area_estimate: float
    log_area_estimate: float
    area_stderr: float
    area_bound: float  # 2 r^2 / T^{2 delta}
    log_area_bound: float
    F_r_radii: list
    J_s_measures: list
    checks: dict = field(default_factory=dict)

    @property
    def log_annulus_area(self) -> float:
        return 2 * self.log_r + math.log(_annulus_rel_area(self.log_T**2, 1, 3))

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flags))

    def points(self, mask=None) -> np.ndarray:
        """Sample points as complex numbers (requires finite r)."""
        if not math.isfinite(self.r):
            raise DepthUnreachable("radius beyond double range; use (u, theta)")
        sel = slice(None) if mask is None else mask
        return self.r * (1 + self.u[sel]) * np.exp(1j * self.theta[sel])

    def summary(self) -> dict:
        return {
            "log_r": self.log_r, "log_T": self.log_T, "delta": self.delta,
            "n_samples": int(self.flags.size), "n_flagged": int(self.flags.sum()),
            "log_area_estimate": self.log_area_estimate,
            "area_estimate": self.area_estimate, "area_stderr": self.area_stderr,
            "log_area_bound": self.log_area_bound, "area_bound": self.area_bound,
            "n_F_r_radii": len(self.F_r_radii),
            "min_J_s": min((m for _, m in self.J_s_measures), default=0.0),
            "checks": self.checks,
        }


def _annulus_rel_area(L2: float, m_lo: float, m_hi: float) -> float:
    """(area of R_lo <= |z| <= R_hi) / r^2, stable when m/L2 underflows against 1."""
    a, b = m_lo / L2, m_hi / L2
    return math.pi * ((2 * b + b * b) - (2 * a + a * a))


def _ring_offsets(L2: float, t: np.ndarray) -> np.ndarray:
    """u with (1+u)^2 uniform in [(1+1/L2)^2, (1+3/L2)^2] at fraction t."""
    a, b = 1.0 / L2, 3.0 / L2
    x = (2 * a + a * a) + t * ((2 * b + b * b) - (2 * a + a * a))
    return np.expm1(0.5 * np.log1p(x))


def _log_f_rel(f: FunctionSpec, log_r: float, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """log|f(r (1+u) e^{i theta})| for finite r."""
    r = _exp_or_inf(log_r)
    z = r * (1 + u) * np.exp(1j * theta)
    return np.asarray(f.log_abs(z), dtype=float)


def candidate_set(f: FunctionSpec, r: float | None, delta: float, grid_density: int = 200, *,
                  seed: int = 0, log_r: float | None = None, check_good: bool = True) -> CandidateSet:
    """Flag lattice samples of R_1 <= |z| <= R_3 with |f| >= sqrt M and |f'/f| >= T^{1-delta}/r."""
    if not 0 < delta < 2.0 / 7.0 + 1e-12:
        raise ValueError("delta must lie in (0, 2/7]")
    if log_r is None:
        if r is None or r <= 0:
            raise ValueError("need r > 0 or log_r")
        log_r = math.log(r)
    if grid_density < 8:
        raise ValueError("grid_density must be >= 8")
    sc = level_scale(f, log_r)
    _require_T(sc)
    if check_good and not is_good_radius(f, log_r, sc):
        raise BadRadius(f"r = e^{log_r:.6g} fails T(R_6(r)) <= e T(r)")
    L2 = sc.L2
    rng = np.random.default_rng(seed)
    n_r = int(grid_density)
    n_t = int(round(2 * math.pi * grid_density))
    t = (np.arange(n_r)[:, None] + rng.uniform(0, 1, (n_r, 1))) / n_r
    u = np.broadcast_to(_ring_offsets(L2, t), (n_r, n_t)).copy()
    theta = -math.pi + 2 * math.pi * (np.arange(n_t)[None, :] + rng.uniform(0, 1, (n_r, n_t))) / n_t

    deriv_threshold = (1 - delta) * sc.log_T - log_r  # log of T^{1-delta}/r
    d3_threshold = sc.log_T + 7 * math.log(sc.log_T) - log_r  # log of T (log T)^7 / r
    if _is_exp(f):
        c = f.exp_log_coeff.real
        r_fin = sc.r
        shift = c / (2 * r_fin) if math.isfinite(r_fin) else 0.0
        mod_ok = (1 + u) * np.cos(theta) >= 0.5 - shift
        log_ld = np.zeros_like(u)  # f'/f = 1
    else:
        la = _log_f_rel(f, log_r, u, theta)
        mod_ok = la >= 0.5 * sc.log_M
        log_ld = np.full(u.shape, -np.inf)
        ok = la > math.log(1e-12)
        if np.any(ok):
            z = sc.r * (1 + u[ok]) * np.exp(1j * theta[ok])
            try:
                log_ld[ok] = np.log(np.abs(f.log_derivative(z)))
            except NearZeroDivision:
                pass
        log_ld[~ok] = np.inf  # near a zero |f'/f| is unbounded
    der_ok = log_ld >= deriv_threshold
    flags = mod_ok & der_ok

    frac = float(flags.mean())
    ann_rel = _annulus_rel_area(L2, 1, 3)
    log_area = 2 * log_r + math.log(ann_rel) + (math.log(frac) if frac > 0 else -math.inf)
    n = flags.size
    log_bound = math.log(2.0) + 2 * log_r - 2 * delta * sc.log_T
    area = _exp_or_inf(log_area) if frac > 0 else 0.0
    se_rel = math.sqrt(frac * (1 - frac) / n)
    stderr = _exp_or_inf(2 * log_r + math.log(ann_rel)) * se_rel if se_rel > 0 else 0.0

    ring_max_ld = np.max(np.where(np.isfinite(log_ld), log_ld, np.inf), axis=1)
    rs_rel = u[:, 0]
    F_r = [float(x) for x, m in zip(rs_rel, ring_max_ld) if m <= d3_threshold]
    J_s = [(float(x), float(2 * math.pi * flags[i].mean())) for i, x in enumerate(rs_rel)]

    if not flags.any():
        raise EmptyCandidate(f"no lattice sample satisfies both tests at r = e^{log_r:.6g}")
    checks = {
        "area_A_bound": bool(log_area >= log_bound),
        "F_r_length_rel": float(len(F_r) / n_r * 2.0 / L2),
        "F_r_length_bound_rel": float(1.0 / L2),
        "J_s_min": float(min(m for _, m in J_s)),
        "J_s_bound": float(math.exp(-delta * sc.log_T)),
        "logM_le_T_logT2": bool(sc.log_M <= math.exp(sc.log_T) * L2) if math.isfinite(sc.log_M) else True,
    }
    return CandidateSet(
        f=f, r=sc.r, delta=delta, T_r=sc.T, log_r=log_r, log_T=sc.log_T, log_M=sc.log_M,
        u=u.ravel(), theta=theta.ravel(), flags=flags.ravel(), n_rings=n_r, n_angles=n_t,
        area_estimate=area, log_area_estimate=log_area, area_stderr=stderr,
        area_bound=_exp_or_inf(log_bound), log_area_bound=log_bound,
        F_r_radii=F_r, J_s_measures=J_s, checks=checks,
    )


# ---------------------------------------------------------------------------
# B(r) and packing


@dataclass
class PackedSet:
    parent: CandidateSet
    rho: float
    log_rho: float
    excluded_disks: object  # ExclusionDiskSet or None when there are no zeros
    centers_u: np.ndarray
    centers_theta: np.ndarray
    m_r: int
    capped: bool
    area_B_estimate: float
    log_area_B_estimate: float
    log_m_capacity: float
    checks: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        """Packed centers as complex numbers (finite r only)."""
        p = self.parent
        if not math.isfinite(p.r):
            raise DepthUnreachable("radius beyond double range; use centers_u / centers_theta")
        return p.r * (1 + self.centers_u) * np.exp(1j * self.centers_theta)

    @property
    def m_target(self) -> int:
        """ceil(T^{2 - 7 delta})."""
        p = self.parent
        e = (2 - 7 * p.delta) * p.log_T
        return int(math.ceil(math.exp(e))) if e < 700 else sys.maxsize

    @property
    def log_m_estimate(self) -> float:
        """max(log greedy count, log(area B / (4 pi rho^2)))."""
        return max(math.log(self.m_r), self.log_m_capacity)

    def summary(self) -> dict:
        return {
            "log_rho": self.log_rho, "rho": self.rho, "m_r": self.m_r, "m_r_capped": self.capped,
            "m_target": self.m_target if self.m_target < sys.maxsize else None,
            "log_m_capacity": self.log_m_capacity,
            "log_area_B_estimate": self.log_area_B_estimate, "area_B_estimate": self.area_B_estimate,
            "n_exclusion_disks": 0 if self.excluded_disks is None else len(self.excluded_disks.disks),
            "checks": self.checks,
        }


def _greedy_pack(w: np.ndarray, sep: float, cap: int):
    """Scan-order greedy selection with pairwise distance >= sep (grid hash)."""
    if not sep > 0:
        idx = np.arange(min(w.size, cap))
        return idx, w.size > cap
    cells: dict = {}
    kept = []
    gx = np.floor(w.real / sep).astype(np.int64)
    gy = np.floor(w.imag / sep).astype(np.int64)
    for i in range(w.size):
        cx, cy = int(gx[i]), int(gy[i])
        wi = w[i]
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in cells.get((cx + dx, cy + dy), ()):
                    if abs(wi - w[j]) < sep:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(i)
            cells.setdefault((cx, cy), []).append(i)
            if len(kept) >= cap:
                return np.array(kept), True
    return np.array(kept, dtype=int), False


def exclude_and_pack(cand: CandidateSet, zeros=None, *, cap: int = 20_000, zero_cap: int = 2_000) -> PackedSet:
    """Remove inflated exclusion disks (eta = 3 delta) and greedily pack rho-disks."""
    f, delta = cand.f, cand.delta
    L2 = cand.log_T**2
    log_rho = cand.log_r - (1 - 2 * delta) * cand.log_T
    rho_rel = math.exp(-(1 - 2 * delta) * cand.log_T)
    if zeros is None:
        if math.isfinite(cand.r):
            zeros = f.known_zeros(cand.r * (1 + 5 / L2))
        else:
            zeros = [] if _is_exp(f) else None
            if zeros is None:
                raise DepthUnreachable("zeros unavailable beyond double range")
    zeros = list(zeros)
    checks: dict = {}
    n5 = len(zeros)
    if math.isfinite(cand.T_r):
        checks["zero_count_sanity"] = bool(n5 <= 2 * math.e * cand.T_r * L2)
    flagged = cand.flags.copy()
    ds = None
    if n5 > zero_cap:
        raise PreconditionViolated(f"{n5} zeros in |z| <= R_5(r) exceed the exclusion cap {zero_cap}",
                                   check="zero_cap")
    if zeros:
        eta = 3 * delta
        H = cand.r / (2 * math.exp(eta / 2 * cand.log_T))
        ds = fuchs_macintyre_disks(zeros, H, "QuadraticSum")
        z = cand.points()
        rho = cand.r * rho_rel
        for c, s in ds.disks:
            flagged &= np.abs(z - c) >= s + rho
        checks["exclusion_budget"] = bool(ds.budget <= 4 * H * H * (1 + 1e-9))
    if not flagged.any():
        raise EmptyAfterExclusion("every candidate sample lies in an inflated exclusion disk")
    idx = np.nonzero(flagged)[0]
    w = (1 + cand.u[idx]) * np.exp(1j * cand.theta[idx])
    kept, capped = _greedy_pack(w, 2 * rho_rel, cap)
    sel = idx[kept]
    frac_B = float(flagged.mean())
    log_ann = 2 * cand.log_r + math.log(_annulus_rel_area(L2, 1, 3))
    log_area_B = log_ann + math.log(frac_B)
    log_cap = log_area_B - math.log(4 * math.pi) - 2 * log_rho
    cu, ct = cand.u[sel], cand.theta[sel]
    if zeros and math.isfinite(cand.r):
        cz = cand.r * (1 + cu) * np.exp(1j * ct)
        zs = np.asarray(zeros, dtype=complex)
        dmin = np.min(np.abs(cz[:, None] - zs[None, :]), axis=1)
        checks["no_zero_within_rho"] = bool(np.all(dmin > cand.r * rho_rel))
    else:
        checks["no_zero_within_rho"] = True
    checks["area_B_bound"] = bool(log_area_B >= 2 * cand.log_r - 2 * delta * cand.log_T)
    e = (2 - 7 * delta) * cand.log_T
    checks["packing_bound"] = bool(capped or math.log(len(sel)) >= e - 1e-12)
    rho = _exp_or_inf(log_rho)
    return PackedSet(
        parent=cand, rho=rho if log_rho > -745 else 0.0, log_rho=log_rho, excluded_disks=ds,
        centers_u=cu, centers_theta=ct, m_r=int(len(sel)), capped=bool(capped),
        area_B_estimate=_exp_or_inf(log_area_B), log_area_B_estimate=log_area_B,
        log_m_capacity=log_cap, checks=checks,
    )


def pairwise_separation_ok(packed: PackedSet) -> bool:
    """Exhaustive O(m^2) check that centers are >= 2 rho apart (relative frame)."""
    w = (1 + packed.centers_u) * np.exp(1j * packed.centers_theta)
    sep = 2 * math.exp(packed.log_rho - packed.parent.log_r)
    if w.size < 2 or sep == 0:
        return True
    # chunked so memory stays bounded at the packing cap
    for s in range(0, w.size, 1024):
        d = np.abs(w[s:s + 1024, None] - w[None, :])
        d[np.arange(d.shape[0]), np.arange(s, s + d.shape[0])] = np.inf
        if d.min() < sep * (1 - 1e-12):
            return False
    return True


# ---------------------------------------------------------------------------
# inverse branches


def _log_of(f: FunctionSpec, w: complex) -> complex:
    """log f(w) on the global branch (exp) or the principal value."""
    b = f.branch_log(w)
    if b is not None:
        return b
    s = f.log_sample(w)
    if s.is_zero:
        raise NearZeroDivision(f"f vanishes at {w}")
    return complex(s.log_mag, s.arg)


def inverse_branch(f: FunctionSpec, target, seed: complex, branch_window=None, *,
                   max_iter: int = 50, tol: float = 1e-10) -> complex:
    """Solve log f(w) = target by Newton from ``seed``.

    ``target`` is a ComplexSample (nearest branch to the seed) or a complex
    number, taken as an explicit value of the branch of log f continued from
    the seed.  ``branch_window = (center, halfwidth)`` bounds Im log f(w).
    Tolerances scale with the float resolution of |w| and of the target.
    """
    w = complex(seed)
    try:
        d = complex(f.log_derivative(w))
    except NearZeroDivision as exc:
        raise CriticalSeed(str(exc)) from exc
    if abs(d) < 1e-12:
        raise CriticalSeed(f"f'(seed) ~ 0 at {w}")
    explicit = not isinstance(target, ComplexSample)
    if explicit:
        tq = complex(target)
    else:
        if target.is_zero:
            raise ValueError("target is zero")
        tq = complex(target.log_mag, target.arg)
    phi = _log_of(f, w)
    global_branch = f.branch_log(w) is not None

    def residual(ph):
        if explicit:
            return ph - tq
        return complex(ph.real - tq.real, wrap_angle(ph.imag - tq.imag))

    def advance(ph, w_new):
        if global_branch:
            return f.branch_log(w_new)
        s = f.log_sample(w_new)
        if s.is_zero:
            raise NoConvergence("iterate hit a zero of f")
        return complex(s.log_mag, ph.imag + wrap_angle(s.arg - ph.imag))

    res = residual(phi)
    for _ in range(max_iter):
        scale = max(abs(w), abs(tq), abs(phi))
        tol_here = max(tol, 8 * EPS * scale)
        if abs(res.real) < tol_here and abs(res.imag) < tol_here:
            break
        try:
            d = complex(f.log_derivative(w))
        except NearZeroDivision as exc:
            raise NoConvergence(str(exc)) from exc
        if d == 0:
            raise NoConvergence("vanishing derivative during Newton")
        step = res / d
        for _ in range(30):
            w_new = w - step
            phi_new = advance(phi, w_new)
            res_new = residual(phi_new)
            if abs(res_new) < abs(res) or abs(res_new) < tol_here:
                break
            step *= 0.5
        w, phi, res = w_new, phi_new, res_new
    else:
        scale = max(abs(w), abs(tq), abs(phi))
        tol_here = max(tol, 8 * EPS * scale)
        if not (abs(res.real) < tol_here and abs(res.imag) < tol_here):
            raise NoConvergence(f"no convergence in {max_iter} iterations (residual {abs(res):.3g})")
    if branch_window is not None:
        center, half = branch_window
        if abs(phi.imag - center) > half:
            raise WrongBranch(f"Im log f = {phi.imag:.6g} outside [{center - half:.6g}, {center + half:.6g}]")
    return w


# ---------------------------------------------------------------------------
# cascade


@dataclass
class LogPoint:
    """A point held as (log|z|, arg z); ``z`` is set when it fits in a double."""
    log_mag: float
    arg: float
    z: complex | None = None

    @classmethod
    def from_complex(cls, z: complex) -> "LogPoint":
        return cls(math.log(abs(z)), cmath.phase(z), complex(z))


@dataclass
class ConstructionTrace:
    delta: float
    levels: list
    z0: complex
    orbit_checks: list
    predicted_dim: float
    measured_dim_estimate: float
    beta: float
    N0_est: int
    log_m_final: float
    checks: dict
    diagnostics: dict

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def all_checks_ok(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, complex):
        return [_jsonable(x.real), _jsonable(x.imag)]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _center_choice(packed: PackedSet) -> int:
    """Index of the packed center with the largest radial margin inside ann(r, R_4)."""
    L2 = packed.parent.log_T**2
    u = packed.centers_u
    margin = np.minimum(u, 4.0 / L2 - u)
    return int(np.argmax(margin))


def _log_f_at(f: FunctionSpec, p: LogPoint, log_r: float, u: float) -> ComplexSample:
    """f at a level point; uses the relative frame for the exponential family."""
    if _is_exp(f):
        c = f.exp_log_coeff
        r = _exp_or_inf(log_r)
        x = r * (1 + u) * math.cos(p.arg)
        y = r * (1 + u) * math.sin(p.arg)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DepthUnreachable(f"log|f(b)| overflows at log r = {log_r:.6g}")
        return ComplexSample(c.real + x, c.imag + y)
    if p.z is None:
        raise DepthUnreachable("level point beyond double range")
    s = f.log_sample(p.z)
    if s.is_zero:
        raise PreconditionViolated("f vanishes at the chosen center", check="no_zero_within_rho")
    return s


def _next_radius(f: FunctionSpec, log_fb: float, grid: int = 16) -> float:
    """Smallest good radius with log r in [log|f(b)|, log|f(b)| + log 2]."""
    for t in np.linspace(0.0, math.log(2.0), grid):
        lr = log_fb + float(t)
        try:
            if is_good_radius(f, lr):
                return lr
        except DegenerateT:
            continue
    raise BadRadius(f"no good radius in [|f(b)|, 2|f(b)|] with log|f(b)| = {log_fb:.6g}")


def _pullback(f: FunctionSpec, p: LogPoint, seed: complex) -> complex:
    """psi(p): the preimage of p under f on the branch nearest to ``seed``."""
    return inverse_branch(f, ComplexSample(p.log_mag, p.arg), seed)


def _roundtrip(f: FunctionSpec, w: complex, p: LogPoint):
    s = f.log_sample(w)
    d_mag = abs(s.log_mag - p.log_mag) / max(1.0, abs(p.log_mag))
    d_arg = abs(wrap_angle(s.arg - p.arg))
    tol_arg = max(1e-8, 8 * EPS * abs(w))
    return d_mag, d_arg, tol_arg


def _koebe_exp_chart(log_rho: float, log_b: float, samples: int, seed: int) -> dict:
    """Koebe check for psi = Log + const on D(b, 20 rho), in the chart zeta = (w - b)/b."""
    ratio = math.exp(log_rho - log_b) if log_rho - log_b > -700 else 0.0
    R = KOEBE_M * ratio
    note = "M rho chart"
    if R >= 1.0:
        R = 0.999  # D(b, 20 rho) reaches 0; use the largest disk where Log is univalent
        note = "univalent radius limited by |b|"
    elif R < 1e-6:
        R = 1e-6  # distortion of log1p at this scale is below float resolution
        note = "scale below float resolution; chart radius 1e-6"
    lam = min(max(ratio / R, 1 / KOEBE_M), 0.999) if ratio > 0 else 1 / KOEBE_M
    gm = DiskMap(np.log1p, 0j, R, lambda z: 1 / (1 + z))
    rep = koebe_check(gm, lam, samples, rays=16, seed=seed)
    d = rep.to_json()
    d["chart_radius"] = R
    d["note"] = note
    return d


def _koebe_generic(f: FunctionSpec, b: complex, rho: float, seed_prev: complex, samples: int, seed: int) -> dict:
    """Koebe sandwich for psi on D(b, rho) with lambda = 1/20 via pointwise Newton inversion."""
    R = KOEBE_M * rho

    def psi(w):
        arr = np.atleast_1d(np.asarray(w, dtype=complex))
        out = np.array([_pullback(f, LogPoint.from_complex(x), seed_prev) for x in arr])
        return out if np.ndim(w) else out[0]

    def dpsi(w):
        z = psi(w)
        return 1.0 / np.asarray(f.derivative(z))

    try:
        rep = koebe_check(DiskMap(psi, b, R, dpsi), 1 / KOEBE_M, samples, rays=0, seed=seed)
        d = rep.to_json()
        d["note"] = "pointwise Newton inverse; quarter rays skipped"
    except DynlabError as exc:
        d = {"ok": False, "note": f"{type(exc).__name__}: {exc}"}
    return d


def _q_lattice(f: FunctionSpec, b: complex, rho: float, nx: int = 5, ny: int = 9) -> dict:
    """Lemma-style check: every q in Q(log|f(b)|) has a preimage in D(b, rho) on one branch."""
    phi_b = _log_of(f, b)
    worst_mag, worst_arg, inside = 0.0, 0.0, True
    for x in np.linspace(-0.9, 0.9, nx):
        for y in np.linspace(-1.9 * math.pi, 1.9 * math.pi, ny):
            q = complex(phi_b.real + x, phi_b.imag + y)
            w = inverse_branch(f, q, b)
            inside &= abs(w - b) < rho
            p = LogPoint(q.real, wrap_angle(q.imag))
            dm, da, ta = _roundtrip(f, w, p)
            worst_mag = max(worst_mag, dm)
            worst_arg = max(worst_arg, da / ta * 1e-8)
    return {"points": nx * ny, "all_in_disk": bool(inside), "max_rel_logmag_residual": worst_mag,
            "max_arg_residual_scaled": worst_arg, "ok": bool(inside and worst_mag < 1e-8 and worst_arg < 1e-8)}


def build_cascade(f: FunctionSpec, r0: float, delta: float = 0.25, depth: int = 3, *,
                  grid_density: int = 200, seed: int = 0, pack_cap: int = 20_000,
                  koebe_samples: int = 64, beta_candidates: int = 32) -> ConstructionTrace:
    """Run the nested construction for ``depth`` levels (k = 0 .. depth-1; depth 0 means one level)."""
    g = f.normalized()
    K = max(int(depth), 1)
    levels: list = []
    packs: list = []
    points: list = []  # b_k as LogPoint
    us: list = []
    log_r = math.log(r0)
    if not is_good_radius(g, log_r):
        raise BadRadius(f"r0 = {r0} fails T(R_6(r)) <= e T(r)")
    diagnostics: dict = {"informational": {}}
    for k in range(K):
        try:
            cand = candidate_set(g, None, delta, grid_density, seed=seed + k, log_r=log_r, check_good=False)
            packed = exclude_and_pack(cand, cap=pack_cap)
        except DynlabError as exc:
            exc.args = (f"level {k}: {exc}",) + exc.args[1:]
            raise
        i = _center_choice(packed)
        u_b, th_b = float(packed.centers_u[i]), float(packed.centers_theta[i])
        log_b = log_r + math.log1p(u_b)
        r_fin = cand.r
        bz = r_fin * (1 + u_b) * cmath.exp(1j * th_b) if math.isfinite(r_fin) else None
        if bz is not None and not (math.isfinite(bz.real) and math.isfinite(bz.imag)):
            bz = None
        pb = LogPoint(log_b, th_b, bz)
        L2 = cand.log_T**2
        log_rho = packed.log_rho
        # D(b, 20 rho) inside ann(r, R_4): informational at desk-scale radii
        rho_rel = math.exp(log_rho - log_r)
        in_ann = (u_b - KOEBE_M * rho_rel >= 0) and (u_b + KOEBE_M * rho_rel <= 4 / L2)
        rec = {
            "k": k, "log_r": log_r, "r": r_fin, "log_T": cand.log_T, "T": cand.T_r,
            "log_rho": log_rho, "rho_k": packed.rho,
            "b_k": {"log_mag": log_b, "arg": th_b, "u": u_b, "z": bz},
            "m_r": packed.m_r, "m_r_capped": packed.capped, "log_m_estimate": packed.log_m_estimate,
            "m_target_exponent": (2 - 7 * delta) * cand.log_T,
            "candidate": cand.summary(), "packing": packed.summary(),
            "checks": {"T_above_e": cand.log_T > 1, "pairwise_separation": pairwise_separation_ok(packed)},
            "informational": {"disk_M_rho_in_annulus": bool(in_ann), **cand.checks, **packed.checks},
        }
        if k < K - 1:
            fb = _log_f_at(g, pb, log_r, u_b)
            rec["log_f_b"] = fb.log_mag
            rec["arg_f_b"] = fb.arg
            if not fb.log_mag >= math.log(2.0) + log_r:
                raise PreconditionViolated(f"level {k}: |f(b)| < 2r", check="fb_ge_2r")
            log_next = _next_radius(g, fb.log_mag)
            if not math.isfinite(log_next) or log_next > 1e300:
                raise DepthUnreachable(f"log r_{k + 1} overflows")
            rec["checks"]["next_radius_in_window"] = bool(fb.log_mag <= log_next <= fb.log_mag + math.log(2) + 1e-12)
            log_r = log_next
        levels.append(rec)
        packs.append(packed)
        points.append(pb)
        us.append(u_b)

    # pull every b_k back to level 0 through psi_k ... psi_1
    chains = []
    for k in range(K):
        chain = [points[k]]
        resid = []
        cur = points[k]
        for j in range(k, 0, -1):
            seed_z = points[j - 1].z
            try:
                w = _pullback(g, cur, seed_z)
            except DynlabError as exc:
                exc.args = (f"level {j}: {exc}",) + exc.args[1:]
                raise
            resid.append(_roundtrip(g, w, cur))
            cur = LogPoint.from_complex(w)
            chain.append(cur)
        chains.append((chain[::-1], resid))

    orbit_pts, orbit_resid = chains[-1]
    z0 = orbit_pts[0].z
    orbit_checks = []
    prev_log = -math.inf
    for j, p in enumerate(orbit_pts):
        rec = levels[j]
        L2 = rec["log_T"] ** 2
        lr = rec["log_r"]
        if p.z is not None and j < K - 1 and math.isfinite(rec["r"]):
            u = abs(p.z) / rec["r"] - 1.0
        else:
            u = us[j]
        tol = 8 * EPS * (1 + abs(u))
        member = -tol <= u <= 4 / L2 + tol
        log_mag = lr + math.log1p(u) if u > -1 else -math.inf
        ulp_tol = 8 * EPS * max(1.0, abs(lr))
        log_dom = lr - ulp_tol <= log_mag <= lr + math.log1p(4 / L2) + ulp_tol
        in_disk = True
        if p.z is not None and points[j].z is not None:
            in_disk = abs(p.z - points[j].z) < math.exp(rec["log_rho"])
        if _is_exp(g):
            log_ld = 0.0
        else:
            log_ld = math.log(abs(g.log_derivative(p.z)))
        ld_ok = log_ld <= (1 + 3 * delta) * rec["log_T"] - lr
        orbit_checks.append({
            "k": j, "annulus_membership": bool(member and log_dom), "log_abs": log_mag,
            "in_disk_b_rho": bool(in_disk), "log_derivative_bound": bool(ld_ok),
            "monotone": bool(p.log_mag > prev_log),
        })
        prev_log = p.log_mag

    # sigma_k, diam V_k and the product-formula bound
    log_rho0 = levels[0]["log_rho"]
    sum_logT = 0.0
    for k, (chain, resid) in enumerate(chains):
        rec = levels[k]
        log_deriv = 0.0
        for j in range(k):
            wj = chain[j]
            ld = 0.0 if _is_exp(g) else math.log(abs(g.log_derivative(wj.z)))
            log_deriv += chain[j + 1].log_mag + ld
        log_sigma = rec["log_rho"] - log_deriv
        log_sigma_bound = math.log(r0) - k - (1 - 2 * delta) * rec["log_T"] - (1 + 3 * delta) * sum_logT
        sum_logT += rec["log_T"]
        log_diam = math.log(2) + log_rho0 if k == 0 else math.log(8) + log_sigma
        rec["log_sigma_k"] = log_sigma
        rec["sigma_k"] = _exp_or_inf(log_sigma) if log_sigma > -745 else 0.0
        rec["log_sigma_product_bound"] = log_sigma_bound
        rec["sigma_k_bound"] = _exp_or_inf(log_sigma_bound) if log_sigma_bound > -745 else 0.0
        rec["v_k"] = chain[0].z
        rec["log_diam_Vk_bound"] = log_diam
        rec["diam_Vk_bound"] = _exp_or_inf(log_diam) if log_diam > -745 else 0.0
        rec["checks"]["diam_halving"] = bool(log_diam <= log_rho0 - (k - 1) * math.log(2) + 1e-12)
        rec["checks"]["sigma_ge_1_over_T"] = bool(log_sigma >= -rec["log_T"])
        rec["informational"]["sigma_ge_product_bound"] = bool(log_sigma >= log_sigma_bound - 1e-9)
        worst = max((r[0] for r in resid), default=0.0)
        arg_ok = all(r[1] <= r[2] for r in resid)
        rec["roundtrip_max_rel_logmag"] = worst
        rec["checks"]["roundtrip"] = bool(worst < 1e-8 and arg_ok)
        if k >= 1:
            if _is_exp(g):
                rec["koebe"] = _koebe_exp_chart(rec["log_rho"], points[k].log_mag, koebe_samples, seed + k)
            elif points[k].z is not None:
                rec["koebe"] = _koebe_generic(g, points[k].z, math.exp(rec["log_rho"]), points[k - 1].z,
                                              min(koebe_samples, 32), seed + k)
            else:
                rec["koebe"] = {"ok": False, "note": "point beyond double range"}
            rec["checks"]["koebe"] = bool(rec["koebe"].get("ok", False))
        if k < K - 1 and points[k].z is not None:
            rec["q_lattice"] = _q_lattice(g, points[k].z, math.exp(rec["log_rho"]))
            rec["checks"]["q_lattice"] = rec["q_lattice"]["ok"]

    beta = _measure_beta(g, packs[-1], points, beta_candidates)
    N0 = n0_from_beta(beta)
    log_m = packs[-1].log_m_estimate
    est = dimension_lower_bound_log(log_m, math.log(N0), levels[-1]["log_sigma_k"], delta)
    checks = {}
    for rec in levels:
        for name, ok in rec["checks"].items():
            checks[f"level{rec['k']}_{name}"] = bool(ok)
    for oc in orbit_checks:
        checks[f"orbit{oc['k']}_annulus"] = oc["annulus_membership"]
        checks[f"orbit{oc['k']}_log_derivative_bound"] = oc["log_derivative_bound"]
        checks[f"orbit{oc['k']}_monotone"] = oc["monotone"]
    for rec in levels:
        for name, ok in rec["informational"].items():
            if isinstance(ok, bool):
                diagnostics["informational"][f"level{rec['k']}_{name}"] = ok
    diagnostics["orbit_roundtrip_max_rel_logmag"] = max((r[0] for r in orbit_resid), default=0.0)
    return ConstructionTrace(
        delta=delta, levels=levels, z0=z0, orbit_checks=orbit_checks,
        predicted_dim=est.predicted, measured_dim_estimate=est.measured,
        beta=beta, N0_est=N0, log_m_final=log_m, checks=checks, diagnostics=diagnostics,
    )


def n0_from_beta(beta: float) -> int:
    """N_0 = floor(81 beta^2 (8 beta + 1)^2 / 16)."""
    return int(math.floor(81 * beta**2 * (8 * beta + 1) ** 2 / 16))


def _measure_beta(f: FunctionSpec, packed: PackedSet, points: list, n: int) -> float:
    """max ratio of |Lambda'(b^nu)| to |Lambda'(b)| over up to n packed candidates at the last level."""
    K = len(points)
    if K == 1:
        return 1.0
    cand = packed.parent
    chosen = _center_choice(packed)
    step = max(1, packed.m_r // n)
    order = [chosen] + [i for i in range(0, packed.m_r, step) if i != chosen][: n - 1]
    logs = []
    for i in order:
        u, th = float(packed.centers_u[i]), float(packed.centers_theta[i])
        lm = cand.log_r + math.log1p(u)
        z = None
        if math.isfinite(cand.r):
            z = cand.r * (1 + u) * cmath.exp(1j * th)
        cur = LogPoint(lm, th, z)
        total = 0.0  # log |(f^k)'(v)|
        try:
            for j in range(K - 1, 0, -1):
                w = _pullback(f, cur, points[j - 1].z)
                ld = 0.0 if _is_exp(f) else math.log(abs(f.log_derivative(w)))
                total += cur.log_mag + ld
                cur = LogPoint.from_complex(w)
        except DynlabError:
            continue
        logs.append(-total)
    if not logs:
        return 1.0
    ref = logs[0]
    spread = max(max(logs) - ref, ref - min(logs))
    return float(math.exp(spread))


@dataclass
class DimensionEstimate:
    measured: float
    predicted: float
    vacuous: bool
    log_m: float
    log_N0: float
    log_sigma: float
    warnings: list = field(default_factory=list)


def dimension_lower_bound_log(log_m: float, log_N0: float, log_sigma: float, delta: float) -> DimensionEstimate:
    predicted = 2 - 7 * delta
    warn = []
    vac = delta >= 2 / 7 - 1e-12
    if vac:
        warn.append("delta >= 2/7: predicted bound is vacuous")
    if -log_sigma <= 0:
        warn.append("sigma_k >= 1: estimate undefined at this depth")
        measured = math.nan
    else:
        measured = (log_m - log_N0) / (-log_sigma)
    return DimensionEstimate(measured, predicted, vac, log_m, log_N0, log_sigma, warn)


def dimension_lower_bound(trace: ConstructionTrace, m_k: int | None = None, N0_est: int | None = None, *,
                          log_m_k: float | None = None) -> DimensionEstimate:
    """log(m_k / N_0) / (-log sigma_k) at the trace's last level, with the predicted 2 - 7 delta."""
    if not trace.levels:
        raise ValueError("trace has no levels")
    if log_m_k is None:
        log_m_k = math.log(m_k) if m_k is not None else trace.log_m_final
    if N0_est is None:
        N0_est = trace.N0_est
    if N0_est < 1:
        raise ValueError("N0_est must be >= 1")
    return dimension_lower_bound_log(log_m_k, math.log(N0_est), trace.levels[-1]["log_sigma_k"], trace.delta)
