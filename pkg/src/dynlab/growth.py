"""Finite-scale verdicts on the asymptotic growth hypotheses.

Condition keys used in reports:

``loglog_growth``        liminf loglog M / loglog r = infinity
``char_growth``          liminf log T / loglog r = infinity
``ratio_below_one``      limsup log L / log M < 1
``ratio_tends_to_one``   limsup log L / log M = 1 (complement of the above)
``loglog_over_log``      liminf loglog M / log r > 0
``doubling``             log M(2r) >= d log M(r) for some d > 1
``ratio_gap_log``        (1 - log L / log M) log r -> infinity

Limits at infinity cannot be decided from finite data, so every verdict is a
trend test over the top decade of the scanned radii with a stated margin.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InsufficientData
from .function_model import FunctionSpec
from .modulus import RadiusProfile, radius_profile

HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"

# which conclusions each hypothesis unlocks (all give packing dimension 2 of I(f) n J(f))
RESULTS = {
    "loglog_growth": "main_theorem_if_no_multiply_connected_fatou_component",
    "ratio_below_one": "corollary_min_modulus_ratio",
    "doubling": "corollary_doubling",
    "ratio_gap_log": "corollary_ratio_gap",
}


def thread_cap() -> int:
    env = os.environ.get("DYNLAB_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def geometric_grid(r_min: float, r_max: float, points_per_decade: int) -> np.ndarray:
    decades = math.log10(r_max / r_min)
    n = int(round(points_per_decade * decades)) + 1
    return np.geomspace(r_min, r_max, n)


def scan_profiles(f: FunctionSpec, r_min: float, r_max: float, points_per_decade: int = 8, *,
                  resolution: int = 1024, rtol: float = 1e-8) -> list:
    """Radius profiles on a geometric grid; failing radii come back with ``error`` set."""
    if not 1 < r_min < r_max:
        raise ValueError("need 1 < r_min < r_max")
    if points_per_decade < 4:
        raise ValueError("points_per_decade must be >= 4")
    grid = geometric_grid(r_min, r_max, points_per_decade)

    def one(r):
        try:
            return radius_profile(f, float(r), resolution, rtol=rtol)
        except Exception as exc:  # recorded per row
            nan = float("nan")
            return RadiusProfile(float(r), nan, nan, nan, -1, nan, resolution, False,
                                 error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        return list(pool.map(one, grid))


@dataclass
class Thresholds:
    margin: float = 0.05
    top_decades: float = 1.0


@dataclass
class ConditionEntry:
    verdict: str
    witness: list  # (r, value)
    summary: dict = field(default_factory=dict)


@dataclass
class GrowthReport:
    conditions: dict
    applicable_results: list
    flags: list
    thresholds: dict
    metadata: dict

    def to_json(self) -> dict:
        return {
            "conditions": {k: asdict(v) for k, v in self.conditions.items()},
            "applicable_results": self.applicable_results,
            "flags": self.flags,
            "thresholds": self.thresholds,
            "metadata": self.metadata,
        }

    def exit_code(self) -> int:
        """0 if some result applies, 2 if anything relevant is inconclusive, 3 if all fail."""
        if self.applicable_results:
            return 0
        keys = ("loglog_growth", "ratio_below_one", "doubling", "ratio_gap_log")
        if any(self.conditions[k].verdict == INCONCLUSIVE for k in keys):
            return 2
        return 3


def _top(rs: np.ndarray, vals: np.ndarray, decades: float):
    lo = rs[-1] / 10**decades
    sel = (rs >= lo * (1 - 1e-12)) & np.isfinite(vals)
    return rs[sel], vals[sel]


def _trend_verdict(rs, vals, margin, decades):
    """increase > margin: holds; decrease > margin: fails."""
    r, v = _top(rs, vals, decades)
    if len(v) < 2:
        return INCONCLUSIVE, {}
    change = float(v[-1] - v[0])
    info = {"first": float(v[0]), "last": float(v[-1]), "change": change}
    if change > margin:
        return HOLDS, info
    if change < -margin:
        return FAILS, info
    return INCONCLUSIVE, info


def _witness(rs, vals):
    return [(float(r), float(v)) for r, v in zip(rs, vals)]


def _interp_logM(logr: np.ndarray, logM: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log M at log r = x; interpolates log log M linearly in log r when log M > 0."""
    if np.all(logM > 0):
        return np.exp(np.interp(x, logr, np.log(logM), left=np.nan, right=np.nan))
    return np.interp(x, logr, logM, left=np.nan, right=np.nan)


def classify_conditions(profiles, thresholds: Thresholds | None = None) -> GrowthReport:
    th = thresholds or Thresholds()
    good = [p for p in profiles if p.ok and math.isfinite(p.log_M)]
    if len(good) < 8:
        raise InsufficientData(f"need >= 8 valid profiles, got {len(good)}")
    rs = np.array([p.r for p in good])
    if math.log10(rs[-1] / rs[0]) < 2 - 1e-9:
        raise InsufficientData("profiles must span at least two decades")
    logM = np.array([p.log_M for p in good])
    logL = np.array([p.log_L for p in good])
    T = np.array([p.T for p in good])
    m, dec = th.margin, th.top_decades
    conds: dict = {}

    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(logM > 0, np.log(logM) / np.log(np.log(rs)), np.nan)
        q2b = np.where(T > 0, np.log(T) / np.log(np.log(rs)), np.nan)
        ratio = logL / logM
        yy = np.where(logM > 0, np.log(logM) / np.log(rs), np.nan)
        gap = (1 - ratio) * np.log(rs)

    v, info = _trend_verdict(rs, q, m, dec)
    conds["loglog_growth"] = ConditionEntry(v, _witness(rs, q), info)
    v, info = _trend_verdict(rs, q2b, m, dec)
    conds["char_growth"] = ConditionEntry(v, _witness(rs, q2b), info)

    # ratio log L / log M: signed; the limsup < 1 test only needs the top decade maximum
    _, rt = _top(rs, ratio, dec)
    if len(rt) == 0:
        v1 = INCONCLUSIVE
        info = {}
    else:
        info = {"max": float(np.max(rt)), "min": float(np.min(rt))}
        if info["max"] <= 1 - m:
            v1 = HOLDS
        elif info["min"] >= 1 - m:
            v1 = FAILS
        else:
            v1 = INCONCLUSIVE
    conds["ratio_below_one"] = ConditionEntry(v1, _witness(rs, ratio), info)
    comp = {HOLDS: FAILS, FAILS: HOLDS, INCONCLUSIVE: INCONCLUSIVE}[v1]
    conds["ratio_tends_to_one"] = ConditionEntry(comp, _witness(rs, ratio), dict(info))

    _, yt = _top(rs, yy, dec)
    if len(yt) >= 2 and np.min(yt) >= m and yt[-1] - yt[0] >= -m:
        vyy = HOLDS
    elif len(yt) >= 2 and yt[-1] - yt[0] < -m:
        vyy = FAILS
    else:
        vyy = INCONCLUSIVE
    info = {"min": float(np.min(yt)), "change": float(yt[-1] - yt[0])} if len(yt) else {}
    conds["loglog_over_log"] = ConditionEntry(vyy, _witness(rs, yy), info)

    # doubling ratios d(r) = log M(2r)/log M(r) over grid radii whose double is covered
    lr = np.log(rs)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = _interp_logM(lr, logM, lr + math.log(2)) / logM
    dr, dv = _top(rs, d, dec)
    if len(dv) >= 2:
        best_d = float(np.min(dv))
        decay = (dv[-1] - 1) / (dv[0] - 1) if dv[0] != 1 else 0.0
        info = {"best_d": best_d, "first": float(dv[0]), "last": float(dv[-1]), "excess_ratio": float(decay)}
        if best_d >= 1 + m and decay >= 1 - m:
            vd = HOLDS
        elif float(np.max(dv)) < 1 + m or decay < 0.5:
            vd = FAILS
        else:
            vd = INCONCLUSIVE
    else:
        vd, info = INCONCLUSIVE, {}
    conds["doubling"] = ConditionEntry(vd, _witness(rs, d), info)

    v, info = _trend_verdict(rs, gap, m, dec)
    if v == HOLDS and info["last"] <= 1.0:
        v = INCONCLUSIVE
    conds["ratio_gap_log"] = ConditionEntry(v, _witness(rs, gap), info)

    flags = []
    _, slope = _top(rs, logM / np.log(rs), dec)
    if conds["loglog_growth"].verdict == FAILS and len(slope) >= 2 and \
            abs(slope[-1] - slope[0]) <= m * max(1.0, abs(slope[-1])):
        flags.append("non_transcendental_growth")
    if any(not p.ok for p in profiles):
        flags.append("failed_rows")

    applicable = [RESULTS[k] for k in ("loglog_growth", "ratio_below_one", "doubling", "ratio_gap_log")
                  if conds[k].verdict == HOLDS]
    return GrowthReport(
        conditions=conds,
        applicable_results=applicable,
        flags=flags,
        thresholds={"margin": m, "top_decades": dec},
        metadata={
            "policy": "trend over the top decade; thresholds are artifact policy, not asymptotic criteria",
            "r_range": [float(rs[0]), float(rs[-1])],
            "n_profiles": len(good),
        },
    )
