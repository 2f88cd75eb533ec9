"""Escape-time grids, the boundary proxy for I(f) n J(f), and box-counting fits.

Orbits are iterated in log-polar form (log|z|, arg z), so exponential orbits
can be followed past the double range of |z|; log|z| = +inf counts as escape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateFit, EmptyWindow, ResolutionCap
from .function_model import LOG_FLOAT_MAX, FunctionSpec, wrap_angle

UNDECIDED, ESCAPING, BOUNDED = 0, 1, 2
MAX_CELLS_PER_AXIS = 8192


@dataclass(frozen=True)
class EscapePolicy:
    threshold: float = 100.0  # on log|z|
    confirm: int = 3
    cycle_tol: float = 1e-9
    max_period: int = 8
    trap: tuple | None = None  # (center, radius)


def _step(f: FunctionSpec, L: np.ndarray, th: np.ndarray):
    """One application of f in log-polar form."""
    with np.errstate(over="ignore", invalid="ignore"):
        if f.kind == "scaled_exp":
            c = f.exp_log_coeff
            r = np.exp(L)
            x = r * np.cos(th)
            y = r * np.sin(th)
            x = np.where(np.isnan(x), 0.0, x)
            y = np.where(np.isfinite(y), y, 0.0)
            return c.real + x, wrap_angle(c.imag + y)
        if f.kind == "polynomial" and f.shift == 0:
            return f.evaluate_log_array(L, th)
        # no extended range: orbits past the double range are treated as escaping
        out_L = np.full(L.shape, np.inf)
        out_t = np.zeros(L.shape)
        ok = L <= LOG_FLOAT_MAX
        if np.any(ok):
            try:
                a, b = f.evaluate_log_array(L[ok], th[ok])
                out_L[ok], out_t[ok] = a, b
            except Exception:
                out_L[ok] = np.nan
        return out_L, out_t


def classify_points(f: FunctionSpec, z, max_iter: int = 100, policy: EscapePolicy | None = None):
    """Vectorized escape classification; returns (status, first_passage) arrays.

    first_passage is the iteration at which log|f^n| first exceeded the
    threshold in the confirming run (-1 when not escaping).
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    pol = policy or EscapePolicy()
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    zf = z.ravel()
    n = zf.size
    status = np.zeros(n, dtype=np.int8)
    first = np.full(n, -1, dtype=np.int32)
    with np.errstate(divide="ignore"):
        L = np.log(np.abs(zf))
    th = np.angle(zf)
    idx = np.arange(n)
    up = np.zeros(n, dtype=np.int16)
    start = np.full(n, -1, dtype=np.int32)
    trap_run = np.zeros(n, dtype=np.int16)
    hist = np.full((pol.max_period, n), np.nan + 0j)
    for it in range(1, max_iter + 1):
        if idx.size == 0:
            break
        L_old = L
        L, th = _step(f, L, th)
        bad = np.isnan(L)
        # escape bookkeeping
        above = L > pol.threshold
        inc = above & (L > L_old)
        start = np.where(above & (start < 0), it, np.where(above, start, -1))
        up = np.where(inc, up + 1, 0)
        esc = (inc & (up >= pol.confirm)) | (L == np.inf)
        # cycle detection on finite values
        with np.errstate(over="ignore", invalid="ignore"):
            zc = np.where(L < 700, np.exp(L) * np.exp(1j * th), np.nan)
        cyc = np.zeros(idx.size, dtype=bool)
        for p in range(1, min(pol.max_period, it - 1) + 1):
            prev = hist[(it - p) % pol.max_period]
            with np.errstate(invalid="ignore"):
                cyc |= np.abs(zc - prev) < pol.cycle_tol
        hist[it % pol.max_period] = zc
        bnd = cyc
        if pol.trap is not None:
            c0, rad = pol.trap
            inside = np.abs(zc - c0) < rad
            trap_run = np.where(inside, trap_run + 1, 0)
            bnd = bnd | (trap_run >= pol.confirm)
        esc &= ~bad
        bnd &= ~esc & ~bad
        if np.any(esc):
            gi = idx[esc]
            status[gi] = ESCAPING
            first[gi] = np.where(start[esc] > 0, start[esc], it)
        if np.any(bnd):
            status[idx[bnd]] = BOUNDED
        keep = ~(esc | bnd | bad)
        idx, L, th, up, start, trap_run = idx[keep], L[keep], th[keep], up[keep], start[keep], trap_run[keep]
        hist = hist[:, keep]
    return status.reshape(shape), first.reshape(shape)


@dataclass
class EscapeClass:
    status: str
    first_passage: int | None = None


def escape_classify(f: FunctionSpec, z: complex, max_iter: int = 100, policy: EscapePolicy | None = None) -> EscapeClass:
    s, fp = classify_points(f, np.array([complex(z)]), max_iter, policy)
    name = {UNDECIDED: "Undecided", ESCAPING: "Escaping", BOUNDED: "Bounded"}[int(s[0])]
    return EscapeClass(name, int(fp[0]) if s[0] == ESCAPING else None)


@dataclass
class EscapeGrid:
    window: tuple
    epsilon: float
    status: np.ndarray  # (ny, nx); row 0 is the bottom row y0
    first_passage: np.ndarray
    max_iter: int
    escape_log_threshold: float
    boundary: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.status.shape


def grid_shape(window, epsilon: float) -> tuple:
    x0, y0, x1, y1 = window
    if not (x1 > x0 and y1 > y0 and epsilon > 0):
        raise ValueError("bad window or epsilon")
    nx_f, ny_f = (x1 - x0) / epsilon, (y1 - y0) / epsilon
    nx, ny = math.ceil(nx_f - 1e-9), math.ceil(ny_f - 1e-9)
    if abs(nx - nx_f) > 1e-9 * max(1.0, nx_f) or abs(ny - ny_f) > 1e-9 * max(1.0, ny_f):
        raise ValueError("epsilon must divide the window sides")
    if nx > MAX_CELLS_PER_AXIS or ny > MAX_CELLS_PER_AXIS:
        raise ResolutionCap(f"{nx} x {ny} cells exceed the {MAX_CELLS_PER_AXIS} per-axis cap")
    return ny, nx


def julia_proxy_grid(f: FunctionSpec, window, epsilon: float, samples_per_cell: int = 1,
                     max_iter: int = 100, policy: EscapePolicy | None = None, *, seed: int = 0,
                     neighborhood: int = 8) -> EscapeGrid:
    """Escape grid plus the mask of escaping cells touching non-escaping samples.

    ``neighborhood`` is 8 (king moves) or 4 (edge neighbors); a cell with mixed
    samples is always flagged.
    """
    if neighborhood not in (4, 8):
        raise ValueError("neighborhood must be 4 or 8")
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    pol = policy or EscapePolicy()
    ny, nx = grid_shape(window, epsilon)
    x0, y0, _, _ = window
    xs = x0 + (np.arange(nx) + 0.5) * epsilon
    ys = y0 + (np.arange(ny) + 0.5) * epsilon
    centers = xs[None, :] + 1j * ys[:, None]
    status, first = classify_points(f, centers, max_iter, pol)
    has_esc = status == ESCAPING
    has_non = status != ESCAPING  # Undecided counts as non-escaping
    if samples_per_cell > 1:
        rng = np.random.default_rng(seed)
        for _ in range(samples_per_cell - 1):
            jit = rng.uniform(-0.5, 0.5, (ny, nx)) + 1j * rng.uniform(-0.5, 0.5, (ny, nx))
            s, _ = classify_points(f, centers + epsilon * jit, max_iter, pol)
            has_esc |= s == ESCAPING
            has_non |= s != ESCAPING
    near_non = has_non.copy()
    pad = np.pad(has_non, 1, constant_values=False)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if neighborhood == 4 and dx and dy:
                continue
            near_non |= pad[1 + dy:1 + dy + ny, 1 + dx:1 + dx + nx]
    boundary = has_esc & near_non
    return EscapeGrid(tuple(window), float(epsilon), status, first, int(max_iter), pol.threshold, boundary)


# ---------------------------------------------------------------------------
# box counting


@dataclass
class BoxCountCurve:
    window: tuple | None
    target: str
    points: list  # (epsilon, N)
    slope: float
    slope_stderr: float
    intercept: float
    fit_range: tuple
    local_slopes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"window": list(self.window) if self.window else None, "target": self.target,
                "points": [[e, n] for e, n in self.points], "slope": self.slope,
                "slope_stderr": self.slope_stderr, "intercept": self.intercept,
                "fit_range": list(self.fit_range), "local_slopes": self.local_slopes,
                "fit_policy": "least squares of log N on log(1/eps); coarsest octave excluded by default"}


def dyadic_pyramid(mask: np.ndarray, epsilon: float, octaves: int) -> list:
    """[(eps * 2^j, OR-pooled mask)] for j = 0..octaves; mask sides must divide by 2^octaves."""
    m = np.asarray(mask, dtype=bool)
    ny, nx = m.shape
    if ny % (1 << octaves) or nx % (1 << octaves):
        raise ValueError(f"mask shape {m.shape} is not divisible by 2^{octaves}")
    out = [(epsilon, m)]
    for j in range(1, octaves + 1):
        h, w = m.shape
        m = m.reshape(h // 2, 2, w // 2, 2).any(axis=(1, 3))
        out.append((epsilon * 2**j, m))
    return out


def box_count_fit(masks, *, target: str = "CustomMask", window=None, drop_coarsest: int = 1) -> BoxCountCurve:
    """Least-squares slope of log N(eps) against log(1/eps)."""
    pts = sorted(((float(e), int(np.count_nonzero(m))) for e, m in masks), key=lambda t: t[0])
    eps = np.array([p[0] for p in pts])
    if len(set(eps)) < 4:
        raise ValueError("need >= 4 distinct epsilon values")
    if eps[-1] / eps[0] < 4 - 1e-9:
        raise ValueError("epsilon values must span >= 2 octaves")
    ratios = np.log2(eps[1:] / eps[:-1])
    if np.any(np.abs(ratios - np.round(ratios)) > 1e-9) or np.any(np.round(ratios) < 1):
        raise ValueError("epsilon values must be dyadically nested")
    N = np.array([p[1] for p in pts], dtype=float)
    if np.any(N == 0):
        raise DegenerateFit("N(eps) = 0 at some scale")
    keep = len(pts) - drop_coarsest
    if keep < 3:
        keep = len(pts)
    x = np.log(1 / eps[:keep])
    y = np.log(N[:keep])
    fit = stats.linregress(x, y)
    local = [float((math.log(N[i]) - math.log(N[i + 1])) / math.log(eps[i + 1] / eps[i]))
             for i in range(len(pts) - 1)]
    return BoxCountCurve(window, target, pts, float(fit.slope), float(fit.stderr), float(fit.intercept),
                         (float(eps[0]), float(eps[keep - 1])), local)


def boundary_curve(f: FunctionSpec, window, epsilon: float, octaves: int = 5, *, max_iter: int = 100,
                   samples_per_cell: int = 1, policy: EscapePolicy | None = None, seed: int = 0,
                   neighborhood: int = 8):
    """Proxy grid at the finest epsilon, pooled dyadically and fitted."""
    grid = julia_proxy_grid(f, window, epsilon, samples_per_cell, max_iter, policy, seed=seed,
                            neighborhood=neighborhood)
    pyr = dyadic_pyramid(grid.boundary, epsilon, octaves)
    if not pyr[-1][1].any():
        raise EmptyWindow(f"window {tuple(window)} has no boundary cells")
    return grid, box_count_fit(pyr, target="EscapingBoundary", window=tuple(window))


@dataclass
class WindowReport:
    curves: list
    max_pairwise_difference: float
    errors: dict


def window_independence(f: FunctionSpec, windows, epsilon: float, octaves: int = 5, *,
                        max_iter: int = 100, strict: bool = True, **kw) -> WindowReport:
    """Fit each window separately and report the largest slope difference."""
    if len(windows) < 2:
        raise ValueError("need >= 2 windows")
    curves, errors = [], {}
    for w in windows:
        try:
            curves.append(boundary_curve(f, w, epsilon, octaves, max_iter=max_iter, **kw)[1])
        except EmptyWindow as exc:
            if strict:
                raise
            errors[str(tuple(w))] = str(exc)
    s = [c.slope for c in curves]
    diff = float(max(s) - min(s)) if len(s) >= 2 else float("nan")
    return WindowReport(curves, diff, errors)


# ---------------------------------------------------------------------------
# reference sets


def filled_square_mask(epsilon: float) -> np.ndarray:
    n = round(1 / epsilon)
    return np.ones((n, n), dtype=bool)


def circle_mask(epsilon: float, window=(-1.25, -1.25, 1.25, 1.25), radius: float = 1.0) -> np.ndarray:
    """Cells of the grid whose closed square meets the circle |z| = radius."""
    ny, nx = grid_shape(window, epsilon)
    x0, y0, _, _ = window
    xe = x0 + np.arange(nx + 1) * epsilon
    ye = y0 + np.arange(ny + 1) * epsilon
    xl, xh = xe[:-1][None, :], xe[1:][None, :]
    yl, yh = ye[:-1][:, None], ye[1:][:, None]
    dx_min = np.where((xl <= 0) & (xh >= 0), 0.0, np.minimum(np.abs(xl), np.abs(xh)))
    dy_min = np.where((yl <= 0) & (yh >= 0), 0.0, np.minimum(np.abs(yl), np.abs(yh)))
    dmin = np.hypot(dx_min, dy_min)
    dmax = np.hypot(np.maximum(np.abs(xl), np.abs(xh)), np.maximum(np.abs(yl), np.abs(yh)))
    return (dmin <= radius) & (dmax >= radius)


def cantor_hits(depth: int, level: int) -> np.ndarray:
    """Dyadic intervals of size 2^-level in [0,1) meeting the depth-``depth`` middle-thirds set."""
    starts = np.array([0.0])
    length = 1.0
    for _ in range(depth):
        length /= 3
        starts = np.concatenate([starts, starts + 2 * length])
    n = 1 << level
    lo = np.floor(starts * n).astype(int)
    hi = np.minimum(np.floor((starts + length) * n).astype(int), n - 1)
    hit = np.zeros(n, dtype=bool)
    for a, b in zip(lo, hi):
        hit[a:b + 1] = True
    return hit


def cantor_dust_masks(depth: int = 8, levels=range(3, 9)) -> list:
    """[(2^-j, C x C hit mask)] built exactly from interval counting."""
    out = []
    for j in levels:
        h = cantor_hits(depth, j)
        out.append((2.0**-j, np.outer(h, h)))
    return out


# ---------------------------------------------------------------------------
# rendering


def render_pgm(grid: EscapeGrid, gamma: float = 0.5) -> bytes:
    """8-bit binary PGM; row 0 is the top of the window; Bounded = 0, Undecided = 16."""
    ny, nx = grid.shape
    if nx > MAX_CELLS_PER_AXIS or ny > MAX_CELLS_PER_AXIS:
        raise ResolutionCap("image too large")
    img = np.full((ny, nx), 16, dtype=np.uint8)
    img[grid.status == BOUNDED] = 0
    esc = grid.status == ESCAPING
    if np.any(esc):
        t = 1.0 - (grid.first_passage[esc].astype(float) - 1) / max(grid.max_iter, 1)
        img[esc] = (32 + np.round(223 * np.clip(t, 0, 1) ** gamma)).astype(np.uint8)
    img = img[::-1]
    header = f"P5\n{nx} {ny}\n255\n".encode("ascii")
    return header + img.tobytes()


def render_escape(f: FunctionSpec, window, resolution, max_iter: int = 100,
                  policy: EscapePolicy | None = None, gamma: float = 0.5) -> bytes:
    """PGM of first-passage times on an nx x ny pixel raster (``resolution`` int or (nx, ny))."""
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("resolution must be positive")
    if nx > MAX_CELLS_PER_AXIS or ny > MAX_CELLS_PER_AXIS:
        raise ResolutionCap(f"{nx} x {ny} exceeds {MAX_CELLS_PER_AXIS}^2")
    x0, y0, x1, y1 = window
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    xs = x0 + (np.arange(nx) + 0.5) * hx
    ys = y0 + (np.arange(ny) + 0.5) * hy
    status, first = classify_points(f, xs[None, :] + 1j * ys[:, None], max_iter, policy)
    pol = policy or EscapePolicy()
    grid = EscapeGrid(tuple(window), float(hx), status, first, int(max_iter), pol.threshold)
    return render_pgm(grid, gamma)
