"""Command-line entry point: ``dynlab {profile,classify,exclusion,construct,dimension,render,pipeline}``.

Exit codes: 0 success, 2 inconclusive classification, 3 hypothesis failure,
4 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import fractal, growth, logderiv, proof_engine
from .errors import ConfigError, DegenerateT, DynlabError
from .function_model import LOG_FLOAT_MAX, FunctionSpec, parse_complex
from .modulus import characteristic_T
from .proof_engine import _jsonable

EXIT_OK, EXIT_INCONCLUSIVE, EXIT_FAILS, EXIT_ERROR = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# config


def parse_function(text: str) -> FunctionSpec:
    """JSON document, ``@path`` to one, or shorthand ``exp[:lam]``, ``sin``, ``cos``, ``poly:c0,c1,...``."""
    text = text.strip()
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    if text.startswith("{"):
        return FunctionSpec.from_json(text)
    name, _, arg = text.partition(":")
    name = name.lower()
    if name in ("exp", "scaled_exp"):
        return FunctionSpec.scaled_exp(parse_complex(arg) if arg else 1.0)
    if name == "sin":
        return FunctionSpec.sin()
    if name == "cos":
        return FunctionSpec.cos()
    if name in ("poly", "polynomial"):
        return FunctionSpec.polynomial([parse_complex(c) for c in arg.split(",")])
    raise ConfigError(f"unknown function {text!r}")


@dataclass
class PipelineConfig:
    function: dict = field(default_factory=lambda: {"kind": "scaled_exp", "params": {"lambda": 0.25}})
    radius_grid: list = field(default_factory=lambda: [20.0, 20000.0, 8])
    delta: float = 0.25
    depth: int = 3
    r0: float = 50.0
    grid_density: int = 200
    windows: list = field(default_factory=lambda: [[0.0, -2.0, 4.0, 2.0]])
    epsilons: list = field(default_factory=lambda: [2.0**-j for j in range(2, 7)])
    max_iter: int = 100
    seed: int = 0
    output_dir: str = "dynlab_out"

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.spec()
        except Exception as exc:
            raise ConfigError(f"bad function: {exc}") from exc
        if len(self.radius_grid) != 3:
            raise ConfigError("radius_grid must be [r_min, r_max, points_per_decade]")
        r_min, r_max, ppd = self.radius_grid
        if not (0 < r_min < r_max) or int(ppd) < 4:
            raise ConfigError("need 0 < r_min < r_max and points_per_decade >= 4")
        if not 0 < self.delta < 0.5:
            raise ConfigError("delta must lie in (0, 1/2)")
        if self.depth < 0 or self.grid_density < 1 or self.max_iter < 1:
            raise ConfigError("depth, grid_density and max_iter out of range")
        if not self.windows:
            raise ConfigError("need at least one window")
        for w in self.windows:
            if len(w) != 4 or not (w[2] > w[0] and w[3] > w[1]):
                raise ConfigError(f"bad window {w}")
        eps = sorted(self.epsilons)
        if len(eps) < 4:
            raise ConfigError("need >= 4 epsilons")
        for a, b in zip(eps, eps[1:]):
            k = math.log2(b / a)
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                raise ConfigError("epsilons must be dyadically nested")

    def spec(self) -> FunctionSpec:
        return FunctionSpec.from_json(self.function)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# output helpers


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _num(x: float) -> str:
    return repr(float(x))


def profiles_csv(profiles) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "M_or_logM", "L_or_logL", "T", "n0", "N0", "flags"])
    for p in profiles:
        if not p.ok:
            w.writerow([_num(p.r), "", "", "", "", "", f"error:{p.error}"])
            continue
        flags = []
        if p.log_M > LOG_FLOAT_MAX:
            M = p.log_M
            flags.append("logM")
        else:
            M = math.exp(p.log_M)
        if p.log_L > LOG_FLOAT_MAX:
            L = p.log_L
            flags.append("logL")
        else:
            L = math.exp(p.log_L)
        w.writerow([_num(p.r), _num(M), _num(L), _num(p.T), p.n0, _num(p.N0), ";".join(flags)])
    return buf.getvalue()


def _error_doc(stage: str, exc: Exception) -> dict:
    return {"stage": stage, "type": type(exc).__name__, "message": str(exc)}


def _write(out_dir: Path, name: str, data) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / name
    if isinstance(data, bytes):
        p.write_bytes(data)
    else:
        p.write_text(data)
    return p


def require_T_at(f: FunctionSpec, r: float) -> float:
    T = characteristic_T(f, r)
    if not T > math.e:
        raise DegenerateT(f"T({r:g}) = {T:.6g} <= e")
    return T


# ---------------------------------------------------------------------------
# stages


def stage_profile(f: FunctionSpec, r_min: float, r_max: float, ppd: int):
    require_T_at(f, r_min)
    return growth.scan_profiles(f, r_min, r_max, int(ppd))


def stage_classify(profiles) -> growth.GrowthReport:
    return growth.classify_conditions(profiles)


def stage_construct(f: FunctionSpec, r0: float, delta: float, depth: int, grid_density: int, seed: int) -> dict:
    trace = proof_engine.build_cascade(f, r0, delta, depth, grid_density=grid_density, seed=seed)
    est = proof_engine.dimension_lower_bound(trace)
    doc = trace.to_json()
    doc["all_checks_ok"] = trace.all_checks_ok
    doc["dimension_estimate"] = _jsonable(asdict(est))
    return doc


def stage_dimension(f: FunctionSpec, windows, epsilons, max_iter: int, seed: int):
    eps = sorted(float(e) for e in epsilons)
    octaves = round(math.log2(eps[-1] / eps[0]))
    keep = {round(math.log2(e / eps[0])) for e in eps}
    curves, errors, first_grid = [], [], None
    for w in windows:
        try:
            grid = fractal.julia_proxy_grid(f, w, eps[0], max_iter=max_iter, seed=seed)
            pyr = [pm for j, pm in enumerate(fractal.dyadic_pyramid(grid.boundary, eps[0], octaves)) if j in keep]
            if not pyr[-1][1].any():
                raise fractal.EmptyWindow(f"window {tuple(w)} has no boundary cells")
            curve = fractal.box_count_fit(pyr, target="EscapingBoundary", window=tuple(w))
        except DynlabError as exc:
            errors.append(_error_doc("dimension", exc) | {"window": list(w)})
            continue
        curves.append(curve)
        if first_grid is None:
            first_grid = grid
    doc = {"curves": [c.to_json() for c in curves], "errors": errors}
    if len(curves) >= 2:
        s = [c.slope for c in curves]
        doc["max_pairwise_slope_difference"] = max(s) - min(s)
    return doc, first_grid


def run_pipeline(cfg: PipelineConfig, out_dir: Path | None = None) -> int:
    """Run every stage, write the five artifacts and return the exit status."""
    out = Path(out_dir or cfg.output_dir)
    f = cfg.spec()
    h = cfg.hash()
    meta = {"config_hash": h, "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}}
    errors = []

    profiles = None
    try:
        profiles = stage_profile(f, *cfg.radius_grid)
    except Exception as exc:
        errors.append(_error_doc("profile", exc))
    _write(out, "profiles.csv", profiles_csv(profiles or []))

    rep: dict = dict(meta)
    if profiles is not None:
        try:
            gr = stage_classify(profiles)
            rep.update(gr.to_json())
            rep["exit_code"] = gr.exit_code()
        except Exception as exc:
            errors.append(_error_doc("classify", exc))
    else:
        errors.append({"stage": "classify", "type": "Skipped", "message": "profile stage failed"})
    rep["errors"] = [e for e in errors if e["stage"] in ("profile", "classify")]
    _write(out, "growth_report.json", dumps(rep))

    con: dict = dict(meta)
    try:
        con.update(stage_construct(f, cfg.r0, cfg.delta, cfg.depth, cfg.grid_density, cfg.seed))
    except Exception as exc:
        errors.append(_error_doc("construct", exc))
        con["error"] = errors[-1]
    _write(out, "construction_trace.json", dumps(con))

    grid = None
    box: dict = dict(meta)
    try:
        doc, grid = stage_dimension(f, cfg.windows, cfg.epsilons, cfg.max_iter, cfg.seed)
        box.update(doc)
        errors.extend(doc["errors"])
    except Exception as exc:
        errors.append(_error_doc("dimension", exc))
        box["errors"] = [errors[-1]]
    _write(out, "boxcount.json", dumps(box))

    try:
        if grid is None:
            w = cfg.windows[0]
            data = fractal.render_escape(f, w, (round((w[2] - w[0]) / min(cfg.epsilons)),
                                                round((w[3] - w[1]) / min(cfg.epsilons))), cfg.max_iter)
        else:
            data = fractal.render_pgm(grid)
        _write(out, "render.pgm", data)
    except Exception as exc:
        errors.append(_error_doc("render", exc))

    for e in errors:
        print(f"stage {e['stage']}: {e['type']}: {e['message']}", file=sys.stderr)
    return EXIT_ERROR if errors else EXIT_OK


# ---------------------------------------------------------------------------
# argparse


def _window(text: str) -> list:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("window must be x0,y0,x1,y1")
    return parts


def read_zeros_csv(path: str) -> list:
    """Rows ``re, im[, multiplicity]``; a header row is skipped."""
    zeros = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                re_, im = float(row[0]), float(row[1])
            except ValueError:
                continue
            mult = int(row[2]) if len(row) > 2 and row[2].strip() else 1
            zeros.extend([complex(re_, im)] * mult)
    return zeros


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynlab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--function", default=None, help="JSON, @file.json or shorthand (exp:0.25, sin, poly:-1,0,0,1)")
    common.add_argument("--config", help="JSON config file; its keys override defaults")
    common.add_argument("--output-dir", default=None)
    common.add_argument("--seed", type=int, default=None)
    sub = ap.add_subparsers(dest="command", required=True)

    for name in ("profile", "classify"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--r-min", type=float, default=None)
        p.add_argument("--r-max", type=float, default=None)
        p.add_argument("--points-per-decade", type=int, default=None)

    p = sub.add_parser("exclusion", parents=[common])
    p.add_argument("--zeros", required=True, help="CSV of re, im, multiplicity")
    p.add_argument("--H", type=float, required=True)
    p.add_argument("--mode", default="QuadraticSum")
    p.add_argument("--verify-samples", type=int, default=10_000)

    p = sub.add_parser("construct", parents=[common])
    p.add_argument("--r0", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--grid-density", type=int, default=None)

    for name in ("dimension", "render"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--window", type=_window, default=None)
        p.add_argument("--eps", type=float, default=None, help="finest grid spacing")
        p.add_argument("--eps-octaves", type=int, default=None)
        p.add_argument("--max-iter", type=int, default=None)
        if name == "render":
            p.add_argument("--resolution", type=int, default=None, help="pixels per axis")

    sub.add_parser("pipeline", parents=[common])
    return ap


def load_config(args) -> PipelineConfig:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    if args.function is not None:
        doc["function"] = parse_function(args.function).to_json()
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.output_dir is not None:
        doc["output_dir"] = args.output_dir
    rg = list(doc.get("radius_grid", PipelineConfig().radius_grid))
    for i, key in enumerate(("r_min", "r_max", "points_per_decade")):
        v = getattr(args, key, None)
        if v is not None:
            rg[i] = v
    doc["radius_grid"] = rg
    for key in ("r0", "delta", "depth", "grid_density", "max_iter"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    if getattr(args, "window", None) is not None:
        doc["windows"] = [args.window]
    eps, octv = getattr(args, "eps", None), getattr(args, "eps_octaves", None)
    if eps is not None or octv is not None:
        base = eps if eps is not None else min(doc.get("epsilons", PipelineConfig().epsilons))
        n = octv if octv is not None else 4
        doc["epsilons"] = [base * 2**j for j in range(n + 1)]
    return PipelineConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        out = Path(cfg.output_dir)
        f = cfg.spec()
        meta = {"config_hash": cfg.hash()}
        cmd = args.command
        if cmd == "pipeline":
            return run_pipeline(cfg, out)
        if cmd in ("profile", "classify"):
            profiles = stage_profile(f, *cfg.radius_grid)
            if cmd == "profile":
                _write(out, "profiles.csv", profiles_csv(profiles))
                return EXIT_OK
            rep = stage_classify(profiles)
            _write(out, "growth_report.json", dumps(meta | rep.to_json()))
            return rep.exit_code()
        if cmd == "exclusion":
            zeros = read_zeros_csv(args.zeros)
            ds = logderiv.fuchs_macintyre_disks(zeros, args.H, args.mode, verify_samples=args.verify_samples,
                                                seed=cfg.seed)
            _write(out, "exclusion_disks.json", dumps(meta | ds.to_json()))
            return EXIT_OK
        if cmd == "construct":
            doc = stage_construct(f, cfg.r0, cfg.delta, cfg.depth, cfg.grid_density, cfg.seed)
            _write(out, "construction_trace.json", dumps(meta | doc))
            return EXIT_OK
        if cmd == "dimension":
            doc, _ = stage_dimension(f, cfg.windows, cfg.epsilons, cfg.max_iter, cfg.seed)
            _write(out, "boxcount.json", dumps(meta | doc))
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["window", "epsilon", "N"])
            for c in doc["curves"]:
                for e, n in c["points"]:
                    w.writerow([" ".join(map(repr, c["window"])), repr(e), n])
            _write(out, "boxcount.csv", buf.getvalue())
            return EXIT_ERROR if doc["errors"] else EXIT_OK
        if cmd == "render":
            w = cfg.windows[0]
            if args.resolution is not None:
                res = args.resolution
            else:
                e = min(cfg.epsilons)
                res = (round((w[2] - w[0]) / e), round((w[3] - w[1]) / e))
            _write(out, "render.pgm", fractal.render_escape(f, w, res, cfg.max_iter))
            return EXIT_OK
    except (DynlabError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
