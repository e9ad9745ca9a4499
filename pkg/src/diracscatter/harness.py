"""Phantoms, experiment presets, the end-to-end run and its output files."""

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import antichiral, chiral, inverse
from .field import Potential, l2_norm, relative_error, write_grid_csv

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- phantoms

def _bounds(grid):
    lo_x, lo_y = grid.x0 - 0.5 * grid.dx, grid.y0 - 0.5 * grid.dy
    return lo_x, lo_x + grid.nx * grid.dx, lo_y, lo_y + grid.ny * grid.dy


def _check_inside(grid, point, margin=0.0):
    x0, x1, y0, y1 = _bounds(grid)
    px, py = point
    if not (x0 <= px - margin and px + margin <= x1 and y0 <= py - margin and py + margin <= y1):
        raise ValueError(f"phantom geometry {point} (margin {margin}) lies outside the domain")


def phantom_disk(grid, center, radius, contrast):
    """contrast on the closed disk, zero elsewhere, sampled at grid nodes."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    _check_inside(grid, center, radius)
    x, y = grid.mesh()
    inside = (x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius ** 2
    return Potential(grid, np.where(inside, float(contrast), 0.0))


def phantom_gaussians(grid, centers, denominators, contrast):
    """contrast * sum_i exp(-|x - c_i|^2 / d_i)."""
    if len(centers) != len(denominators):
        raise ValueError("one denominator per centre")
    x, y = grid.mesh()
    v = np.zeros(grid.shape)
    for c, d in zip(centers, denominators):
        if d <= 0:
            raise ValueError("Gaussian denominators must be positive")
        _check_inside(grid, c)
        v += np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / d)
    return Potential(grid, float(contrast) * v)


def incident_chiral(params, n_sources, width=0.08, span=3.2):
    """Initial profiles (exp(-(y - y_c)^2 / width), 0) with y_c spread over [-span, span]."""
    if n_sources < 1:
        raise ValueError("need at least one source")
    centers = np.linspace(-span, span, n_sources) if n_sources > 1 else np.zeros(1)
    y = params.y
    prof = np.zeros((n_sources, 2, params.ny), dtype=complex)
    prof[:, 0, :] = np.exp(-(y[None, :] - centers[:, None]) ** 2 / width)
    return prof


def incident_angles(n_sources):
    """Equispaced plane-wave directions in [0, 2 pi)."""
    if n_sources < 1:
        raise ValueError("need at least one source")
    return 2 * np.pi * np.arange(n_sources) / n_sources


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    model: str = "chiral"
    phantom: str = "disk"
    contrast: float = 0.1
    scale: str = "full"
    k: float = None
    # chiral geometry
    lx: float = 2.0
    y_min: float = -8.0
    y_max: float = 8.0
    nx: int = None
    ny: int = None
    data_nx: int = None
    data_ny: int = None
    # anti-chiral geometry
    length: float = 25.6
    n: int = None
    data_n: int = None
    n_sources: int = 64
    center: tuple = None
    radius: float = None
    centers: tuple = None
    denominators: tuple = None
    method: str = "ibs"
    n_terms: int = None
    n_terms_ribs: int = None
    lam: float = None
    lam_convention: str = "euclidean"
    cg_tol: float = 1e-8
    cg_maxit: int = 500
    power_iters: int = 0
    output: str = "out"
    seed: int = 0

    def __post_init__(self):
        self.model = self.model.lower()
        if self.model not in ("chiral", "antichiral"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.phantom not in ("disk", "gaussians"):
            raise ValueError(f"unknown phantom {self.phantom!r}")
        if self.scale not in ("full", "desk"):
            raise ValueError(f"scale must be full or desk, got {self.scale!r}")
        if self.method not in ("ibs", "ribs", "both"):
            raise ValueError(f"method must be ibs, ribs or both, got {self.method!r}")
        _fill_defaults(self)
        if self.model == "chiral":
            if not (self.data_nx > self.nx and self.data_ny > self.ny):
                raise ValueError("data grid must be strictly finer than the reconstruction grid")
        elif not self.data_n > self.n:
            raise ValueError("data grid must be strictly finer than the reconstruction grid")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}

    def series_config(self, method=None, n_terms=None):
        return inverse.SeriesConfig(method or ("ibs" if self.method == "both" else self.method),
                                    n_terms or self.n_terms, self.lam, self.cg_tol,
                                    self.cg_maxit, self.lam_convention)


_CHIRAL_FULL = dict(nx=400, ny=1600, data_nx=800, data_ny=3200)
_ANTI_FULL = dict(n=256, data_n=512)


def _fill_defaults(c):
    quarter = 4 if c.scale == "desk" else 1
    if c.model == "chiral":
        c.k = 2.0 if c.k is None else c.k
        c.lam = 1e-3 if c.lam is None else c.lam
        for key, val in _CHIRAL_FULL.items():
            if getattr(c, key) is None:
                setattr(c, key, val // quarter)
        if c.phantom == "disk":
            c.center = c.center or (1.0, 0.0)
            c.radius = c.radius or 0.4
        else:
            c.centers = c.centers or ((0.5, 0.0), (1.5, 0.0))
            c.denominators = c.denominators or (0.08, 0.08)
        c.n_terms = c.n_terms or 4
    else:
        c.k = 1.0 if c.k is None else c.k
        c.lam = 0.05 if c.lam is None else c.lam
        for key, val in _ANTI_FULL.items():
            if getattr(c, key) is None:
                setattr(c, key, val // quarter)
        if c.phantom == "disk":
            c.center = c.center or (12.8, 12.8)
            c.radius = c.radius or 6.4
        else:
            c.centers = c.centers or ((16.64, 8.96), (8.96, 16.64))
            c.denominators = c.denominators or (20.48, 10.83)
        c.n_terms = c.n_terms or 5
    c.center = _as_tuple(c.center)
    c.centers = tuple(_as_tuple(p) for p in c.centers) if c.centers else None
    c.denominators = _as_tuple(c.denominators)


def _as_tuple(v):
    return tuple(v) if v is not None and not isinstance(v, (int, float)) else v


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"nx", "ny", "data_nx", "data_ny", "n", "data_n", "n_sources", "n_terms",
             "n_terms_ribs", "cg_maxit", "power_iters", "seed"}
_STR_KEYS = {"model", "phantom", "scale", "method", "lam_convention", "output"}


def _parse_value(key, text):
    text = text.strip()
    if key in _STR_KEYS:
        return text
    if key in _INT_KEYS:
        return int(text)
    if key in ("center",):
        return tuple(float(t) for t in text.split(","))
    if key == "denominators":
        return tuple(float(t) for t in text.split(","))
    if key == "centers":
        pts = [tuple(float(t) for t in p.split(",")) for p in text.split(";")]
        return tuple(pts)
    return float(text)


def parse_config(text, **overrides):
    """Flat ``key = value`` lines; ``#`` comments; unknown keys are errors.

    Points are ``x,y``; several points are separated by ``;``.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides):
    return parse_config(Path(path).read_text(), **overrides)


def format_config(cfg):
    lines = []
    for key, val in cfg.to_dict().items():
        if val is None:
            continue
        if key == "centers":
            val = ";".join(",".join(repr(float(t)) for t in p) for p in val)
        elif isinstance(val, list):
            val = ",".join(repr(float(t)) for t in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- experiment

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    truth: Potential
    reports: dict
    projection: float
    constants: inverse.ConvergenceConstants = None
    radius_ok: bool = None
    data_mismatch: float = None
    timings: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def error_table(self):
        """Rows (method, term, relative_error); term 0 is the Projection baseline."""
        rows = [("projection", 0, self.projection)]
        for method, rep in self.reports.items():
            rows += [(method, j + 1, e) for j, e in enumerate(rep.errors)]
        return rows


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def build_models(cfg):
    """(coarse model, fine model, coarse truth, fine truth)."""
    if cfg.model == "chiral":
        cp = chiral.ChiralParams(cfg.lx, cfg.y_min, cfg.y_max, cfg.nx, cfg.ny, cfg.k)
        fp = chiral.ChiralParams(cfg.lx, cfg.y_min, cfg.y_max, cfg.data_nx, cfg.data_ny, cfg.k)
        coarse = chiral.ChiralModel(cp, incident_chiral(cp, cfg.n_sources))
        fine = chiral.ChiralModel(fp, incident_chiral(fp, cfg.n_sources), detector_ys=cp.y)
        cgrid, fgrid = cp.potential_grid, fp.potential_grid
    else:
        cp = antichiral.AntichiralParams(cfg.length, cfg.n, cfg.k)
        fp = antichiral.AntichiralParams(cfg.length, cfg.data_n, cfg.k)
        th = incident_angles(cfg.n_sources)
        coarse = antichiral.AntichiralModel(cp, th)
        fine = antichiral.AntichiralModel(fp, th, detectors=coarse.detectors)
        cgrid, fgrid = cp.grid, fp.grid
    return coarse, fine, make_phantom(cfg, cgrid), make_phantom(cfg, fgrid)


def make_phantom(cfg, grid):
    if cfg.phantom == "disk":
        return phantom_disk(grid, cfg.center, cfg.radius, cfg.contrast)
    return phantom_gaussians(grid, cfg.centers, cfg.denominators, cfg.contrast)


def generate_data(cfg, fine, fine_truth):
    data = fine.scattered(fine_truth)
    data.meta["grid"] = "data"
    return data


def run_experiment(cfg, with_constants=True):
    """Fine-grid data, coarse-grid series reconstruction and Projection baseline."""
    timings = {}
    stage = "setup"
    try:
        t = time.perf_counter()
        coarse, fine, truth, fine_truth = build_models(cfg)
        timings[stage] = time.perf_counter() - t

        stage = "data"
        t = time.perf_counter()
        data = generate_data(cfg, fine, fine_truth)
        del fine
        timings[stage] = time.perf_counter() - t

        stage = "series"
        t = time.perf_counter()
        reports = _run_series(cfg, coarse, data, truth)
        timings[stage] = time.perf_counter() - t

        stage = "projection"
        t = time.perf_counter()
        clean = coarse.apply_K1(truth)
        mismatch = l2_norm(clean - data) / max(l2_norm(data), 1e-300)
        proj_v = inverse.k1_pseudoinverse(coarse, clean, cfg.series_config())
        flags = []
        try:
            projection = relative_error(proj_v, truth)
        except ZeroDivisionError:
            projection = math.nan
            flags.append("zero_truth")
        timings[stage] = time.perf_counter() - t

        constants = radius_ok = None
        if with_constants:
            stage = "constants"
            t = time.perf_counter()
            constants = experiment_constants(cfg, coarse, data)
            first = next(iter(reports.values())).terms[0]
            radius_ok = bool(first.sup_norm < constants.r)
            timings[stage] = time.perf_counter() - t
    except Exception as exc:
        raise StageError(stage, exc) from exc
    for rep in reports.values():
        flags += [f for f in rep.flags if f not in flags]
    return ExperimentResult(cfg, truth, reports, projection, constants, radius_ok,
                            mismatch, timings, flags)


def _run_series(cfg, model, data, truth):
    if cfg.method == "both":
        ibs, ribs = inverse.reconstruct_both(model, data, cfg.series_config("ibs"), truth,
                                             n_ribs=cfg.n_terms_ribs)
        return {"ibs": ibs, "ribs": ribs}
    scfg = cfg.series_config()
    return {scfg.method: inverse.run_series(model, data, scfg, truth)}


def experiment_constants(cfg, model, data_like):
    scfg = cfg.series_config()
    if cfg.power_iters > 0:
        norm = None
    else:
        lam = inverse._effective_lambda(model, data_like, scfg)
        norm = inverse.tikhonov_norm_estimate(lam)
    if cfg.model == "chiral":
        inc = incident_chiral(model.params, cfg.n_sources)
    else:
        inc = antichiral._plane_waves(incident_angles(cfg.n_sources), cfg.k, model.grid)
    return inverse.compute_constants(cfg.model, model.params, inc, model, scfg, data_like,
                                     n_power=cfg.power_iters, norm_K1inv=norm)


# ---------------------------------------------------------------- outputs

def write_pgm(path, values):
    """8-bit binary PGM, rows = first grid axis, linear map from [min, max]."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    img = np.clip(np.rint(255 * scaled), 0, 255).astype(np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def _fmt_err(e):
    return "nan" if math.isnan(e) else repr(float(e))


def write_errors_csv(path, rows):
    lines = ["method,term,relative_error"]
    lines += [f"{m},{t},{_fmt_err(e)}" for m, t, e in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _solver_summary(rep):
    return [{"converged": bool(i.converged), "iterations": int(i.iterations),
             "residual": float(i.residual)} for i in rep.solver_info]


def write_outputs(result, outdir=None, pgm=True):
    cfg = result.config
    out = Path(outdir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    grid = result.truth.grid
    primary = "ibs" if cfg.method in ("ibs", "both") else "ribs"
    for method, rep in result.reports.items():
        prefix = "recon" if method == primary else f"{method}"
        for j, (term, cum) in enumerate(zip(rep.terms, rep.cumulative), 1):
            write_grid_csv(out / f"{prefix}_term{j}.csv", grid, term.values)
            write_grid_csv(out / f"{prefix}_cumulative{j}.csv", grid, cum.values)
            if pgm:
                write_pgm(out / f"{prefix}_cumulative{j}.pgm", cum.values)
    write_grid_csv(out / "truth.csv", grid, result.truth.values)
    if pgm:
        write_pgm(out / "truth.pgm", result.truth.values)
    write_errors_csv(out / "errors.csv", result.error_table())
    write_manifest(out / "run.json", result)
    return out


def write_manifest(path, result, stage=None):
    cfg = result.config if result is not None else None
    doc = {"config": cfg.to_dict() if cfg else None}
    if stage is not None:
        doc["failed_stage"] = stage
    if result is not None:
        c = result.constants
        doc.update({
            "projection": _json_float(result.projection),
            "errors": {m: [_json_float(e) for e in r.errors] for m, r in result.reports.items()},
            "solver": {m: _solver_summary(r) for m, r in result.reports.items()},
            "call_counts": {m: {str(k): v for k, v in r.call_counts.items()}
                            for m, r in result.reports.items()},
            "constants": None if c is None else {
                "mu": c.mu, "nu": c.nu, "norm_K1inv": _json_float(c.norm_K1inv),
                "C": _json_float(c.C), "r": c.r, "M": c.M_const},
            "radius_check": result.radius_ok,
            "data_model_mismatch": result.data_mismatch,
            "timings": result.timings,
            "flags": result.flags,
        })
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _json_float(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)
