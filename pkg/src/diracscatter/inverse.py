"""Tikhonov pseudoinverse of K1, inverse Born series engines and the constants
governing their convergence."""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .field import MeasurementSet, Potential, relative_error
from .numkit import DomainError, cg_hermitian

log = logging.getLogger(__name__)

METHODS = ("ibs", "ribs")


class ForwardModelHandle(Protocol):
    grid: object
    call_counts: Counter

    def apply_K1(self, V): ...

    def apply_K1_adjoint(self, data): ...

    def apply_Km(self, potentials): ...


@dataclass
class SeriesConfig:
    """Series settings.

    ``lam_convention`` fixes how ``lam`` enters the normal equations:
    ``"l2"`` uses the cell-area / detector-spacing weighted inner products,
    ``"euclidean"`` treats potentials and data as plain coefficient vectors.
    """
    method: str = "ibs"
    n_terms: int = 3
    lam: float = 1e-3
    cg_tol: float = 1e-8
    cg_maxit: int = 500
    lam_convention: str = "euclidean"

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.n_terms) != self.n_terms or self.n_terms < 1:
            raise ValueError("n_terms must be a positive integer")
        if self.lam < 0:
            raise ValueError("Tikhonov parameter must be non-negative")
        if self.lam_convention not in ("l2", "euclidean"):
            raise ValueError(f"unknown lambda convention {self.lam_convention!r}")


@dataclass
class ConvergenceConstants:
    mu: float
    nu: float
    norm_K1inv: float
    C: float
    r: float
    M_const: float

    @classmethod
    def from_norms(cls, mu, nu, norm_K1inv):
        C = max(2.0, norm_K1inv * nu)
        root = math.sqrt(16 * C * C + 1)
        # (root - 4C) loses digits for large C; use the conjugate form
        r = 1.0 / (2 * mu * (root + 4 * C))
        return cls(mu, nu, norm_K1inv, C, r, 2 * mu / root)


@dataclass
class ReconstructionReport:
    method: str
    terms: list
    cumulative: list
    errors: list = field(default_factory=list)
    solver_info: list = field(default_factory=list)
    call_counts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def n_terms(self):
        return len(self.terms)

    @property
    def potential(self):
        return self.cumulative[-1]


# ---------------------------------------------------------------- pseudoinverse

def _effective_lambda(model, data, cfg):
    if cfg.lam_convention == "l2":
        return cfg.lam
    return cfg.lam * data.spacing / model.grid.cell_area


def k1_pseudoinverse(model, data, cfg, diagnostics=None):
    """Solve (K1* K1 + lam I) V = K1* data by CG in the weighted L2 inner product."""
    lam = _effective_lambda(model, data, cfg)
    if lam == 0:
        log.info("k1_pseudoinverse: lam = 0, CG iteration cap acts as regularisation")
    grid = model.grid
    w = grid.cell_area

    def normal(v):
        Kv = _as_data(model.apply_K1(Potential(grid, v)), data)
        return model.apply_K1_adjoint(Kv).values + lam * v

    rhs = model.apply_K1_adjoint(data).values
    v, info = cg_hermitian(normal, rhs, tol=cfg.cg_tol, max_iter=cfg.cg_maxit,
                           inner=lambda a, b: np.vdot(a, b) * w)
    if diagnostics is not None:
        diagnostics.append(info)
    return Potential(grid, np.real(v))


def _as_data(meas, like):
    return like.with_data(meas.data)


# ---------------------------------------------------------------- series

def compositions(j, min_parts=1):
    """Ordered compositions of j in lexicographic order."""
    if j < 1:
        raise ValueError("compositions need j >= 1")
    out = []

    def rec(rest, prefix):
        if rest == 0:
            if len(prefix) >= min_parts:
                out.append(tuple(prefix))
            return
        for first in range(1, rest + 1):
            rec(rest - first, prefix + [first])

    rec(j, [])
    return out


def _report(method, terms, truth, infos, model, flags):
    cumulative = []
    acc = None
    for t in terms:
        acc = t if acc is None else acc + t
        cumulative.append(acc)
    errors = []
    if truth is not None:
        for c in cumulative:
            try:
                errors.append(relative_error(c, truth))
            except ZeroDivisionError:
                errors.append(float("nan"))
                if "zero_truth" not in flags:
                    flags.append("zero_truth")
    return ReconstructionReport(method, terms, cumulative, errors, infos,
                                dict(model.call_counts), flags)


def _pinv(model, data, cfg, infos):
    return k1_pseudoinverse(model, data, cfg, infos)


def ibs_terms(model, data, cfg, infos, first=None):
    """n_1..n_m of the inverse Born series; b_j sums K_l over compositions of j."""
    terms = list(first or [])
    if not terms:
        terms.append(_pinv(model, data, cfg, infos))
    for j in range(len(terms) + 1, cfg.n_terms + 1):
        b = None
        for comp in compositions(j, min_parts=2):
            val = model.apply_Km([terms[i - 1] for i in comp]).data
            b = val if b is None else b + val
        terms.append(-_pinv(model, data.with_data(b), cfg, infos))
    return terms


def ribs_terms(model, data, cfg, infos, first=None):
    """n_1 as for IBS, then n_j = -K1+(K_2(n_{j-1}, n_1))."""
    terms = list(first or [])
    if not terms:
        terms.append(_pinv(model, data, cfg, infos))
    for j in range(len(terms) + 1, cfg.n_terms + 1):
        b = model.apply_Km([terms[-1], terms[0]]).data
        terms.append(-_pinv(model, data.with_data(b), cfg, infos))
    return terms


def ibs_reconstruct(model, data, cfg, truth=None):
    infos = []
    model.call_counts.clear()
    return _report("ibs", ibs_terms(model, data, cfg, infos), truth, infos, model, [])


def ribs_reconstruct(model, data, cfg, truth=None):
    infos = []
    model.call_counts.clear()
    return _report("ribs", ribs_terms(model, data, cfg, infos), truth, infos, model, [])


def reconstruct_both(model, data, cfg, truth=None, n_ribs=None):
    """IBS and RIBS sharing their (identical) first two terms.

    Each report's call counts cover the shared terms plus its own extra terms.
    """
    model.call_counts.clear()
    shared_infos = []
    shared = ibs_terms(model, data, _with_terms(cfg, min(2, cfg.n_terms)), shared_infos)
    shared_counts = dict(model.call_counts)
    out = []
    for method, fn, n in (("ibs", ibs_terms, cfg.n_terms),
                          ("ribs", ribs_terms, n_ribs or cfg.n_terms)):
        model.call_counts.clear()
        model.call_counts.update(shared_counts)
        infos = list(shared_infos)
        terms = fn(model, data, _with_terms(cfg, n), infos, first=shared[:n])
        out.append(_report(method, terms, truth, infos, model, []))
    return tuple(out)


def _with_terms(cfg, n):
    return SeriesConfig(cfg.method, n, cfg.lam, cfg.cg_tol, cfg.cg_maxit, cfg.lam_convention)


def run_series(model, data, cfg, truth=None):
    fn = ibs_reconstruct if cfg.method == "ibs" else ribs_reconstruct
    return fn(model, data, cfg, truth)


# ---------------------------------------------------------------- constants

def estimate_K1inv_norm(model, data_like, cfg, n_iter=20, seed=0):
    """Power iteration for ||K1+|| on K1+ (K1+)*, in the weighted L2 norms.

    (K1+)* = K1 (K1*K1 + lam)^{-1}, so each step costs two CG solves.
    """
    grid = model.grid
    rng = np.random.default_rng(seed)
    v = Potential(grid, rng.standard_normal(grid.shape))
    v = v * (1.0 / _pnorm(v))
    est = 0.0
    for _ in range(n_iter):
        u = _normal_solve(model, data_like, cfg, v)
        d = _as_data(model.apply_K1(u), data_like)
        w = k1_pseudoinverse(model, d, cfg)
        nw = _pnorm(w)
        if nw == 0.0:
            return 0.0
        est = math.sqrt(nw)
        v = w * (1.0 / nw)
    return est


def _normal_solve(model, data_like, cfg, v):
    lam = _effective_lambda(model, data_like, cfg)
    grid = model.grid
    w = grid.cell_area

    def normal(x):
        d = _as_data(model.apply_K1(Potential(grid, x)), data_like)
        return model.apply_K1_adjoint(d).values + lam * x

    x, _ = cg_hermitian(normal, v.values, tol=cfg.cg_tol, max_iter=cfg.cg_maxit,
                        inner=lambda a, b: np.vdot(a, b) * w)
    return Potential(grid, np.real(x))


def _pnorm(v):
    return float(np.sqrt(np.sum(v.values ** 2) * v.grid.cell_area))


def tikhonov_norm_estimate(lam):
    """sup_s s/(s^2 + lam) = 1/(2 sqrt(lam)), attained when sqrt(lam) is a singular value."""
    if lam <= 0:
        return math.inf
    return 0.5 / math.sqrt(lam)


def compute_constants(model_kind, params, incident, model=None, cfg=None, data_like=None,
                      n_power=20, norm_K1inv=None):
    """mu, nu, ||K1+|| and the derived C, r, M.

    ``incident`` holds chiral initial profiles (ns, 2, Ny) or anti-chiral
    incident fields (ns, 2, N, N).  ``norm_K1inv`` overrides the power
    iteration (used when only the Tikhonov estimate is affordable).
    """
    if model_kind == "chiral":
        mu = params.k * params.lx
        prof = np.asarray(incident)
        # L2 norm over y of the initial spinor, worst source
        nu = float(np.sqrt(np.max(np.sum(np.abs(prof) ** 2, axis=(-2, -1)) * params.dy)))
    elif model_kind == "antichiral":
        from .antichiral import mu_a_quadrature
        mu = mu_a_quadrature(params, n_quad=min(params.n, 128))
        inc = np.asarray(incident)
        nu = float(np.sqrt(np.max(np.sum(np.abs(inc) ** 2, axis=-3))))
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    if norm_K1inv is None:
        if model is None or cfg is None or data_like is None:
            raise ValueError("power iteration needs model, cfg and data_like")
        norm_K1inv = estimate_K1inv_norm(model, data_like, cfg, n_power)
    return ConvergenceConstants.from_norms(mu, nu, norm_K1inv)


def error_bound(c, N, norm_V1, Mbar, proj_term, with_flag=False):
    """Truncation plus projection bound for the N-term inverse series.

    Returns +inf (flag False) when the radius or the M-bar condition fails.
    """
    nk = c.nu * c.norm_K1inv
    mbar_max = (1.0 - math.sqrt(nk / (1.0 + nk))) / c.mu
    ok = norm_V1 < c.r and Mbar < mbar_max
    if not ok:
        log.info("error_bound: preconditions fail (|V1|=%g, r=%g, Mbar=%g, limit=%g)",
                 norm_V1, c.r, Mbar, mbar_max)
        value = math.inf
    else:
        q = norm_V1 / c.r
        tail = c.M_const * q ** (N + 1) / (1.0 - q)
        coeff = 1.0 / (1.0 - nk / (1.0 - c.mu * Mbar) ** 2 + nk)
        value = tail + coeff * proj_term
    return (value, ok) if with_flag else value


# ---------------------------------------------------------------- analytic mu_a

_BRANCH_K = 2.0 * math.exp(-np.euler_gamma)


def I_of_k(k):
    if not k > 0:
        raise DomainError("I(k) needs k > 0")
    g = np.euler_gamma
    if k >= _BRANCH_K:
        return math.pi + 2.0 * (g + math.log(k / 2.0) - 0.5) + 8.0 / k ** 2 * math.exp(-2 * g)
    return math.pi + 1.0 - 2.0 * g - 2.0 * math.log(k / 2.0)


def mu_a_bound_analytic(k, R):
    """Closed-form upper bound on mu_a for a domain inside a disk of radius R > 1."""
    if not R > 1:
        raise DomainError("the analytic bound needs R > 1")
    if not k > 0:
        raise DomainError("the analytic bound needs k > 0")
    h0_far = 4.0 / 3.0 * math.sqrt(2 * math.pi / k) * (R ** 1.5 - 1.0)
    inner = 2.0 * R / (math.pi * k) + 4.0 / (math.pi * k) ** 2
    h1 = 2 * math.pi ** 2 * k / 3.0 * (inner ** 1.5 - (2.0 / (k * math.pi)) ** 3)
    return k * k / 4.0 * (I_of_k(k) + h0_far + h1)
