"""Anti-chiral Dirac model: Lippmann-Schwinger equation for the density sigma.

The Green convolution G_h is applied with zero-padded FFTs; sigma solves
(I + k V G_h) sigma = -k V psi0 by GMRES; scattered fields are
psi_s = G_h sigma.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .field import Grid2D, MeasurementSet, Potential, SpinorField
from .numkit import DomainError, fft2, gmres, hankel1, next_power_of_two

log = logging.getLogger(__name__)

SOURCE_CHUNK = 8


@dataclass(frozen=True)
class AntichiralParams:
    length: float
    n: int
    k: float

    def __post_init__(self):
        if self.n < 2 or not self.length > 0 or not self.k > 0:
            raise ValueError("need n >= 2, length > 0, k > 0")

    @property
    def h(self):
        return self.length / self.n

    @property
    def grid(self):
        return Grid2D.cell_centered(self.n, self.length)


# ---------------------------------------------------------------- kernel

def green_entries(k, dx, dy):
    """Entries (G11, G22, G12) of the Green matrix at separations (dx, dy)."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    r = np.hypot(dx, dy)
    if np.any(r == 0):
        raise DomainError("Green's function is singular at zero separation")
    h0 = hankel1(0, k * r)
    h1 = hankel1(1, k * r)
    pre = 0.25 * k
    g_iso = pre * 1j * h0
    g11 = g_iso + pre * h1 * dx / r
    g22 = g_iso - pre * h1 * dx / r
    g12 = pre * h1 * dy / r
    return g11, g22, g12


def green_matrix(k, delta):
    dx, dy = float(delta[0]), float(delta[1])
    g11, g22, g12 = green_entries(k, dx, dy)
    return np.array([[g11, g12], [g12, g22]], dtype=complex)


def _self_cell_integral(k, h):
    """Integral of the i H0 term over a disk of area h^2 (odd H1 terms cancel)."""
    a = h / np.sqrt(np.pi)
    h0_integral = (2 * np.pi / k) * (a * hankel1(1, k * a) + 2j / (np.pi * k))
    return 0.25 * k * 1j * h0_integral


class GreenTable:
    """Kernel samples on the lag grid and their padded spectra.

    ``singular="zero"`` drops the zero-lag sample (punctured trapezoid);
    ``singular="disk"`` replaces it by the analytic small-disk integral of
    the isotropic term.
    """

    def __init__(self, p, singular="zero"):
        self.params = p
        n, h = p.n, p.h
        self.size = next_power_of_two(2 * n - 1)
        lags = np.arange(-(n - 1), n)
        lx, ly = np.meshgrid(lags * h, lags * h, indexing="ij")
        zero = (lx == 0) & (ly == 0)
        lx_safe = np.where(zero, h, lx)
        g11, g22, g12 = green_entries(p.k, lx_safe, ly)
        for g in (g11, g22, g12):
            g[zero] = 0.0
        if singular == "disk":
            corr = _self_cell_integral(p.k, h) / h ** 2
            g11[zero] = corr
            g22[zero] = corr
        elif singular != "zero":
            raise ValueError(f"unknown singularity rule {singular!r}")
        self.singular = singular
        self.lags = lags
        self.g11, self.g22, self.g12 = g11, g22, g12
        P = self.size
        weight = P * h * h
        self.spectra = np.stack([weight * fft2(_embed(g, P)) for g in (g11, g22, g12)])

    def sample(self, a, b):
        """Table entries (G11, G22, G12) at integer lag (a, b)."""
        i, j = a + self.params.n - 1, b + self.params.n - 1
        return self.g11[i, j], self.g22[i, j], self.g12[i, j]


def _embed(table, P):
    n = (table.shape[0] + 1) // 2
    out = np.zeros((P, P), dtype=complex)
    idx = np.arange(-(n - 1), n) % P
    out[np.ix_(idx, idx)] = table
    return out


def build_green_table(p, singular="zero"):
    return GreenTable(p, singular)


def _convolve(spectra, f, adjoint=False):
    """Apply the 2x2 kernel to f of shape (..., 2, N, N)."""
    n = f.shape[-1]
    P = spectra.shape[-1]
    pad = np.zeros(f.shape[:-2] + (P, P), dtype=complex)
    pad[..., :n, :n] = f
    fh = fft2(pad)
    # the adjoint kernel conj(G(-d))^T has spectrum conj(G_hat)^T, and G is symmetric
    s11, s22, s12 = (np.conj(spectra) if adjoint else spectra)
    out1 = fft2(s11 * fh[..., 0, :, :] + s12 * fh[..., 1, :, :], "inverse")
    out2 = fft2(s12 * fh[..., 0, :, :] + s22 * fh[..., 1, :, :], "inverse")
    return np.stack([out1[..., :n, :n], out2[..., :n, :n]], axis=-3)


def apply_G(table, f):
    """(G_h f)(x_ij) = sum_mn G(x_ij - x_mn) f(x_mn) h^2 via FFT."""
    if isinstance(f, SpinorField):
        if f.grid != table.params.grid:
            raise ValueError("field grid does not match the Green table")
        out = _convolve(table.spectra, f.stacked())
        return SpinorField(f.grid, out[0], out[1])
    f = np.asarray(f)
    if f.shape[-3:] != (2, table.params.n, table.params.n):
        raise ValueError(f"field shape {f.shape} does not match the Green table")
    return _convolve(table.spectra, f)


def apply_G_adjoint(table, f):
    """Euclidean adjoint of :func:`apply_G` on arrays (..., 2, N, N)."""
    return _convolve(table.spectra, np.asarray(f), adjoint=True)


# ---------------------------------------------------------------- incident field

def plane_wave(theta, k, grid):
    """Unit spinor (sin(t/2), -cos(t/2)) times exp(ik(x cos t + y sin t))."""
    x, y = grid.mesh()
    phase = np.exp(1j * k * (x * np.cos(theta) + y * np.sin(theta)))
    return SpinorField(grid, np.sin(0.5 * theta) * phase, -np.cos(0.5 * theta) * phase)


def _plane_waves(thetas, k, grid):
    x, y = grid.mesh()
    out = np.empty((len(thetas), 2, grid.nx, grid.ny), dtype=complex)
    for s, t in enumerate(thetas):
        phase = np.exp(1j * k * (x * np.cos(t) + y * np.sin(t)))
        out[s, 0] = np.sin(0.5 * t) * phase
        out[s, 1] = -np.cos(0.5 * t) * phase
    return out


# ---------------------------------------------------------------- forward solve

def solve_sigma(p, V, psi0, table=None, tol=1e-8, restart=50, max_iter=2000):
    """GMRES solve of (I + k V G_h) sigma = -k V psi0.

    ``psi0`` is a SpinorField or an array (2, N, N).  Returns the density
    (same type as ``psi0``) and the GMRES report.
    """
    table = table or build_green_table(p)
    if V.grid != p.grid:
        raise ValueError("potential is not on the model grid")
    if V.sup_norm * mu_a_quadrature(p, n_quad=min(p.n, 64)) >= 1.0:
        log.debug("solve_sigma: |V| * mu_a >= 1, Born regime not guaranteed")
    arr = psi0.stacked() if isinstance(psi0, SpinorField) else np.asarray(psi0)
    sigma, info = _solve_sigma_array(table, V.values, arr, tol, restart, max_iter)
    if isinstance(psi0, SpinorField):
        return SpinorField(psi0.grid, sigma[0], sigma[1]), info
    return sigma, info


def _solve_sigma_array(table, v, psi0, tol, restart, max_iter):
    kv = table.params.k * v

    def op(s):
        return s + kv * apply_G(table, s)

    sigma, info = gmres(op, -kv * psi0, tol=tol, max_iter=max_iter, restart=restart)
    if not info.converged:
        log.warning("solve_sigma: GMRES stopped at residual %.3e", info.residual)
    return sigma, info


# ---------------------------------------------------------------- detectors

def boundary_indices(n):
    """Counter-clockwise boundary cells (i, j) of an n x n lattice, 4n-4 of them."""
    i = np.concatenate([np.arange(n), np.full(n - 1, n - 1),
                        np.arange(n - 2, -1, -1), np.zeros(n - 2, dtype=int)])
    j = np.concatenate([np.zeros(n, dtype=int), np.arange(1, n),
                        np.full(n - 1, n - 1), np.arange(n - 2, 0, -1)])
    return i, j


def boundary_detectors(p):
    i, j = boundary_indices(p.n)
    g = p.grid
    return np.column_stack([g.x[i], g.y[j]])


def eval_boundary(p, sigma, detectors, chunk_elems=2_000_000):
    """psi_s(d) = sum_mn G(d - x_mn) sigma(x_mn) h^2 by direct summation.

    ``sigma`` is a SpinorField or an array (..., 2, N, N); returns
    (..., 2, n_det).  Detectors may not coincide with lattice nodes.
    """
    arr = sigma.stacked() if isinstance(sigma, SpinorField) else np.asarray(sigma)
    det = np.atleast_2d(np.asarray(detectors, dtype=float))
    g = p.grid
    lead = arr.shape[:-3]
    flat = arr.reshape((-1, 2, p.n * p.n))
    x, y = g.mesh()
    xs, ys = x.ravel(), y.ravel()
    out = np.zeros((flat.shape[0], 2, len(det)), dtype=complex)
    step = max(1, chunk_elems // xs.size)
    h2 = p.h * p.h
    for start in range(0, len(det), step):
        d = det[start:start + step]
        dx = d[:, 0:1] - xs[None, :]
        dy = d[:, 1:2] - ys[None, :]
        if np.any(np.hypot(dx, dy) < 1e-12 * p.h):
            raise DomainError("detector coincides with a source node")
        g11, g22, g12 = green_entries(p.k, dx, dy)
        s1, s2 = flat[:, 0].T, flat[:, 1].T
        out[:, 0, start:start + step] = ((g11 @ s1) + (g12 @ s2)).T * h2
        out[:, 1, start:start + step] = ((g12 @ s1) + (g22 @ s2)).T * h2
    return out.reshape(lead + (2, len(det)))


def eval_shifted_lattice(p, sigma, offset):
    """psi_s on the lattice x_ij + offset*h for all i, j, via one FFT convolution.

    Same sum as :func:`eval_boundary`, for detectors on a lattice shifted by a
    fixed non-integer offset; returns (..., 2, N, N).
    """
    ox, oy = offset
    n, h = p.n, p.h
    lags = np.arange(-(n - 1), n)
    lx, ly = np.meshgrid((lags + ox) * h, (lags + oy) * h, indexing="ij")
    g11, g22, g12 = green_entries(p.k, lx, ly)
    P = next_power_of_two(2 * n - 1)
    spectra = np.stack([P * h * h * fft2(_embed(t, P)) for t in (g11, g22, g12)])
    return _convolve(spectra, np.asarray(sigma))


def _lattice_offset(p, detectors):
    """Common fractional offset of all detectors w.r.t. the cell lattice, or None."""
    g = p.grid
    t = np.column_stack([(detectors[:, 0] - g.x0) / p.h, (detectors[:, 1] - g.y0) / p.h])
    frac = t - np.floor(t)
    if np.ptp(frac[:, 0]) > 1e-9 or np.ptp(frac[:, 1]) > 1e-9:
        return None
    off = frac[0]
    if np.all(np.minimum(off, 1 - off) < 1e-9):
        return None
    base = np.rint(t - off).astype(int)
    if base.min() < 0 or base.max() > p.n - 1:
        return None
    return off, base


# ---------------------------------------------------------------- mu_a

def _norm1(k, dx, dy):
    g11, g22, g12 = green_entries(k, dx, dy)
    a12 = np.abs(g12)
    return np.maximum(np.abs(g11) + a12, np.abs(g22) + a12)


def _self_cell_norm1(k, h, order=24):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for side in range(4):
        th = 0.25 * np.pi * nodes            # angle from the side normal
        wth = 0.25 * np.pi * weights
        for t, wt in zip(th, wth):
            rho = 0.5 * h / np.cos(t)
            r = 0.5 * rho * (nodes + 1.0)
            wr = 0.5 * rho * weights
            ang = t + side * 0.5 * np.pi
            f = _norm1(k, r * np.cos(ang), r * np.sin(ang))
            total += wt * np.sum(wr * r * f)
    return total


def mu_a_quadrature(p, n_quad=None, near=3, sub=6):
    """Estimate mu_a = k sup_x int_Omega ||G(x, x')||_1 dx'.

    Cell-averaged kernel on an n_quad^2 lattice (Gauss sub-sampling near the
    diagonal, radial quadrature on the singular cell), convolved with the
    indicator of Omega by FFT; the supremum is taken over cell centres.
    """
    nq = n_quad or p.n
    h = p.length / nq
    lags = np.arange(-(nq - 1), nq)
    lx, ly = np.meshgrid(lags * h, lags * h, indexing="ij")
    zero = (lx == 0) & (ly == 0)
    table = _norm1(p.k, np.where(zero, h, lx), ly) * h * h
    nodes, weights = np.polynomial.legendre.leggauss(sub)
    u = 0.5 * h * nodes
    w = 0.25 * np.outer(weights, weights) * h * h
    c = nq - 1
    for a in range(-near, near + 1):
        for b in range(-near, near + 1):
            if (a, b) == (0, 0) or abs(a) > nq - 1 or abs(b) > nq - 1:
                continue
            ux, uy = np.meshgrid(a * h + u, b * h + u, indexing="ij")
            table[c + a, c + b] = np.sum(w * _norm1(p.k, ux, uy))
    table[c, c] = _self_cell_norm1(p.k, h)
    P = next_power_of_two(2 * nq - 1)
    ones = np.zeros((P, P))
    ones[:nq, :nq] = 1.0
    kern = _embed(table.astype(complex), P)
    conv = np.fft.ifft2(np.fft.fft2(kern) * np.fft.fft2(ones)).real[:nq, :nq]
    return float(p.k * conv.max())


# ---------------------------------------------------------------- model

class AntichiralModel:
    """Forward map and Born operators of the anti-chiral model.

    Detectors default to the boundary-cell centres of the model lattice, where
    the measurement is the restriction of G_h.  External detectors (e.g. a
    coarser lattice's boundary) are evaluated by direct Green summation.
    """

    kind = "antichiral"

    def __init__(self, params, thetas, detectors=None, singular="zero",
                 gmres_tol=1e-8, gmres_restart=50, gmres_max_iter=2000):
        self.params = params
        self.thetas = np.asarray(thetas, dtype=float)
        self.table = build_green_table(params, singular)
        self.grid = params.grid
        self.own_boundary = detectors is None
        self.detectors = boundary_detectors(params) if detectors is None \
            else np.asarray(detectors, dtype=float)
        self.spacing = params.h if detectors is None else _detector_spacing(self.detectors)
        self._bi, self._bj = boundary_indices(params.n)
        self.gmres_tol = gmres_tol
        self.gmres_restart = gmres_restart
        self.gmres_max_iter = gmres_max_iter
        self.call_counts = Counter()
        self.solver_log = []

    @property
    def n_sources(self):
        return len(self.thetas)

    @cached_property
    def psi0(self):
        return _plane_waves(self.thetas, self.params.k, self.grid)

    def _chunks(self):
        for start in range(0, self.n_sources, SOURCE_CHUNK):
            yield slice(start, min(start + SOURCE_CHUNK, self.n_sources))

    def _detect(self, field):
        """Fields/densities (..., 2, N, N) -> detector values (..., 2, n_det).

        ``field`` is G_h sigma on the model lattice when detectors are the
        model's own boundary cells, else the density sigma itself.
        """
        if self.own_boundary:
            return field[..., self._bi, self._bj]
        found = _lattice_offset(self.params, self.detectors)
        if found is not None:
            off, base = found
            full = eval_shifted_lattice(self.params, field, off)
            return full[..., base[:, 0], base[:, 1]]
        return eval_boundary(self.params, field, self.detectors)

    def _wrap(self, det):
        return MeasurementSet(det.reshape(det.shape[0], -1), self.detectors, self.spacing)

    def apply_Km(self, potentials):
        potentials = list(potentials)
        if not potentials:
            raise ValueError("apply_Km needs at least one potential")
        for V in potentials:
            if V.grid != self.grid:
                raise ValueError("potential is not on the model grid")
        self.call_counts[len(potentials)] += 1
        k = self.params.k
        out = np.empty((self.n_sources, 2, len(self.detectors)), dtype=complex)
        for sl in self._chunks():
            w = self.psi0[sl]
            for V in reversed(potentials[1:]):
                w = -k * apply_G(self.table, V.values * w)
            dens = -k * potentials[0].values * w
            out[sl] = self._detect(apply_G(self.table, dens) if self.own_boundary else dens)
        return self._wrap(out)

    def apply_K1(self, V):
        return self.apply_Km([V])

    def apply_K1_adjoint(self, data):
        if not self.own_boundary:
            raise NotImplementedError("adjoint is only defined for the model's own boundary")
        d = data.data if isinstance(data, MeasurementSet) else np.asarray(data)
        nd = len(self.detectors)
        if d.shape != (self.n_sources, 2 * nd):
            raise ValueError(f"data shape {d.shape} does not match "
                             f"{self.n_sources} sources x {2 * nd} values")
        self.call_counts["adjoint"] += 1
        spacing = data.spacing if isinstance(data, MeasurementSet) else self.spacing
        n, k = self.params.n, self.params.k
        grad = np.zeros((n, n))
        e = d.reshape(self.n_sources, 2, nd) * spacing
        for sl in self._chunks():
            z = np.zeros((sl.stop - sl.start, 2, n, n), dtype=complex)
            z[..., self._bi, self._bj] = e[sl]
            y = apply_G_adjoint(self.table, z)
            grad += np.sum((np.conj(-k * self.psi0[sl]) * y).real, axis=(0, 1))
        return Potential(self.grid, grad / self.grid.cell_area)

    def scattered(self, V):
        """Nonlinear scattered data from the sigma formulation."""
        if V.grid != self.grid:
            raise ValueError("potential is not on the model grid")
        out = np.empty((self.n_sources, 2, len(self.detectors)), dtype=complex)
        self.solver_log = []
        for s in range(self.n_sources):
            psi0 = _plane_waves(self.thetas[s:s + 1], self.params.k, self.grid)[0]
            sigma, info = _solve_sigma_array(self.table, V.values, psi0, self.gmres_tol,
                                             self.gmres_restart, self.gmres_max_iter)
            self.solver_log.append(info)
            field = apply_G(self.table, sigma) if self.own_boundary else sigma
            out[s] = self._detect(field[None])[0]
        return self._wrap(out)

    def empty_measurement(self):
        return MeasurementSet(np.zeros((self.n_sources, 2 * len(self.detectors))),
                              self.detectors, self.spacing)


def _detector_spacing(det):
    if len(det) < 2:
        return 1.0
    steps = np.hypot(*np.diff(det, axis=0).T)
    return float(np.median(steps))
