"""Chiral Dirac model: Crank-Nicolson marching in the time-like variable x.

The transverse state is kept in interleaved order
``z = (psi2_0, psi1_1, psi2_1, psi1_2, ..., psi2_{Ny-2}, psi1_{Ny-1})``
which makes the discrete generator tridiagonal.  Boundary values
``psi1(y_0) = 0`` and ``psi2(y_{Ny-1}) = 0`` are implicit.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np
import scipy.sparse as sp

from .field import Grid2D, MeasurementSet, Potential, SpinorField
from .numkit import sparse_factor, tridiag_solve_adjoint_inplace, tridiag_solve_inplace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChiralParams:
    lx: float
    y_min: float
    y_max: float
    nx: int
    ny: int
    k: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 3:
            raise ValueError("need nx >= 1 and ny >= 3")
        if not (self.lx > 0 and self.y_max > self.y_min and self.k >= 0):
            raise ValueError("invalid chiral domain or wavenumber")

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def y(self):
        return self.y_min + np.arange(self.ny) * self.dy

    @property
    def potential_grid(self):
        # one row per marching slice x_i, i = 0..nx-1
        return Grid2D(self.nx, self.ny, 0.0, self.y_min, self.dx, self.dy)


class DiscreteGenerator:
    """Sparse generator L of A = alpha d/dy - i k beta and its CN factorization."""

    def __init__(self, p):
        self.params = p
        m = p.ny - 1
        inv = 1.0 / p.dy
        # D- : psi2 (nodes 0..Ny-2) -> rows of psi1 (nodes 1..Ny-1)
        d_minus = sp.diags([np.full(m, -inv), np.full(m - 1, inv)], [0, 1], shape=(m, m))
        # D+ : psi1 (nodes 1..Ny-1) -> rows of psi2 (nodes 0..Ny-2)
        d_plus = sp.diags([np.full(m, inv), np.full(m - 1, -inv)], [0, -1], shape=(m, m))
        eye = sp.identity(m, dtype=complex)
        self.blocked = sp.bmat([[-1j * p.k * eye, d_minus],
                                [d_plus, 1j * p.k * eye]], format="csr")
        # interleaved index q -> blocked index
        perm = np.empty(2 * m, dtype=int)
        perm[0::2] = m + np.arange(m)
        perm[1::2] = np.arange(m)
        self.perm = perm
        self.matrix = self.blocked[perm][:, perm].tocsr()
        n = 2 * m
        half = 0.5 * p.dx
        a_mat = sp.identity(n, dtype=complex, format="csc") - half * self.matrix
        b_mat = sp.identity(n, dtype=complex, format="csr") + half * self.matrix
        self.factor = sparse_factor(a_mat)
        if not self.factor.banded:
            raise AssertionError("interleaved generator is not tridiagonal")
        self.b_sub = b_mat.diagonal(-1).astype(complex)
        self.b_diag = b_mat.diagonal(0).astype(complex)
        self.b_sup = b_mat.diagonal(1).astype(complex)
        self.n = n
        # transverse node of each interleaved unknown
        self.node = (np.arange(n) + 1) // 2

    def kernel_args(self):
        f = self.factor
        return (f.mult, f.inv_piv, f.sup, self.b_sub, self.b_diag, self.b_sup)

    def adjoint_b(self):
        return (np.conj(self.b_sup), np.conj(self.b_diag), np.conj(self.b_sub))

    def to_state(self, nodal):
        """Nodal (..., 2, Ny) -> interleaved (..., n)."""
        nodal = np.asarray(nodal)
        out = np.empty(nodal.shape[:-2] + (self.n,), dtype=complex)
        out[..., 1::2] = nodal[..., 0, 1:]
        out[..., 0::2] = nodal[..., 1, :-1]
        return out

    def to_nodes(self, state):
        """Interleaved (..., n) -> nodal (..., 2, Ny) with boundary zeros."""
        state = np.asarray(state)
        ny = self.params.ny
        out = np.zeros(state.shape[:-1] + (2, ny), dtype=complex)
        out[..., 0, 1:] = state[..., 1::2]
        out[..., 1, :-1] = state[..., 0::2]
        return out

    def rows(self, values):
        """Nodal potential rows (nx, Ny) -> per-unknown rows (nx, n)."""
        return np.ascontiguousarray(np.asarray(values, dtype=float)[:, self.node])

    def fold_rows(self, rows):
        """Adjoint of :meth:`rows`: sum per-unknown weights back onto nodes."""
        out = np.zeros((rows.shape[0], self.params.ny))
        np.add.at(out, (slice(None), self.node), rows)
        return out


def build_generator(p):
    return DiscreteGenerator(p)


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _b_apply(bsub, bdiag, bsup, coef, x, out):
    n, ns = x.shape
    for p in range(n):
        d = bdiag[p] + coef[p]
        for s in range(ns):
            v = d * x[p, s]
            if p > 0:
                v += bsub[p - 1] * x[p - 1, s]
            if p < n - 1:
                v += bsup[p] * x[p + 1, s]
            out[p, s] = v


@numba.njit(cache=True)
def _march_kernel(mult, inv_piv, sup, bsub, bdiag, bsup, vrows, c, psi, src, dx, hist):
    nsteps = vrows.shape[0]
    n, ns = psi.shape
    has_src = src.shape[0] > 0
    keep = hist.shape[0] > 0
    rhs = np.empty_like(psi)
    coef = np.empty(n, dtype=np.complex128)
    if keep:
        hist[0] = psi
    for i in range(nsteps):
        for p in range(n):
            coef[p] = c * vrows[i, p]
        _b_apply(bsub, bdiag, bsup, coef, psi, rhs)
        if has_src:
            for p in range(n):
                for s in range(ns):
                    rhs[p, s] += dx * src[i, p, s]
        tridiag_solve_inplace(mult, inv_piv, sup, rhs)
        total = 0.0
        for p in range(n):
            for s in range(ns):
                psi[p, s] = rhs[p, s]
                total += abs(rhs[p, s])
        if not np.isfinite(total):
            return i
        if keep:
            hist[i + 1] = psi
    return -1


@numba.njit(cache=True)
def _chain_kernel(mult, inv_piv, sup, bsub, bdiag, bsup, vlev, c, psi0hist, states):
    m, nsteps, n = vlev.shape
    ns = states.shape[2]
    rhs = np.empty((n, ns), dtype=np.complex128)
    zero = np.zeros(n, dtype=np.complex128)
    for i in range(nsteps):
        for lev in range(m - 1, -1, -1):
            _b_apply(bsub, bdiag, bsup, zero, states[lev], rhs)
            for p in range(n):
                cv = c * vlev[lev, i, p]
                if cv != 0.0:
                    for s in range(ns):
                        if lev == 0:
                            rhs[p, s] += cv * psi0hist[i, p, s]
                        else:
                            rhs[p, s] += cv * states[lev - 1, p, s]
            tridiag_solve_inplace(mult, inv_piv, sup, rhs)
            states[lev] = rhs


@numba.njit(cache=True)
def _adjoint_kernel(mult, inv_piv, sup, bhsub, bhdiag, bhsup, c, psi0hist, z, grad):
    nsteps = grad.shape[0]
    n, ns = z.shape
    tmp = np.empty_like(z)
    zero = np.zeros(n, dtype=np.complex128)
    cc = np.conj(c)
    for i in range(nsteps - 1, -1, -1):
        tridiag_solve_adjoint_inplace(mult, inv_piv, sup, z)
        for p in range(n):
            acc = 0.0
            for s in range(ns):
                acc += (cc * np.conj(psi0hist[i, p, s]) * z[p, s]).real
            grad[i, p] = acc
        _b_apply(bhsub, bhdiag, bhsup, zero, z, tmp)
        z[:, :] = tmp


class MarchError(FloatingPointError):
    pass


def _as_batch(g, gen):
    g = np.asarray(g, dtype=complex)
    single = g.ndim == 2
    if single:
        g = g[None]
    if g.shape[1:] != (2, gen.params.ny):
        raise ValueError(f"profiles must have shape (..., 2, {gen.params.ny}), got {g.shape}")
    return single, np.ascontiguousarray(gen.to_state(g).T)


def cn_march(p, V, g, source=None, keep_history=False, coupling="explicit", gen=None):
    """March psi from x=0 to x=Lx with potential coupling -ik V psi.

    ``g`` holds nodal profiles, shape (2, Ny) or (n_src, 2, Ny); ``source``
    is an optional nodal forcing of shape (Nx, [n_src,] 2, Ny).  Returns the
    nodal trace at x=Lx and, if requested, the nodal history with Nx+1
    slices (leading axes (n_src, Nx+1) for a batch).
    """
    gen = gen or build_generator(p)
    single, psi = _as_batch(g, gen)
    ns = psi.shape[1]
    vals = np.zeros(p.potential_grid.shape) if V is None else V.values
    vrows = gen.rows(vals)
    c = -1j * p.k * p.dx
    if source is not None:
        src = np.asarray(source, dtype=complex)
        if single:
            src = src[:, None]
        src = np.ascontiguousarray(np.moveaxis(gen.to_state(src), 1, 2))
    else:
        src = np.zeros((0, 0, 0), dtype=complex)
    hist = np.zeros((p.nx + 1, gen.n, ns) if keep_history else (0, 0, 0), dtype=complex)
    if coupling == "explicit":
        bad = _march_kernel(*gen.kernel_args(), vrows, c, psi, src, p.dx, hist)
    elif coupling == "trapezoidal":
        bad = _march_trapezoidal(gen, vrows, c, psi, src, p.dx, hist)
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    if bad >= 0:
        raise MarchError(f"non-finite field at marching step {bad}")
    trace = gen.to_nodes(psi.T)
    history = None
    if keep_history:
        history = gen.to_nodes(np.moveaxis(hist, 2, 0))
        if single:
            history = history[0]
    return (trace[0] if single else trace), history


def _march_trapezoidal(gen, vrows, c, psi, src, dx, hist):
    """CN-averaged potential coupling; refactors once per step."""
    from .numkit import SparseFactorization
    half = 0.5 * c
    nsteps = vrows.shape[0]
    if hist.shape[0]:
        hist[0] = psi
    base = gen.matrix * (0.5 * gen.params.dx)
    eye = sp.identity(gen.n, dtype=complex, format="csc")
    for i in range(nsteps):
        v_now = vrows[i]
        v_next = vrows[min(i + 1, nsteps - 1)]
        lhs = eye - base - sp.diags(half * v_next)
        rhs = (eye + base + sp.diags(half * v_now)) @ psi
        if src.shape[0]:
            rhs = rhs + dx * src[i]
        psi[:] = SparseFactorization(lhs).solve(rhs)
        if not np.all(np.isfinite(psi)):
            return i
        if hist.shape[0]:
            hist[i + 1] = psi
    return -1


def free_propagate(p, g, gen=None):
    """Free evolution T(x)g on every slice, returned as a SpinorField."""
    _, hist = cn_march(p, None, g, keep_history=True, gen=gen)
    grid = Grid2D(p.nx + 1, p.ny, 0.0, p.y_min, p.dx, p.dy)
    return SpinorField(grid, hist[:, 0, :], hist[:, 1, :])


def interpolation_matrix(y_nodes, detector_ys):
    """Sparse linear-interpolation map from nodal values to detectors."""
    from .field import sample_line
    eye = np.eye(len(y_nodes))
    return sp.csr_matrix(sample_line(eye, y_nodes, detector_ys).T)


class ChiralModel:
    """Forward map and Born operators of the chiral model for a set of sources.

    ``profiles`` are nodal initial spinors, shape (n_src, 2, Ny); detectors
    sit on the line x = Lx at ``detector_ys`` (default: the transverse nodes).
    """

    kind = "chiral"

    def __init__(self, params, profiles, detector_ys=None):
        self.params = params
        self.gen = build_generator(params)
        prof = np.asarray(profiles, dtype=complex)
        if prof.ndim == 2:
            prof = prof[None]
        self.profiles = prof
        self.detectors = params.y if detector_ys is None else np.asarray(detector_ys, float)
        self.spacing = (self.detectors[1] - self.detectors[0]
                        if len(self.detectors) > 1 else params.dy)
        self.interp = interpolation_matrix(params.y, self.detectors)
        self.grid = params.potential_grid
        self.call_counts = Counter()

    @property
    def n_sources(self):
        return self.profiles.shape[0]

    @cached_property
    def psi0_history(self):
        _, psi = _as_batch(self.profiles, self.gen)
        hist = np.zeros((self.params.nx + 1, self.gen.n, psi.shape[1]), dtype=complex)
        bad = _march_kernel(*self.gen.kernel_args(), np.zeros((self.params.nx, self.gen.n)),
                            0j, psi, np.zeros((0, 0, 0), dtype=complex), self.params.dx, hist)
        if bad >= 0:
            raise MarchError(f"non-finite incident field at step {bad}")
        return hist

    def _measure(self, state):
        """Interleaved final states (n, n_src) -> MeasurementSet."""
        nodal = self.gen.to_nodes(state.T)                 # (n_src, 2, Ny)
        det = self._interp_apply(nodal)
        return MeasurementSet(det.reshape(det.shape[0], -1), self.detectors, self.spacing)

    def _interp_apply(self, nodal):
        ns = nodal.shape[0]
        flat = nodal.reshape(ns * 2, -1)
        return (self.interp @ flat.T).T.reshape(ns, 2, -1)

    def _check_potential(self, V):
        if V.grid != self.grid:
            raise ValueError("potential is not on the model grid")

    def apply_Km(self, potentials):
        potentials = list(potentials)
        if not potentials:
            raise ValueError("apply_Km needs at least one potential")
        for V in potentials:
            self._check_potential(V)
        m = len(potentials)
        self.call_counts[m] += 1
        # level 0 carries the innermost potential V_m
        vlev = np.ascontiguousarray(np.stack([self.gen.rows(V.values)
                                              for V in reversed(potentials)]))
        states = np.zeros((m, self.gen.n, self.n_sources), dtype=complex)
        c = -1j * self.params.k * self.params.dx
        _chain_kernel(*self.gen.kernel_args(), vlev, c, self.psi0_history, states)
        return self._measure(states[m - 1])

    def apply_K1(self, V):
        return self.apply_Km([V])

    def apply_K1_adjoint(self, data):
        d = data.data if isinstance(data, MeasurementSet) else np.asarray(data)
        if d.shape != (self.n_sources, 2 * len(self.detectors)):
            raise ValueError(f"data shape {d.shape} does not match "
                             f"{self.n_sources} sources x {2 * len(self.detectors)} values")
        self.call_counts["adjoint"] += 1
        spacing = data.spacing if isinstance(data, MeasurementSet) else self.spacing
        ns = self.n_sources
        e = d.reshape(ns, 2, -1)
        nodal = (self.interp.T @ e.reshape(ns * 2, -1).T).T.reshape(ns, 2, -1)
        z = np.ascontiguousarray(self.gen.to_state(nodal).T) * spacing
        grad = np.zeros((self.params.nx, self.gen.n))
        c = -1j * self.params.k * self.params.dx
        bh = self.gen.adjoint_b()
        f = self.gen.factor
        _adjoint_kernel(f.mult, f.inv_piv, f.sup, *bh, c, self.psi0_history, z, grad)
        vals = self.gen.fold_rows(grad) / self.grid.cell_area
        return Potential(self.grid, vals)

    def scattered(self, V):
        """Nonlinear scattered data psi(Lx) - psi0(Lx) at the detectors."""
        total, _ = cn_march(self.params, V, self.profiles, gen=self.gen)
        free, _ = cn_march(self.params, None, self.profiles, gen=self.gen)
        ns = self.n_sources
        det = self._interp_apply(total - free)
        return MeasurementSet(det.reshape(ns, -1), self.detectors, self.spacing)

    def empty_measurement(self):
        return MeasurementSet(np.zeros((self.n_sources, 2 * len(self.detectors))),
                              self.detectors, self.spacing)
