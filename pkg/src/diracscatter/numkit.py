"""Shared numerical kernels: Hankel functions, FFT, CG, GMRES, sparse LU."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numba
import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

EULER_GAMMA = 0.57721566490153286061

# Power series below this argument, Hankel asymptotic expansion above.
# At x=8 the asymptotic series cannot reach 1e-10 (smallest term ~ e^{-2x}).
SERIES_CUTOFF = 12.0
_SERIES_TERMS = 60
_ASYMPTOTIC_TERMS = 40


class DomainError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


@dataclass
class SolverInfo:
    """Convergence report returned next to every iterative solution."""
    converged: bool
    iterations: int
    residual: float
    breakdown: bool = False


@dataclass
class LinearOperatorHandle:
    apply: Callable[[np.ndarray], np.ndarray]
    dim_in: int
    dim_out: int
    adjoint_apply: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.dim_in <= 0 or self.dim_out <= 0:
            raise ValueError("operator dimensions must be positive")

    def __call__(self, x):
        return self.apply(x)

    @classmethod
    def from_matrix(cls, a):
        a = np.asarray(a) if not sp.issparse(a) else a
        return cls(apply=lambda x: a @ x, adjoint_apply=lambda y: a.conj().T @ y,
                   dim_in=a.shape[1], dim_out=a.shape[0])


# ---------------------------------------------------------------- Hankel

def _bessel_series(x):
    """J0, Y0, J1, Y1 from their ascending series (accurate for x < ~12)."""
    q = -0.25 * x * x
    t0 = np.ones_like(x)
    t1 = 0.5 * x
    j0 = t0.copy()
    j1 = t1.copy()
    s0 = np.zeros_like(x)
    s1 = t1.copy()  # k=0 term of the Y1 digamma sum: H_0 + H_1 = 1
    harmonic = 0.0
    for k in range(1, _SERIES_TERMS):
        t0 = t0 * q / (k * k)
        t1 = t1 * q / (k * (k + 1))
        h_k = harmonic + 1.0 / k
        j0 += t0
        j1 += t1
        s0 += h_k * t0
        s1 += (2.0 * h_k + 1.0 / (k + 1)) * t1
        harmonic = h_k
    log_term = np.log(0.5 * x) + EULER_GAMMA
    y0 = (2.0 / np.pi) * (log_term * j0 - s0)
    y1 = -2.0 / (np.pi * x) + (2.0 / np.pi) * log_term * j1 - s1 / np.pi
    return j0, y0, j1, y1


def _hankel_asymptotic(order, x):
    mu = 4.0 * order * order
    total = np.ones(x.shape, dtype=complex)
    term = np.ones(x.shape, dtype=complex)
    stopped = np.zeros(x.shape, dtype=bool)
    for k in range(1, _ASYMPTOTIC_TERMS):
        nxt = term * 1j * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
        # truncate each point at its smallest term
        stopped |= np.abs(nxt) >= np.abs(term)
        term = np.where(stopped, 0.0, nxt)
        total += term
    phase = x - 0.5 * order * np.pi - 0.25 * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * np.exp(1j * phase) * total


def hankel1(order, x):
    """Hankel function of the first kind H_order^(1)(x) for order 0 or 1.

    Vectorized over ``x``; returns a Python complex for scalar input.
    """
    if order not in (0, 1):
        raise DomainError(f"hankel1 supports orders 0 and 1, got {order!r}")
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)) or not np.all(np.isfinite(xa)):
        raise DomainError("hankel1 requires finite x > 0")
    flat = xa.ravel()
    out = np.empty(flat.shape, dtype=complex)
    low = flat < SERIES_CUTOFF
    if low.any():
        j0, y0, j1, y1 = _bessel_series(flat[low])
        out[low] = j0 + 1j * y0 if order == 0 else j1 + 1j * y1
    if (~low).any():
        out[~low] = _hankel_asymptotic(order, flat[~low])
    out = out.reshape(xa.shape)
    return complex(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- FFT

def is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


def next_power_of_two(n):
    return 1 << max(0, int(n - 1).bit_length())


def fft2(a, direction="forward"):
    """Unitary 2-D FFT over the last two axes; sizes must be powers of two."""
    a = np.asarray(a)
    if a.ndim < 2:
        raise ValueError("fft2 needs at least a 2-D array")
    rows, cols = a.shape[-2:]
    if not (is_power_of_two(rows) and is_power_of_two(cols)):
        raise ValueError(f"fft2 dims must be powers of two, got {rows}x{cols}")
    if direction == "forward":
        return scipy.fft.fft2(a, norm="ortho")
    if direction == "inverse":
        return scipy.fft.ifft2(a, norm="ortho")
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------- CG

def _vdot(a, b):
    return np.vdot(a.ravel(), b.ravel())


def cg_hermitian(op, b, tol=1e-8, max_iter=500, inner=None):
    """Conjugate gradients for a Hermitian positive definite operator.

    ``inner(u, v)`` is the inner product in which ``op`` is self-adjoint
    (defaults to the Euclidean one).  Starts from zero.  Returns
    ``(x, SolverInfo)``; non-convergence is logged, not raised.
    """
    inner = inner or _vdot
    apply = op.apply if isinstance(op, LinearOperatorHandle) else op
    b = np.asarray(b)
    x = np.zeros_like(b)
    bnorm = np.sqrt(abs(inner(b, b)))
    if bnorm == 0.0:
        return x, SolverInfo(True, 0, 0.0)
    r = b.copy()
    p = r.copy()
    rr = inner(r, r).real
    it = 0
    rel = 1.0
    while it < max_iter:
        ap = apply(p)
        pap = inner(p, ap).real
        if pap <= 0.0:
            log.warning("cg: non-positive curvature %g at iteration %d", pap, it)
            return x, SolverInfo(False, it, rel, breakdown=True)
        alpha = rr / pap
        x = x + alpha * p
        r = r - alpha * ap
        it += 1
        rr_new = inner(r, r).real
        rel = np.sqrt(rr_new) / bnorm
        if rel <= tol:
            return x, SolverInfo(True, it, rel)
        p = r + (rr_new / rr) * p
        rr = rr_new
    log.warning("cg: no convergence after %d iterations (residual %.3e)", it, rel)
    return x, SolverInfo(False, it, rel)


# ---------------------------------------------------------------- GMRES

def gmres(op, b, tol=1e-10, max_iter=1000, restart=50):
    """Restarted GMRES(restart) with modified Gram-Schmidt and Givens rotations.

    Starts from zero. ``max_iter`` counts inner (Arnoldi) steps.
    Returns ``(x, SolverInfo)``.
    """
    apply = op.apply if isinstance(op, LinearOperatorHandle) else op
    b = np.asarray(b, dtype=complex)
    shape = b.shape
    bv = b.ravel()
    n = bv.size
    x = np.zeros(n, dtype=complex)
    bnorm = np.linalg.norm(bv)
    if bnorm == 0.0:
        return x.reshape(shape), SolverInfo(True, 0, 0.0)
    total = 0
    r = bv.copy()
    rel = 1.0
    while total < max_iter:
        beta = np.linalg.norm(r)
        rel = beta / bnorm
        if rel <= tol:
            return x.reshape(shape), SolverInfo(True, total, rel)
        m = min(restart, max_iter - total)
        basis = np.zeros((m + 1, n), dtype=complex)
        hess = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        basis[0] = r / beta
        breakdown = False
        j_used = 0
        for j in range(m):
            w = np.asarray(apply(basis[j].reshape(shape)), dtype=complex).ravel()
            for i in range(j + 1):
                hess[i, j] = np.vdot(basis[i], w)
                w = w - hess[i, j] * basis[i]
            hnext = np.linalg.norm(w)
            hess[j + 1, j] = hnext
            for i in range(j):
                tmp = np.conj(cs[i]) * hess[i, j] + np.conj(sn[i]) * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = tmp
            denom = np.hypot(abs(hess[j, j]), abs(hess[j + 1, j]))
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = hess[j, j] / denom
                sn[j] = hess[j + 1, j] / denom
            hess[j, j] = np.conj(cs[j]) * hess[j, j] + np.conj(sn[j]) * hess[j + 1, j]
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = np.conj(cs[j]) * g[j]
            j_used = j + 1
            total += 1
            rel = abs(g[j + 1]) / bnorm
            if hnext <= 1e-14 * bnorm:
                breakdown = True
                break
            if rel <= tol:
                break
            basis[j + 1] = w / hnext
        y = _back_substitute(hess[:j_used, :j_used], g[:j_used])
        x = x + basis[:j_used].T @ y
        r = bv - np.asarray(apply(x.reshape(shape)), dtype=complex).ravel()
        rel = np.linalg.norm(r) / bnorm
        if breakdown:
            # invariant subspace reached: the current iterate is the solution
            return x.reshape(shape), SolverInfo(True, total, rel, breakdown=True)
        if rel <= tol:
            return x.reshape(shape), SolverInfo(True, total, rel)
    log.warning("gmres: no convergence after %d iterations (residual %.3e)", total, rel)
    return x.reshape(shape), SolverInfo(False, total, rel)


def _back_substitute(r, g):
    n = len(g)
    y = np.zeros(n, dtype=complex)
    for i in range(n - 1, -1, -1):
        y[i] = (g[i] - r[i, i + 1:] @ y[i + 1:]) / r[i, i]
    return y


# ---------------------------------------------------------------- sparse LU

@numba.njit(cache=True)
def _tridiag_factor(sub, diag, sup):
    n = diag.shape[0]
    mult = np.zeros(n, dtype=np.complex128)
    piv = np.empty(n, dtype=np.complex128)
    piv[0] = diag[0]
    for p in range(1, n):
        mult[p] = sub[p - 1] / piv[p - 1]
        piv[p] = diag[p] - mult[p] * sup[p - 1]
    return mult, piv


@numba.njit(cache=True)
def tridiag_solve_inplace(mult, inv_piv, sup, rhs):
    """Solve with a precomputed tridiagonal LU; ``rhs`` has shape (n, ncols)."""
    n, ncol = rhs.shape
    for p in range(1, n):
        m = mult[p]
        for s in range(ncol):
            rhs[p, s] -= m * rhs[p - 1, s]
    for s in range(ncol):
        rhs[n - 1, s] *= inv_piv[n - 1]
    for p in range(n - 2, -1, -1):
        u = sup[p]
        ip = inv_piv[p]
        for s in range(ncol):
            rhs[p, s] = (rhs[p, s] - u * rhs[p + 1, s]) * ip


@numba.njit(cache=True)
def tridiag_solve_adjoint_inplace(mult, inv_piv, sup, rhs):
    """Solve A^H x = rhs using the LU of A (A = L U, A^H = U^H L^H)."""
    n, ncol = rhs.shape
    for s in range(ncol):
        rhs[0, s] *= np.conj(inv_piv[0])
    for p in range(1, n):
        u = np.conj(sup[p - 1])
        ip = np.conj(inv_piv[p])
        for s in range(ncol):
            rhs[p, s] = (rhs[p, s] - u * rhs[p - 1, s]) * ip
    for p in range(n - 2, -1, -1):
        m = np.conj(mult[p + 1])
        for s in range(ncol):
            rhs[p, s] -= m * rhs[p + 1, s]


class SparseFactorization:
    """LU factors of a fixed square sparse matrix.

    Tridiagonal matrices use an unpivoted banded LU (the Crank-Nicolson
    matrices here have positive definite Hermitian part); anything else
    goes to SuperLU.
    """

    def __init__(self, matrix, pivot_tol=1e-14):
        a = sp.csc_matrix(matrix, dtype=complex)
        if a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValueError(f"sparse_factor needs a square matrix, got {a.shape}")
        self.dim = a.shape[0]
        self._matrix = a
        scale = spla.norm(a, np.inf)
        if scale == 0.0:
            raise SingularMatrixError("zero matrix")
        coo = a.tocoo()
        self.banded = bool(np.all(np.abs(coo.row - coo.col) <= 1)) and self.dim > 1
        if self.banded:
            diag = a.diagonal(0).astype(complex)
            self.sub = a.diagonal(-1).astype(complex)
            self.sup = a.diagonal(1).astype(complex)
            self.mult, piv = _tridiag_factor(self.sub, diag, self.sup)
            if np.min(np.abs(piv)) <= pivot_tol * scale:
                raise SingularMatrixError(
                    f"zero pivot {np.min(np.abs(piv)):.3e} (matrix norm {scale:.3e})")
            self.inv_piv = 1.0 / piv
        else:
            try:
                self._lu = spla.splu(a)
            except RuntimeError as exc:
                raise SingularMatrixError(str(exc)) from exc
            udiag = np.abs(self._lu.U.diagonal())
            if udiag.min() <= pivot_tol * scale:
                raise SingularMatrixError(
                    f"zero pivot {udiag.min():.3e} (matrix norm {scale:.3e})")

    def solve(self, rhs, adjoint=False):
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.dim:
            raise ValueError(f"rhs length {rhs.shape[0]} != matrix dim {self.dim}")
        if self.banded:
            work = np.array(rhs, dtype=complex, order="C")
            vec = work.ndim == 1
            if vec:
                work = work[:, None]
            if adjoint:
                tridiag_solve_adjoint_inplace(self.mult, self.inv_piv, self.sup, work)
            else:
                tridiag_solve_inplace(self.mult, self.inv_piv, self.sup, work)
            return work[:, 0] if vec else work
        return self._lu.solve(np.asarray(rhs, dtype=complex), trans="H" if adjoint else "N")


def sparse_factor(matrix):
    return SparseFactorization(matrix)


def sparse_solve(factorization, rhs, adjoint=False):
    return factorization.solve(rhs, adjoint=adjoint)
