"""Grids, spinor fields, potentials and measurement sets shared by both models."""

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid2D:
    """Uniform node grid. Node (i, j) sits at (x0 + i*dx, y0 + j*dy)."""
    nx: int
    ny: int
    x0: float
    y0: float
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ValueError("grid sizes must be positive")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacings must be positive")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def x(self):
        return self.x0 + np.arange(self.nx) * self.dx

    @property
    def y(self):
        return self.y0 + np.arange(self.ny) * self.dy

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @classmethod
    def cell_centered(cls, n, length):
        h = length / n
        return cls(n, n, 0.5 * h, 0.5 * h, h, h)


@dataclass
class Potential:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"potential shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential values must be finite")

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def __add__(self, other):
        _same_grid(self, other)
        return Potential(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return Potential(self.grid, self.values - other.values)

    def __mul__(self, a):
        return Potential(self.grid, a * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return Potential(self.grid, -self.values)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))


@dataclass
class SpinorField:
    grid: Grid2D
    comp1: np.ndarray
    comp2: np.ndarray

    def __post_init__(self):
        self.comp1 = np.asarray(self.comp1, dtype=complex)
        self.comp2 = np.asarray(self.comp2, dtype=complex)
        if self.comp1.shape != self.grid.shape or self.comp2.shape != self.grid.shape:
            raise ValueError("spinor component shapes must match the grid")

    def stacked(self):
        return np.stack([self.comp1, self.comp2])


@dataclass
class MeasurementSet:
    """Per-source detector data, component-major: [psi1 at dets, psi2 at dets].

    ``detectors`` holds one coordinate row per detector (1-D positions for
    the chiral line, (x, y) pairs for the anti-chiral boundary).
    """
    data: np.ndarray
    detectors: np.ndarray
    spacing: float
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=complex))
        self.detectors = np.asarray(self.detectors, dtype=float)
        if self.data.shape[1] != 2 * self.n_detectors:
            raise ValueError(
                f"each source needs 2*{self.n_detectors} values, got {self.data.shape[1]}")
        if not self.spacing > 0:
            raise ValueError("detector spacing must be positive")

    @property
    def n_sources(self):
        return self.data.shape[0]

    @property
    def n_detectors(self):
        return self.detectors.shape[0]

    def with_data(self, data):
        return MeasurementSet(data, self.detectors, self.spacing, dict(self.meta))

    def __add__(self, other):
        return self.with_data(self.data + other.data)

    def __sub__(self, other):
        return self.with_data(self.data - other.data)

    def __mul__(self, a):
        return self.with_data(a * self.data)

    __rmul__ = __mul__


def _same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError("operands live on different grids")


def inner(a, b):
    """Real L2 inner product matching :func:`l2_norm`."""
    if isinstance(a, Potential):
        _same_grid(a, b)
        return float(np.sum(a.values * b.values) * a.grid.cell_area)
    if isinstance(a, MeasurementSet):
        return float(np.vdot(a.data, b.data).real * a.spacing)
    if isinstance(a, SpinorField):
        _same_grid(a, b)
        return float((np.vdot(a.comp1, b.comp1) + np.vdot(a.comp2, b.comp2)).real
                     * a.grid.cell_area)
    raise TypeError(f"no inner product for {type(a).__name__}")


def l2_norm(f):
    """Discrete L2 norm: cell-area weighted for fields, spacing weighted for data."""
    if isinstance(f, Potential):
        return float(np.sqrt(np.sum(f.values ** 2) * f.grid.cell_area))
    if isinstance(f, SpinorField):
        s = np.sum(np.abs(f.comp1) ** 2) + np.sum(np.abs(f.comp2) ** 2)
        return float(np.sqrt(s * f.grid.cell_area))
    if isinstance(f, MeasurementSet):
        return float(np.sqrt(np.sum(np.abs(f.data) ** 2) * f.spacing))
    raise TypeError(f"no norm for {type(f).__name__}")


def relative_error(v_rec, v_true):
    _same_grid(v_rec, v_true)
    denom = l2_norm(v_true)
    if denom == 0.0:
        raise ZeroDivisionError("relative error undefined for a zero reference potential")
    return l2_norm(v_rec - v_true) / denom


def sample_line(values, y_nodes, detector_ys):
    """Linearly interpolate nodal values (last axis) at detector coordinates.

    ``values`` has shape (..., len(y_nodes)); returns (..., n_detectors).
    """
    y_nodes = np.asarray(y_nodes, dtype=float)
    d = np.asarray(detector_ys, dtype=float)
    dy = y_nodes[1] - y_nodes[0]
    tol = 1e-12 * max(1.0, abs(y_nodes[-1]), abs(y_nodes[0]))
    if np.any(d < y_nodes[0] - tol) or np.any(d > y_nodes[-1] + tol):
        raise ValueError("detector coordinate outside the sampled line")
    t = (d - y_nodes[0]) / dy
    j = np.clip(np.floor(t).astype(int), 0, len(y_nodes) - 2)
    w = np.clip(t - j, 0.0, 1.0)
    # snap to nodes so on-node detectors reproduce nodal values exactly
    on_node = np.abs(t - np.rint(t)) < 1e-9
    j = np.where(on_node, np.clip(np.rint(t).astype(int), 0, len(y_nodes) - 1), j)
    w = np.where(on_node, 0.0, w)
    jn = np.minimum(j + 1, len(y_nodes) - 1)
    values = np.asarray(values)
    return values[..., j] * (1.0 - w) + values[..., jn] * w


# ---------------------------------------------------------------- CSV I/O

def _fmt(v):
    return repr(float(v))


def write_grid_csv(path, grid, values):
    """Row-major CSV; header ``# nx,ny,x0,y0,dx,dy``; complex as re,im columns."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError("values do not match grid")
    header = "# " + ",".join(_fmt(v) if isinstance(v, float) else str(v)
                             for v in (grid.nx, grid.ny, grid.x0, grid.y0, grid.dx, grid.dy))
    lines = [header]
    cplx = np.iscomplexobj(values)
    for row in values:
        if cplx:
            cells = [c for z in row for c in (_fmt(z.real), _fmt(z.imag))]
        else:
            cells = [_fmt(z) for z in row]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing grid header")
    parts = text[0][1:].split(",")
    grid = Grid2D(int(parts[0]), int(parts[1]), *(float(p) for p in parts[2:6]))
    rows = np.array([[float(c) for c in line.split(",")] for line in text[1:] if line])
    if rows.shape == (grid.nx, grid.ny):
        return grid, rows
    if rows.shape == (grid.nx, 2 * grid.ny):
        return grid, rows[:, 0::2] + 1j * rows[:, 1::2]
    raise ValueError(f"{path}: body shape {rows.shape} does not match header")
