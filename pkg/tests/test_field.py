import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diracscatter.field import (Grid2D, MeasurementSet, Potential, SpinorField, inner, l2_norm,
                                read_grid_csv, relative_error, sample_line, write_grid_csv)

GRID = Grid2D(6, 5, 0.0, -1.0, 0.25, 0.5)


def rand_potential(seed, grid=GRID):
    return Potential(grid, np.random.default_rng(seed).standard_normal(grid.shape))


def test_grid_coordinates_from_indices():
    assert GRID.x[3] == 0.0 + 3 * 0.25 and GRID.y[4] == -1.0 + 4 * 0.5
    g = Grid2D.cell_centered(4, 2.0)
    assert np.allclose(g.x, [0.25, 0.75, 1.25, 1.75])
    with pytest.raises(ValueError):
        Grid2D(0, 3, 0, 0, 1, 1)


def test_potential_validation():
    with pytest.raises(ValueError):
        Potential(GRID, np.zeros((5, 6)))
    bad = np.zeros(GRID.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        Potential(GRID, bad)
    v = rand_potential(0)
    assert v.sup_norm == np.max(np.abs(v.values))


def test_l2_norm_examples():
    assert l2_norm(Potential.zeros(GRID)) == 0.0
    unit = Grid2D(4, 4, 0, 0, 0.5, 0.5)
    assert abs(l2_norm(Potential(unit, np.ones((4, 4)))) - 2.0) < 1e-15
    one = Grid2D(2, 2, 0, 0, 0.5, 0.5)
    assert abs(l2_norm(Potential(one, np.ones((2, 2)))) - 1.0) < 1e-15
    v = rand_potential(3)
    naive = 0.0
    for a in v.values.ravel():
        naive += a * a * GRID.cell_area
    assert abs(l2_norm(v) - naive ** 0.5) < 1e-14


def test_measurement_norm_weights_spacing():
    m = MeasurementSet(np.ones((2, 6)), np.arange(3.0), 0.25)
    assert abs(l2_norm(m) - np.sqrt(12 * 0.25)) < 1e-15
    with pytest.raises(ValueError):
        MeasurementSet(np.ones((2, 5)), np.arange(3.0), 0.25)


def test_relative_error_examples():
    v = rand_potential(1)
    assert relative_error(v, v) == 0.0
    assert abs(relative_error(Potential.zeros(GRID), v) - 1.0) < 1e-15
    assert abs(relative_error(2 * v, v) - 1.0) < 1e-15
    with pytest.raises(ZeroDivisionError):
        relative_error(v, Potential.zeros(GRID))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_relative_error_scale_invariant(seed, a):
    v, w = rand_potential(seed), rand_potential(seed + 1)
    assert abs(relative_error(a * v, a * w) - relative_error(v, w)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_triangle_inequality(seed):
    a, b = rand_potential(seed), rand_potential(seed + 7)
    assert l2_norm(a + b) <= l2_norm(a) + l2_norm(b) + 1e-12


def test_inner_matches_norm():
    v = rand_potential(4)
    assert abs(inner(v, v) - l2_norm(v) ** 2) < 1e-12
    f = SpinorField(GRID, np.ones(GRID.shape) * 1j, np.ones(GRID.shape))
    assert abs(inner(f, f) - l2_norm(f) ** 2) < 1e-12


def test_sample_line_rules():
    y = np.linspace(0.0, 1.0, 11)
    vals = np.sin(y) + 1j * y
    assert sample_line(vals, y, [y[3]])[0] == vals[3]
    mid = sample_line(vals, y, [0.5 * (y[3] + y[4])])[0]
    assert abs(mid - 0.5 * (vals[3] + vals[4])) < 1e-15
    with pytest.raises(ValueError):
        sample_line(vals, y, [1.2])


def test_sample_line_second_order():
    errs = []
    for n in (51, 101, 201):
        y = np.linspace(-2, 2, n)
        d = np.linspace(-1.9, 1.9, 37)
        errs.append(np.max(np.abs(sample_line(np.exp(-y ** 2), y, d) - np.exp(-d ** 2))))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_sample_line_linear(seed):
    rng = np.random.default_rng(seed)
    y = np.linspace(0, 1, 9)
    d = rng.uniform(0, 1, 5)
    a, b = rng.standard_normal(9), rng.standard_normal(9)
    lhs = sample_line(2 * a - 3 * b, y, d)
    assert np.allclose(lhs, 2 * sample_line(a, y, d) - 3 * sample_line(b, y, d), atol=1e-13)


def test_csv_roundtrip(tmp_path):
    v = rand_potential(2).values / 3.0
    write_grid_csv(tmp_path / "v.csv", GRID, v)
    text = (tmp_path / "v.csv").read_text().splitlines()
    assert text[0] == "# 6,5,0.0,-1.0,0.25,0.5"
    g, back = read_grid_csv(tmp_path / "v.csv")
    assert g == GRID and np.array_equal(back, v)
    z = v + 1j * v[::-1]
    write_grid_csv(tmp_path / "z.csv", GRID, z)
    _, zb = read_grid_csv(tmp_path / "z.csv")
    assert np.array_equal(zb, z)
    with pytest.raises(ValueError):
        write_grid_csv(tmp_path / "bad.csv", GRID, v.T)
