import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from diracscatter.chiral import (ChiralModel, ChiralParams, DiscreteGenerator, MarchError,
                                 cn_march, free_propagate)
from diracscatter.field import Potential, inner
from diracscatter.harness import incident_chiral, phantom_disk

SMALL = ChiralParams(1.0, -2.0, 2.0, 24, 41, 2.0)


def small_model(n_src=3, p=SMALL):
    return ChiralModel(p, incident_chiral(p, n_src, span=1.0))


def bump(p, center=0.0, width=0.08):
    g = np.zeros((2, p.ny), complex)
    g[0] = np.exp(-(p.y - center) ** 2 / width)
    return g


def test_generator_matches_dense_assembly():
    p = ChiralParams(1.0, 0.0, 1.0, 4, 8, 2.0)
    gen = DiscreteGenerator(p)
    m, inv, k = p.ny - 1, 1.0 / p.dy, p.k
    dense = np.zeros((2 * m, 2 * m), complex)
    # psi1 unknowns at nodes 1..m, psi2 at nodes 0..m-1
    for r in range(m):
        dense[r, r] = -1j * k
        dense[m + r, m + r] = 1j * k
        # (psi1)' = ... + (psi2_{j} - psi2_{j-1}) / dy at node j = r + 1
        dense[r, m + r] = -inv
        if r + 1 < m:
            dense[r, m + r + 1] = inv
        # (psi2)' = ... + (psi1_{j+1} - psi1_j) / dy at node j = r
        dense[m + r, r] = inv
        if r - 1 >= 0:
            dense[m + r, r - 1] = -inv
    assert np.array_equal(gen.blocked.toarray(), dense)
    rows, cols = gen.matrix.nonzero()
    assert np.all(np.abs(rows - cols) <= 1)


def test_difference_stencils_exact_on_ramp():
    p = ChiralParams(1.0, 0.0, 2.0, 4, 11, 0.0)
    gen = DiscreteGenerator(p)
    m = p.ny - 1
    ramp = 3.0 * p.y + 1.0
    psi2 = ramp[:-1]
    out = gen.blocked[:m, m:] @ psi2
    # node m has no psi2 neighbour on the right (boundary zero), interior rows are exact
    assert np.allclose(out[:-1], 3.0)
    psi1 = ramp[1:]
    out = gen.blocked[m:, :m] @ psi1
    assert np.allclose(out[1:], 3.0)


def test_generator_is_skew_for_k0_interior():
    # the generator realises alpha d/dy, whose discretisation must be skew-adjoint
    p = ChiralParams(1.0, 0.0, 1.0, 4, 9, 0.0)
    L = DiscreteGenerator(p).blocked.toarray()
    assert np.allclose(L, -L.T)


def test_zero_march():
    trace, hist = cn_march(SMALL, None, np.zeros((2, SMALL.ny)), keep_history=True)
    assert np.all(trace == 0) and np.all(hist == 0)
    hist = free_propagate(SMALL, np.zeros((2, SMALL.ny)))
    assert np.all(hist.comp1 == 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_free_march_norm_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((2, SMALL.ny)) + 1j * rng.standard_normal((2, SMALL.ny))
    g[0, 0] = 0
    g[1, -1] = 0
    _, hist = cn_march(SMALL, None, g, keep_history=True)
    norms = np.sqrt(np.sum(np.abs(hist) ** 2, axis=(1, 2)))
    assert np.all(np.diff(norms) <= 1e-12 * norms[0])


def test_free_transport_along_characteristics():
    p = ChiralParams(1.0, -3.0, 3.0, 400, 1201, 0.0)
    g = np.zeros((2, p.ny), complex)
    b = np.exp(-p.y ** 2 / 0.08)
    # psi1 + psi2 moves towards -y, psi1 - psi2 towards +y
    g[0], g[1] = b, b
    trace, _ = cn_march(p, None, g)
    s = trace[0] + trace[1]
    assert abs(p.y[np.argmax(np.abs(s))] - (-1.0)) <= p.dy
    g[1] = -b
    trace, _ = cn_march(p, None, g)
    d = trace[0] - trace[1]
    assert abs(p.y[np.argmax(np.abs(d))] - 1.0) <= p.dy


def test_batch_and_single_march_agree():
    m = small_model(3)
    V = phantom_disk(SMALL.potential_grid, (0.5, 0.0), 0.3, 0.4)
    batch, _ = cn_march(SMALL, V, m.profiles)
    for s in range(3):
        single, _ = cn_march(SMALL, V, m.profiles[s])
        assert np.array_equal(single, batch[s])


def test_march_error_on_blowup():
    V = Potential(SMALL.potential_grid, np.full(SMALL.potential_grid.shape, 1e300))
    with pytest.raises(MarchError):
        cn_march(SMALL, V, bump(SMALL))


def test_km_rejects_empty_and_foreign_grid():
    m = small_model()
    with pytest.raises(ValueError):
        m.apply_Km([])
    other = Potential.zeros(ChiralParams(1.0, -2.0, 2.0, 12, 41, 2.0).potential_grid)
    with pytest.raises(ValueError):
        m.apply_K1(other)


def test_km_multilinear():
    m = small_model()
    rng = np.random.default_rng(0)
    g = SMALL.potential_grid
    a, b, c = (Potential(g, rng.standard_normal(g.shape)) for _ in range(3))
    lhs = m.apply_Km([a, 2 * b + c, a]).data
    rhs = 2 * m.apply_Km([a, b, a]).data + m.apply_Km([a, c, a]).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))
    assert np.all(m.apply_Km([a, Potential.zeros(g)]).data == 0)
    assert np.allclose(m.apply_K1(3 * a).data, 3 * m.apply_K1(a).data, rtol=1e-13, atol=0)
    assert np.array_equal(m.apply_K1(a).data, m.apply_Km([a]).data)


def test_call_counts():
    m = small_model()
    V = Potential.zeros(SMALL.potential_grid)
    m.apply_K1(V)
    m.apply_Km([V, V])
    m.apply_K1_adjoint(m.empty_measurement())
    assert m.call_counts == {1: 1, 2: 1, "adjoint": 1}


@pytest.mark.parametrize("seed", range(5))
def test_adjoint_dot_product(seed):
    m = small_model(4)
    rng = np.random.default_rng(seed)
    g = SMALL.potential_grid
    V = Potential(g, rng.standard_normal(g.shape))
    Kv = m.apply_K1(V)
    d = Kv.with_data(rng.standard_normal(Kv.data.shape) + 1j * rng.standard_normal(Kv.data.shape))
    a, b = inner(Kv, d), inner(V, m.apply_K1_adjoint(d))
    assert abs(a - b) <= 1e-10 * abs(a)


def test_adjoint_with_offgrid_detectors():
    dets = np.linspace(-1.83, 1.91, 17)
    m = ChiralModel(SMALL, incident_chiral(SMALL, 2, span=1.0), detector_ys=dets)
    rng = np.random.default_rng(9)
    g = SMALL.potential_grid
    V = Potential(g, rng.standard_normal(g.shape))
    Kv = m.apply_K1(V)
    d = Kv.with_data(rng.standard_normal(Kv.data.shape) + 0j)
    assert abs(inner(Kv, d) - inner(V, m.apply_K1_adjoint(d))) <= 1e-10 * abs(inner(Kv, d))
    assert np.all(m.apply_K1_adjoint(0 * d).values == 0)


def test_born_series_converges_to_march():
    p = ChiralParams(2.0, -4.0, 4.0, 100, 201, 2.0)
    m = ChiralModel(p, incident_chiral(p, 4, span=1.0))
    V = phantom_disk(p.potential_grid, (1.0, 0.0), 0.4, 0.1)
    full = m.scattered(V).data
    acc = np.zeros_like(full)
    errs = []
    for M in range(1, 6):
        acc = acc + m.apply_Km([V] * M).data
        errs.append(np.max(np.abs(acc - full)) / np.max(np.abs(full)))
    assert all(e2 < 0.2 * e1 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-6


def test_km_bounded_by_mu_power():
    # |K_m(V,..,V)|_Y <= (k Lx |V|_inf)^m |g|_Y per source
    p = ChiralParams(1.0, -3.0, 3.0, 60, 121, 1.0)
    m = ChiralModel(p, incident_chiral(p, 2, span=1.0))
    rng = np.random.default_rng(2)
    V = Potential(p.potential_grid, rng.uniform(-1, 1, p.potential_grid.shape))
    V = V * (1.0 / V.sup_norm)
    nu = np.sqrt(np.sum(np.abs(m.profiles) ** 2, axis=(1, 2)) * p.dy)
    for order in (1, 2, 3):
        d = m.apply_Km([V] * order).data
        y_norm = np.sqrt(np.sum(np.abs(d) ** 2, axis=1) * p.dy)
        assert np.all(y_norm <= (p.k * p.lx) ** order * nu)


def richardson_order(values):
    a, b, c = values
    return np.log2(np.linalg.norm(a - b) / np.linalg.norm(b - c))


def test_cn_second_order_without_potential():
    traces = []
    for nx in (40, 80, 160):
        p = ChiralParams(1.0, -4.0, 4.0, nx, 401, 2.0)
        traces.append(cn_march(p, None, bump(p, width=0.5))[0])
    assert richardson_order(traces) >= 1.9


def test_cn_first_order_with_potential():
    traces = []
    for nx in (40, 80, 160):
        p = ChiralParams(1.0, -4.0, 4.0, nx, 401, 2.0)
        x, y = p.potential_grid.mesh()
        V = Potential(p.potential_grid, 0.5 * np.exp(-((x - 0.5) ** 2 + y ** 2) / 0.2))
        traces.append(cn_march(p, V, bump(p, width=0.5))[0])
    assert richardson_order(traces) >= 1.0


def test_trapezoidal_coupling_option():
    p = ChiralParams(1.0, -2.0, 2.0, 20, 41, 2.0)
    x, y = p.potential_grid.mesh()
    V = Potential(p.potential_grid, 0.3 * np.exp(-((x - 0.5) ** 2 + y ** 2)))
    a, _ = cn_march(p, V, bump(p), coupling="trapezoidal")
    b, _ = cn_march(p, V, bump(p))
    assert np.linalg.norm(a - b) < 0.1 * np.linalg.norm(b)
    with pytest.raises(ValueError):
        cn_march(p, V, bump(p), coupling="midpoint")


def test_source_term_matches_km():
    # K_1 V equals the march of zero data forced by -ik V psi0
    m = small_model(1)
    rng = np.random.default_rng(4)
    g = SMALL.potential_grid
    V = Potential(g, rng.standard_normal(g.shape))
    psi0 = free_propagate(SMALL, m.profiles[0])
    nodal = np.stack([psi0.comp1[:-1], psi0.comp2[:-1]], axis=1)
    src = -1j * SMALL.k * V.values[:, None, :] * nodal
    trace, _ = cn_march(SMALL, None, np.zeros((2, SMALL.ny)), source=src)
    assert np.allclose(trace.reshape(-1), m.apply_K1(V).data[0], atol=1e-13)
