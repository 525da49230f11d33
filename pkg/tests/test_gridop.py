import numpy as np
import pytest

import oracles
from ballwalk import gridop, potentials
from ballwalk.gridop import (BallTooSmall, BoundaryMassWarning,
                             ResolutionError, TooManyCells, build_grid)
from ballwalk.potentials import Box


def test_build_grid_dims(box1d):
    g = build_grid(box1d, 0.001)
    assert g.dims == (4000,)
    g2 = build_grid(Box.from_pairs([(-2, 2), (-2, 2)]), 0.02)
    assert g2.dims == (200, 200)


def test_build_grid_rejects_bad_dx(box1d):
    with pytest.raises(ValueError):
        build_grid(box1d, 0.0)
    with pytest.raises(ValueError):
        build_grid(box1d, -0.1)


def test_build_grid_cell_cap():
    with pytest.raises(TooManyCells):
        build_grid(Box.from_pairs([(-2, 2), (-2, 2)]), 0.001)


def test_grid_roundtrip(box1d):
    g = build_grid(box1d, 0.001)
    for i in (0, 17, 3999):
        x = g.coordinate([i])
        assert g.cell_of(x) == (i,)
    pts = g.points()
    assert pts.shape == (4000, 1)
    assert np.array_equal(g.cells_of(pts), np.arange(4000))


def test_ball_too_small(dwt, box1d):
    g = build_grid(box1d, 0.01)
    with pytest.raises(BallTooSmall):
        gridop.assemble_walk(dwt, g, 0.05)


def test_walk_exact_eigenpair(dwt, box1d):
    g = build_grid(box1d, 0.005)
    op = gridop.assemble_walk(dwt, g, 0.1)
    v = op.stationary_sqrt
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.norm(op.matvec(v) - v) <= 1e-13


def test_walk_row_sums_exact(dwt, box1d):
    g = build_grid(box1d, 0.005)
    op = gridop.assemble_walk(dwt, g, 0.1)
    rows = gridop.stochastic_row_sums(op)
    assert np.max(np.abs(rows - 1.0)) <= 1e-14


def test_walk_symmetry_bitwise(dwt, box1d):
    g = build_grid(box1d, 0.01)
    op = gridop.assemble_walk(dwt, g, 0.1)
    s = op.tocsr()
    diff = (s - s.T).tocoo()
    assert diff.nnz == 0


def test_walk_detailed_balance(dwt, box1d):
    g = build_grid(box1d, 0.01)
    op = gridop.assemble_walk(dwt, g, 0.12)
    pi = gridop.stationary_histogram(op)
    s = op.tocsr()
    # t_ij = S_ij sqrt(pi_j / pi_i); flux pi_i t_ij must be symmetric
    t = s.multiply(1.0 / np.sqrt(pi)[:, None]).multiply(np.sqrt(pi)[None, :])
    flux = t.multiply(pi[:, None])
    diff = (flux - flux.T).tocoo()
    # reconstruction of t from S reintroduces ~1 ulp of rounding
    asym = 0.0 if diff.nnz == 0 else np.max(np.abs(diff.data))
    assert asym <= 1e-15 * flux.max()


def test_walk_constant_potential_uniform_rows():
    const = potentials.polynomial([((0,), 2.0)])
    g = build_grid(Box.from_pairs([(-1, 1)]), 0.01)
    op = gridop.assemble_walk(const, g, 0.1)
    s = op.tocsr().toarray()
    # interior rows of the stochastic matrix are uniform over the stencil
    interior = s[100]
    nz = interior[interior > 0]
    assert np.allclose(nz, nz[0])
    # doubly stochastic on the interior
    assert np.sum(interior) == pytest.approx(1.0, abs=1e-12)


def test_walk_matvec_matches_csr(dwt, box1d):
    g = build_grid(box1d, 0.005)
    op = gridop.assemble_walk(dwt, g, 0.1)
    s = op.tocsr()
    rng = np.random.default_rng(3)
    for _ in range(5):
        u = rng.standard_normal(g.n_cells)
        assert np.max(np.abs(op.matvec(u) - s @ u)) < 1e-13


def test_walk_2d_matvec_matches_csr(three_well, box2d):
    g = build_grid(box2d, 0.06)
    op = gridop.assemble_walk(three_well, g, 0.5)
    s = op.tocsr()
    rng = np.random.default_rng(4)
    u = rng.standard_normal(g.n_cells)
    assert np.max(np.abs(op.matvec(u) - s @ u)) < 1e-12
    diff = (s - s.T).tocoo()
    assert diff.nnz == 0


def test_to_P(dwt, box1d):
    g = build_grid(box1d, 0.005)
    top = gridop.assemble_walk(dwt, g, 0.1)
    p = gridop.to_P(top)
    v = p.stationary_sqrt
    assert np.linalg.norm(p.matvec(v)) <= 1e-13
    rng = np.random.default_rng(8)
    for _ in range(100):
        u = rng.standard_normal(g.n_cells)
        u /= np.linalg.norm(u)
        assert u @ p.matvec(u) >= -1e-12
    with pytest.raises(ValueError):
        gridop.to_P(p)


def test_P_spectrum_range(dwt, box1d):
    g = build_grid(box1d, 0.02)
    p = gridop.to_P(gridop.assemble_walk(dwt, g, 0.2))
    vals = np.linalg.eigvalsh(p.to_dense())
    assert vals[-1] <= 2.0 + 1e-12
    assert vals[0] >= -1e-12


def test_boundary_mass_warning():
    # a box so tight that Gibbs mass leaks to the edge
    spec = potentials.builtin("single_well")
    g = build_grid(Box.from_pairs([(-1, 1)]), 0.01)
    with pytest.warns(BoundaryMassWarning):
        gridop.assemble_walk(spec, g, 0.3)


def test_witten_resolution_guard(dwt, box1d):
    g = build_grid(box1d, 0.01)
    with pytest.raises(ResolutionError):
        gridop.assemble_witten(dwt, g, 0.005)


def test_witten_exact_kernel(dwt, box1d):
    g = build_grid(box1d, 0.002)
    op = gridop.assemble_witten(dwt, g, 0.1)
    k = op.stationary_sqrt
    assert np.linalg.norm(op.matvec(k)) <= 1e-12


def test_witten_psd_and_symmetric(dwt, box1d):
    g = build_grid(box1d, 0.01)
    op = gridop.assemble_witten(dwt, g, 0.1)
    s = op.tocsr()
    diff = (s - s.T).tocoo()
    assert diff.nnz == 0 or np.max(np.abs(diff.data)) < 1e-12
    rng = np.random.default_rng(5)
    for _ in range(50):
        u = rng.standard_normal(g.n_cells)
        assert u @ op.matvec(u) >= -1e-12 * (u @ u)


def test_witten_harmonic_spectrum():
    # phi = x^2/2: spectrum {0, 2h, 4h, ...}
    ho = potentials.polynomial([((2,), 0.5)])
    g = build_grid(Box.from_pairs([(-3, 3)]), 0.001)
    h = 0.1
    op = gridop.assemble_witten(ho, g, h)
    vals = oracles.dense_lowest_eigs(op.to_dense(), 4)
    assert abs(vals[0]) < 1e-10
    for n, v in enumerate(vals[1:], start=1):
        assert v == pytest.approx(2 * n * h, rel=0.02)


def test_witten_matvec_matches_csr(dwt, box1d):
    g = build_grid(box1d, 0.005)
    op = gridop.assemble_witten(dwt, g, 0.1)
    s = op.tocsr()
    rng = np.random.default_rng(6)
    u = rng.standard_normal(g.n_cells)
    assert np.max(np.abs(op.matvec(u) - s @ u)) < 1e-10 * np.abs(s).max()


def test_refinement_convergence(dwt, box1d):
    # halving dx from the benchmark resolution moves the smallest nonzero
    # eigenvalue by < 2% (the 4000-cell half goes through Lanczos)
    from ballwalk import eigen

    vals = []
    for dx in (0.002, 0.001):
        g = build_grid(box1d, dx)
        p = gridop.to_P(gridop.assemble_walk(dwt, g, 0.1))
        res = eigen.smallest_eigs(p, count=2, tol=1e-12)
        vals.append(res.eigenvalues[1])
    assert abs(vals[1] - vals[0]) / vals[1] < 0.02


def test_sparsity_budget(dwt, box1d):
    g = build_grid(box1d, 0.005)
    op = gridop.assemble_walk(dwt, g, 0.1)
    s = op.tocsr()
    ball_cells = int(np.sum(op._data["foot"]))
    per_row = np.diff(s.indptr)
    assert np.max(per_row) <= ball_cells + 1


def test_operator_dump_roundtrip(tmp_path, dwt, box1d):
    g = build_grid(box1d, 0.02)
    op = gridop.assemble_walk(dwt, g, 0.2)
    path = tmp_path / "op.mwop"
    op.dump(path)
    loaded = gridop.read_operator(path)
    orig = op.tocsr()
    assert loaded.shape == orig.shape
    assert np.array_equal(loaded.indptr, orig.indptr)
    assert np.array_equal(loaded.indices, orig.indices)
    assert np.array_equal(loaded.data, orig.data)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"MWOP"


def test_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.mwop"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ValueError):
        gridop.read_operator(path)
