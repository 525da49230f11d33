import numpy as np
import pytest

import oracles
from ballwalk import eigen, gridop, landscape, potentials
from ballwalk.eigen import (AmbiguousCluster, EmptySupport, NoConvergence,
                            classify_spectrum, smallest_eigs)
from ballwalk.potentials import Box


def test_dense_walk_spectrum(dwt_walk_P):
    res = smallest_eigs(dwt_walk_P, count=6)
    assert res.solver == "DENSE"
    assert res.eigenvalues[0] <= 1e-12
    assert res.eigenvalues == tuple(sorted(res.eigenvalues))
    for lam, r in zip(res.eigenvalues, res.residual_norms):
        assert r <= res.tol * (1.0 + abs(lam))


def test_kernel_always_deflated(dwt, box1d):
    g = gridop.build_grid(box1d, 0.01)
    p = gridop.to_P(gridop.assemble_walk(dwt, g, 0.15))
    res = smallest_eigs(p, count=3)
    assert res.eigenvalues[0] <= 1e-12


def test_exponentially_small_cluster(dwt_walk_P):
    # two eigenvalues below e^{-c/h} (c = 1 < 2 S_2), third at the O(h) scale
    res = smallest_eigs(dwt_walk_P, count=5)
    h = dwt_walk_P.h
    assert res.eigenvalues[1] < np.exp(-1.0 / h)
    assert res.eigenvalues[2] > 0.1 * h


def test_lanczos_matches_dense(dwt, box1d):
    g = gridop.build_grid(box1d, 0.0016)   # 2500 cells
    p = gridop.to_P(gridop.assemble_walk(dwt, g, 0.1))
    dense = smallest_eigs(p, count=5)
    lanc = smallest_eigs(p, count=5, dense_cutoff=0, tol=1e-11)
    assert lanc.solver == "LANCZOS"
    for a, b in zip(dense.eigenvalues, lanc.eigenvalues):
        assert abs(a - b) <= 1e-10
    for lam, r in zip(lanc.eigenvalues, lanc.residual_norms):
        assert r <= lanc.tol * (1.0 + abs(lam))


def test_lanczos_deflation_orthogonality(dwt, box1d):
    g = gridop.build_grid(box1d, 0.002)
    p = gridop.to_P(gridop.assemble_walk(dwt, g, 0.1))
    res = smallest_eigs(p, count=4, dense_cutoff=0)
    v0 = p.stationary_sqrt
    # returned vectors beyond the kernel itself stay orthogonal to it
    for j in range(1, len(res.eigenvalues)):
        assert abs(res.vectors[:, j] @ v0) <= 1e-10


def test_lanczos_witten(dwt, box1d):
    g = gridop.build_grid(box1d, 0.002)
    w = gridop.assemble_witten(dwt, g, 0.1)
    dense = smallest_eigs(w, count=4)
    lanc = smallest_eigs(w, count=4, dense_cutoff=0, tol=1e-10, max_iter=40000)
    for a, b in zip(dense.eigenvalues, lanc.eigenvalues):
        assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_ritz_values_decrease_across_restarts(dwt, box1d):
    g = gridop.build_grid(box1d, 0.002)
    w = gridop.assemble_witten(dwt, g, 0.1)
    lows = []
    for budget in (70, 140, 260):
        try:
            res = smallest_eigs(w, count=6, dense_cutoff=0, tol=1e-13,
                                max_iter=budget)
        except NoConvergence as err:
            res = err.partial
        lows.append(res.eigenvalues[1])
    for a, b in zip(lows, lows[1:]):
        assert b <= a + 1e-10


def test_no_convergence_carries_partial(dwt, box1d):
    g = gridop.build_grid(box1d, 0.002)
    w = gridop.assemble_witten(dwt, g, 0.1)
    with pytest.raises(NoConvergence) as err:
        smallest_eigs(w, count=6, dense_cutoff=0, tol=1e-13, max_iter=40)
    assert err.value.partial is not None
    assert len(err.value.partial.eigenvalues) >= 1


def test_count_validation(dwt_walk_P):
    with pytest.raises(ValueError):
        smallest_eigs(dwt_walk_P, count=21)
    t = gridop.assemble_walk(
        potentials.builtin("double_well_tilted"),
        gridop.build_grid(Box.from_pairs([(-2, 2)]), 0.01), 0.1)
    with pytest.raises(ValueError):
        smallest_eigs(t, count=3)   # WALK_T is not a generator


def test_power_iteration_cross_check(dwt, box1d):
    g = gridop.build_grid(box1d, 0.002)
    top = gridop.assemble_walk(dwt, g, 0.1)
    p = gridop.to_P(top)
    res = smallest_eigs(p, count=3)
    lam2_T = eigen.power_second_eigenvalue(top, iters=500000)
    assert abs((1.0 - res.eigenvalues[1]) - lam2_T) <= 1e-8


# --- classification ------------------------------------------------------------


def test_classify_single_well(box1d):
    spec = potentials.builtin("single_well")
    g = gridop.build_grid(box1d, 0.002)
    p = gridop.to_P(gridop.assemble_walk(spec, g, 0.1))
    res = smallest_eigs(p, count=4)
    rep = classify_spectrum(res, h=0.1, n0_expected=1)
    assert rep.n_small == 1
    assert rep.matches_expected


def test_classify_double_well(dwt_walk_P):
    res = smallest_eigs(dwt_walk_P, count=6)
    rep = classify_spectrum(res, h=0.1, n0_expected=2)
    assert rep.n_small == 2
    assert rep.matches_expected
    assert rep.split_ratio >= 1e3
    assert rep.cluster_threshold < 0.1 * 0.1
    assert rep.next_eigenvalue == res.eigenvalues[2]


def test_classify_ambiguous():
    # no split below 0.1 h reaches the required ratio
    fake = eigen.SpectralResult(
        eigenvalues=(0.009, 0.011, 0.013, 0.02), residual_norms=(0.0,) * 4,
        solver="DENSE", iterations=0, tol=1e-12)
    with pytest.raises(AmbiguousCluster):
        classify_spectrum(fake, h=0.1)


def test_classified_result_carries_fields(dwt_walk_P):
    res = smallest_eigs(dwt_walk_P, count=5)
    rep = classify_spectrum(res, h=0.1, n0_expected=2)
    res2 = res.classified(rep)
    assert res2.n_small == 2
    assert res2.next_eigenvalue == rep.next_eigenvalue


# --- quasimodes ----------------------------------------------------------------


def test_quasimode_single_well(box1d):
    spec = potentials.builtin("single_well")
    lab = landscape.label_potential(spec, box1d, dx=2e-3)
    g = gridop.build_grid(box1d, 2e-3)
    q = eigen.build_quasimodes(g, spec, lab, h=0.1)
    w = gridop.assemble_witten(spec, g, 0.1)
    overlap = abs(q.vectors[:, 0] @ w.stationary_sqrt)
    assert overlap >= 1.0 - 1e-10


def test_quasimode_gram_decay(dwt, box1d, dwt_labeling):
    g = gridop.build_grid(box1d, 2e-3)
    offs = []
    for h in (0.15, 0.1, 0.07):
        q = eigen.build_quasimodes(g, dwt, dwt_labeling, h=h)
        assert q.gram.shape == (2, 2)
        assert np.allclose(np.diag(q.gram), 1.0, atol=1e-13)
        offs.append(abs(q.gram[0, 1]))
    # off-diagonal decays log-linearly in 1/h
    assert offs[0] > offs[1] > offs[2]
    x = np.array([1 / 0.15, 1 / 0.1, 1 / 0.07])
    y = np.log(offs)
    slope = np.polyfit(x, y, 1)[0]
    fit = np.polyval(np.polyfit(x, y, 1), x)
    assert slope < 0
    assert np.max(np.abs(fit - y)) < 0.4


def test_quasimode_gram_off_diagonal_O_h(dwt, box1d, dwt_labeling):
    g = gridop.build_grid(box1d, 2e-3)
    for h in (0.15, 0.1, 0.07):
        q = eigen.build_quasimodes(g, dwt, dwt_labeling, h=h)
        assert abs(q.gram[0, 1]) <= h


def test_quasimode_span_matches_eigenspace(dwt, box1d, dwt_labeling):
    g = gridop.build_grid(box1d, 2e-3)
    h = 0.1
    w = gridop.assemble_witten(dwt, g, h)
    res = smallest_eigs(w, count=4)
    q = eigen.build_quasimodes(g, dwt, dwt_labeling, h=h)
    cos = eigen.subspace_alignment(q, res.vectors[:, :2])
    assert cos >= 1.0 - 5.0 * h


def test_quasimode_normalization_vs_stationary_phase(dwt, box1d, dwt_labeling):
    g = gridop.build_grid(box1d, 1e-3)
    h = 0.05
    q = eigen.build_quasimodes(g, dwt, dwt_labeling, h=h)
    for col, (k, m, s, S) in enumerate(dwt_labeling.pairs):
        b_disc = 1.0 / (q.raw_norms[col] * np.sqrt(g.spacing))
        b_phase = (np.pi * h) ** -0.25 * m.hessian_det ** 0.25
        assert abs(b_disc - b_phase) / b_phase <= 2.0 * h


def test_quasimode_empty_support(dwt, box1d, dwt_labeling):
    g = gridop.build_grid(box1d, 2e-3)
    with pytest.raises(EmptySupport):
        eigen.build_quasimodes(g, dwt, dwt_labeling, h=0.1, epsilon=2.0)
