"""Low-lying spectra of the grid operators, cluster detection, quasimodes.

The exponentially small eigenvalues are computed from the generator
(where they sit at the bottom and are resolvable in absolute precision),
never from the transition operator near 1 where they would drown in
rounding.  Small problems go through a dense symmetric eigensolver; large
ones through Lanczos with full reorthogonalization, deflation of the exact
kernel vector, and thick restarts.  Full reorthogonalization is not
optional here: the spectrum splits into clusters separated by ten or more
orders of magnitude, and selective schemes lose the tiny cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import potentials
from .gridop import WALK_P, WITTEN0, Grid, GridOperator
from .landscape import LandscapeLabeling

DENSE_CUTOFF = 3000
EIG_FLOOR = 100 * np.finfo(float).eps


class NoConvergence(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class LossOfOrthogonality(RuntimeError):
    pass


class AmbiguousCluster(RuntimeError):
    """No admissible spectral split below the 0.1 h cap."""


class EmptySupport(RuntimeError):
    """A quasimode cutoff vanished everywhere (epsilon too large)."""


@dataclass(frozen=True)
class SpectralResult:
    eigenvalues: tuple[float, ...]          # ascending, of the generator
    residual_norms: tuple[float, ...]
    solver: str                             # "DENSE" | "LANCZOS"
    iterations: int
    tol: float                              # effective residual tolerance
    n_small: int | None = None
    cluster_threshold: float | None = None
    next_eigenvalue: float | None = None
    vectors: np.ndarray | None = None       # columns, aligned with eigenvalues

    def classified(self, report: "ClusterReport") -> "SpectralResult":
        return replace(self, n_small=report.n_small,
                       cluster_threshold=report.cluster_threshold,
                       next_eigenvalue=report.next_eigenvalue)


@dataclass(frozen=True)
class ClusterReport:
    n_small: int
    cluster_threshold: float
    next_eigenvalue: float
    split_ratio: float
    matches_expected: bool | None
    remainder_over_h: float                 # next_eigenvalue / h


@dataclass(frozen=True)
class QuasimodeSet:
    vectors: np.ndarray                     # (n_cells, n0), unit columns
    epsilon: float
    gram: np.ndarray                        # vectors^T vectors
    raw_norms: tuple[float, ...]            # l2 norms before normalization


# --- solvers -------------------------------------------------------------------


def smallest_eigs(op: GridOperator, count: int, tol: float = 1e-11,
                  max_iter: int = 20000, dense_cutoff: int = DENSE_CUTOFF,
                  seed: int = 20177) -> SpectralResult:
    """Lowest eigenvalues of a WALK_P or WITTEN0 operator.

    Dense path for small grids (full spectrum, lowest ``count`` reported);
    deflated thick-restart Lanczos otherwise.  Residual norms are always
    computed explicitly on the returned Ritz pairs.
    """
    if op.kind not in (WALK_P, WITTEN0):
        raise ValueError(f"spectrum of kind {op.kind} is not supported")
    if count > 20:
        raise ValueError("count must be at most 20")
    n = op.n
    if count >= n:
        raise ValueError("count must be smaller than the matrix size")
    if n <= dense_cutoff:
        return _dense_path(op, count)
    return _lanczos_path(op, count, tol, max_iter, seed)


def _dense_path(op: GridOperator, count: int) -> SpectralResult:
    a = op.to_dense()
    vals, vecs = np.linalg.eigh(a)
    norm_a = float(max(abs(vals[0]), abs(vals[-1])))
    idx = np.arange(count)
    v = vecs[:, idx]
    lam = vals[idx]
    res = np.linalg.norm(a @ v - v * lam[None, :], axis=0)
    eff_tol = 50.0 * op.n * np.finfo(float).eps * max(norm_a, 1.0)
    return SpectralResult(
        eigenvalues=tuple(float(x) for x in lam),
        residual_norms=tuple(float(r) for r in res),
        solver="DENSE", iterations=0, tol=eff_tol, vectors=v)


def _start_vector(n: int, seed: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=seed))
    return gen.standard_normal(n)


def _lanczos_path(op: GridOperator, count: int, tol: float, max_iter: int,
                  seed: int) -> SpectralResult:
    n = op.n
    deflate = op.stationary_sqrt / np.linalg.norm(op.stationary_sqrt)
    m_max = min(n - 1, max(60, 4 * count + 24))
    keep = min(m_max - 8, 2 * count + 8)

    basis = np.empty((m_max + 1, n))
    hmat = np.zeros((m_max + 1, m_max + 1))

    def orthogonalize(w, k):
        # two passes of classical Gram-Schmidt against the kernel and basis
        coeffs = np.zeros(k)
        for _ in range(2):
            w -= (deflate @ w) * deflate
            if k:
                c = basis[:k] @ w
                w -= basis[:k].T @ c
                coeffs += c
        return w, coeffs

    r = _start_vector(n, seed)
    r, _ = orthogonalize(r, 0)
    r /= np.linalg.norm(r)
    basis[0] = r
    k = 1                 # current basis size
    matvecs = 0
    restarts = 0
    breakdown_retries = 0

    while True:
        w = op.matvec(basis[k - 1])
        matvecs += 1
        w, coeffs = orthogonalize(w, k)
        hmat[:k, k - 1] = coeffs
        beta = np.linalg.norm(w)

        hk = hmat[:k, :k]
        hk = 0.5 * (hk + hk.T)
        theta, s = np.linalg.eigh(hk)
        res_est = np.abs(beta * s[k - 1, :])

        want = min(count - 1, k)   # kernel pair is prepended afterwards
        done = k >= want and np.all(
            res_est[:want] <= tol * (1.0 + np.abs(theta[:want])))
        if done or matvecs >= max_iter:
            ritz = basis[:k].T @ s[:, :want]
            lam = theta[:want]
            # exact kernel pair first
            kernel_val = float(deflate @ op.matvec(deflate))
            matvecs += 1
            vecs = np.column_stack([deflate, ritz])
            vals = np.concatenate([[kernel_val], lam])
            res = np.empty(vals.size)
            for i in range(vals.size):
                res[i] = np.linalg.norm(op.matvec(vecs[:, i]) - vals[i] * vecs[:, i])
            matvecs += vals.size
            order = np.argsort(vals)
            result = SpectralResult(
                eigenvalues=tuple(float(vals[i]) for i in order),
                residual_norms=tuple(float(res[i]) for i in order),
                solver="LANCZOS", iterations=matvecs, tol=tol,
                vectors=vecs[:, order])
            if not done:
                raise NoConvergence(
                    f"lanczos did not converge in {max_iter} matvecs "
                    f"(worst residual estimate {res_est[:want].max():.3e})",
                    partial=result)
            return result

        coupling = beta
        if beta <= 1e-13 * max(1.0, np.abs(theta).max(initial=1.0)):
            # invariant subspace hit: continue in a fresh random direction,
            # which carries no coupling to the previous Lanczos vector
            breakdown_retries += 1
            if breakdown_retries > 5:
                raise LossOfOrthogonality(
                    "repeated breakdowns while expanding the Krylov basis")
            w = _start_vector(n, seed + 13 * breakdown_retries)
            w, _ = orthogonalize(w, k)
            beta = np.linalg.norm(w)
            coupling = 0.0

        if k == m_max:
            # thick restart: keep the lowest Ritz vectors plus the residual
            ritz = basis[:k].T @ s[:, :keep]
            basis[:keep] = ritz.T
            hmat[:, :] = 0.0
            hmat[:keep, :keep] = np.diag(theta[:keep])
            arrow = coupling * s[k - 1, :keep]
            hmat[keep, :keep] = arrow
            hmat[:keep, keep] = arrow
            basis[keep] = w / beta
            k = keep + 1
            restarts += 1
            continue

        basis[k] = w / beta
        hmat[k, k - 1] = coupling
        hmat[k - 1, k] = coupling
        k += 1


# --- cluster classification ----------------------------------------------------


def classify_spectrum(res: SpectralResult, h: float,
                      n0_expected: int | None = None,
                      ratio_min: float = 1e3, cap: float = 0.1) -> ClusterReport:
    """Locate the split between the exponentially small cluster and the rest.

    Among all consecutive splits whose geometric-midpoint threshold lies
    below cap*h and whose eigenvalue ratio (with the lower value clamped at
    the solver floor) is at least ratio_min, the one with the largest
    threshold wins; everything below it counts as the small cluster.
    """
    lam = np.asarray(res.eigenvalues, float)
    if lam.size < 2:
        raise ValueError("need at least two eigenvalues to classify")
    best = None
    for i in range(lam.size - 1):
        lo = max(lam[i], EIG_FLOOR)
        hi = lam[i + 1]
        if hi <= 0:
            continue
        thresh = math.sqrt(lo * hi)
        ratio = hi / lo
        if thresh < cap * h and ratio >= ratio_min:
            if best is None or thresh > best[1]:
                best = (i + 1, thresh, ratio)
    if best is None:
        raise AmbiguousCluster(
            f"no spectral split with ratio >= {ratio_min:g} below {cap:g}*h; "
            f"eigenvalues {lam.tolist()}")
    n_small, thresh, ratio = best
    nxt = float(lam[n_small])
    return ClusterReport(
        n_small=n_small,
        cluster_threshold=float(thresh),
        next_eigenvalue=nxt,
        split_ratio=float(ratio),
        matches_expected=None if n0_expected is None else (n_small == n0_expected),
        remainder_over_h=nxt / h,
    )


# --- quasimodes ----------------------------------------------------------------


def default_cutoff_margin(labeling: LandscapeLabeling) -> float:
    """Half of one tenth of the smallest distance between critical points."""
    pts = [np.asarray(m.location) for m in labeling.minima]
    pts += [np.asarray(s.location) for s in labeling.saddles if s is not None]
    pts += [np.asarray(s.location) for s in labeling.non_separating]
    if len(pts) < 2:
        return 0.1
    dmin = min(np.linalg.norm(a - b)
               for i, a in enumerate(pts) for b in pts[i + 1:])
    return float(dmin / 20.0)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def build_quasimodes(grid: Grid, spec, labeling: LandscapeLabeling, h: float,
                     epsilon: float | None = None,
                     collar_divisor: float = 4.0) -> QuasimodeSet:
    """Cutoff Gibbs states attached to each well.

    For the global well the cutoff is identically one.  For k >= 2 the
    cutoff is the indicator of (component of {phi < phi(s_k) - eps}
    containing m_k) minus the eps-ball around s_k, mollified by a
    piecewise-cubic ramp over a collar of width eps/collar_divisor.
    Normalization is by the discrete norm, not the stationary-phase formula.
    """
    if epsilon is None:
        epsilon = default_cutoff_margin(labeling)
    phi = potentials.value(spec, grid.points()).reshape(grid.dims)
    structure = ndimage.generate_binary_structure(grid.dimension, 1)
    cols = []
    raw_norms = []
    for (k, m, s, S) in labeling.pairs:
        phi_m = m.value
        if s is None:
            chi = np.ones(grid.dims)
        else:
            level = s.value - epsilon
            mask = phi < level
            labels, _ = ndimage.label(mask, structure=structure)
            mcell = grid.cell_of(m.location)
            comp = labels[mcell]
            if comp == 0:
                raise EmptySupport(
                    f"minimum of pair {k} is not below the cutoff level; "
                    f"epsilon = {epsilon} too large")
            inside = labels == comp
            # excise the epsilon-ball around the paired saddle
            pts = grid.points()
            d2 = np.sum((pts - np.asarray(s.location)) ** 2, axis=1)
            inside &= (d2 > epsilon * epsilon).reshape(grid.dims)
            if not np.any(inside):
                raise EmptySupport(f"cutoff of pair {k} vanished everywhere")
            dist = ndimage.distance_transform_edt(~inside) * grid.spacing
            chi = _smoothstep(1.0 - dist * collar_divisor / epsilon)
        vec = (chi * np.exp(-(phi - phi_m) / h)).ravel()
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise EmptySupport(f"quasimode of pair {k} vanished everywhere")
        cols.append(vec / norm)
        raw_norms.append(norm)
    vectors = np.column_stack(cols)
    gram = vectors.T @ vectors
    return QuasimodeSet(vectors=vectors, epsilon=float(epsilon), gram=gram,
                        raw_norms=tuple(raw_norms))


def subspace_alignment(quasi: QuasimodeSet, eigvecs: np.ndarray) -> float:
    """Smallest principal-angle cosine between quasimode span and eigenspace."""
    qq, _ = np.linalg.qr(quasi.vectors)
    ee, _ = np.linalg.qr(eigvecs)
    sv = np.linalg.svd(qq.T @ ee, compute_uv=False)
    return float(sv.min())


def power_second_eigenvalue(op: GridOperator, iters: int = 2000,
                            seed: int = 4242) -> float:
    """Power-iteration estimate of the second eigenvalue of the walk operator.

    Deflates the known top eigenpair (1, stationary_sqrt) and iterates; used
    as an independent cross-check of 1 - lambda_2(P).
    """
    v0 = op.stationary_sqrt / np.linalg.norm(op.stationary_sqrt)
    x = _start_vector(op.n, seed)
    x -= (v0 @ x) * v0
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = op.matvec(x)
        y -= (v0 @ y) * v0
        lam_new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0:
            break
        x = y / ny
        if abs(lam_new - lam) <= 1e-13 * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return lam
