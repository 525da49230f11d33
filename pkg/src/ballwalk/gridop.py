"""Grid discretization of the ball walk and of its diffusion-limit comparison.

The finite-state chain is defined intrinsically on the grid: from cell i the
walk jumps to cell j inside the radius-h ball with probability proportional
to the Gibbs weight of cell j, normalized over the clipped stencil.  With
uniform cell weights w = dx^d this gives

    t_ij = w g_j / B_i,     B_i = w * sum over the ball of g,    g = e^(-phi/h),

which satisfies detailed balance exactly for pi_i proportional to g_i B_i.
The operator stored here is the symmetrized form

    S_ij = w c_i c_j on the stencil,      c_i = sqrt(g_i / B_i),

assembled directly in this manifestly symmetric shape (never symmetrized
after the fact), so S == S^T entry for entry and the top eigenpair
(1, sqrt(pi)) holds to rounding.  All Gibbs weights are taken relative to
the box minimum of phi, which keeps every exponential representable down to
very small h.

The comparison operator is a Gram-form twisted difference Laplacian,
sum_j L_j^T L_j, whose factors annihilate the discrete Gibbs ground state
by construction; building the Gram form (instead of discretizing the
second-order expression directly) guarantees positive semidefiniteness and
an exact discrete kernel.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse

from . import potentials
from .potentials import Box, PotentialSpec

CELL_CAP = 300_000

WALK_T = "WALK_T"
WALK_P = "WALK_P"
WITTEN0 = "WITTEN0"


class TooManyCells(ValueError):
    pass


class BallTooSmall(ValueError):
    """The jump radius must cover at least 8 cells per axis."""


class ResolutionError(ValueError):
    """Grid too coarse to resolve the well width (need dx <= sqrt(h)/10)."""


class BoundaryMassWarning(UserWarning):
    """Stationary mass within one jump of the boundary is not negligible."""


@dataclass(frozen=True)
class Grid:
    box: Box
    spacing: float
    dims: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    def axes(self) -> list[np.ndarray]:
        return [lo + (np.arange(n) + 0.5) * self.spacing
                for lo, n in zip(self.box.lo, self.dims)]

    def points(self) -> np.ndarray:
        """All cell centers, shape (n_cells, d), C-order flattening."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def coordinate(self, cell) -> np.ndarray:
        return (np.asarray(self.box.lo, float)
                + (np.asarray(cell, float) + 0.5) * self.spacing)

    def cell_of(self, x) -> tuple[int, ...]:
        x = np.asarray(x, float).reshape(-1)
        idx = np.floor((x - np.asarray(self.box.lo)) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        return tuple(int(v) for v in idx)

    def cells_of(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized cell lookup; returns flat C-order indices."""
        idx = np.floor((pts - np.asarray(self.box.lo)) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.dims, dtype=np.int64) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.dims)


def build_grid(box: Box, dx: float, cell_cap: int = CELL_CAP) -> Grid:
    """Cell-centered uniform grid on the box with spacing dx."""
    if not (dx > 0):
        raise ValueError(f"dx must be positive, got {dx}")
    dims = []
    for lo, hi in zip(box.lo, box.hi):
        n = int(round((hi - lo) / dx))
        if n < 1 or abs(n * dx - (hi - lo)) > 1e-9 * (hi - lo):
            raise ValueError(
                f"box extent {hi - lo} is not commensurate with dx = {dx}")
        dims.append(n)
    total = int(np.prod(dims))
    if total > cell_cap:
        raise TooManyCells(f"grid would have {total} cells (cap {cell_cap})")
    return Grid(box=box, spacing=float(dx), dims=tuple(dims))


@dataclass
class GridOperator:
    """Symmetric operator on grid functions, with its exact distinguished vector.

    ``stationary_sqrt`` is the unit-norm exact eigenvector of the trivial
    eigenvalue: sqrt of the stationary weights for the walk kinds, the
    discrete Gibbs ground state for the Gram-form Laplacian.
    """

    kind: str
    grid: Grid
    h: float
    stationary_sqrt: np.ndarray
    _data: dict = field(repr=False, default_factory=dict)
    _csr_cache: object = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.grid.n_cells

    def matvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, float)
        if self.kind in (WALK_T, WALK_P):
            out = _walk_T_matvec(self._data, self.grid, u)
            return u - out if self.kind == WALK_P else out
        return _witten_matvec(self._data, self.grid, u)

    def to_dense(self) -> np.ndarray:
        a = self.tocsr().toarray()
        return a

    def tocsr(self):
        if self._csr_cache is None:
            if self.kind in (WALK_T, WALK_P):
                s = _walk_T_csr(self._data, self.grid)
                if self.kind == WALK_P:
                    s = (sparse.identity(self.n, format="csr") - s).tocsr()
            else:
                s = _witten_csr(self._data, self.grid)
            s.sort_indices()
            self._csr_cache = s
        return self._csr_cache

    def dump(self, path) -> None:
        write_operator(self.tocsr(), path)


# --- walk assembly -------------------------------------------------------------


def _ball_footprint(dim: int, h: float, dx: float) -> np.ndarray:
    """Boolean stencil of cells with |offset| * dx < h (center included)."""
    k = int(math.ceil(h / dx)) - 1          # strict inequality
    rng = np.arange(-k, k + 1)
    if dim == 1:
        return (np.abs(rng) * dx < h).reshape(-1)
    xx, yy = np.meshgrid(rng, rng, indexing="ij")
    return (np.sqrt(xx * xx + yy * yy) * dx) < h


def assemble_walk(spec: PotentialSpec, grid: Grid, h: float) -> GridOperator:
    """Build the symmetrized transition operator of the discrete ball walk."""
    dx = grid.spacing
    if h < 8.0 * dx:
        raise BallTooSmall(f"h = {h} must be at least 8 dx = {8 * dx}")
    phi = potentials.value(spec, grid.points()).reshape(grid.dims)
    phi_min = float(np.min(phi))
    g = np.exp(-(phi - phi_min) / h)
    foot = _ball_footprint(grid.dimension, h, dx)
    w = dx ** grid.dimension
    ball_sum = _correlate(g, foot)
    big_b = w * ball_sum
    c = np.sqrt(g / big_b)
    pi = g * big_b
    v = np.sqrt(pi)
    v = v / np.linalg.norm(v.ravel())

    # stationary mass within one jump of the boundary
    mass = pi / np.sum(pi)
    edge = int(math.ceil(h / dx))
    border = np.zeros(grid.dims, dtype=bool)
    for axis in range(grid.dimension):
        sl = [slice(None)] * grid.dimension
        sl[axis] = slice(0, edge)
        border[tuple(sl)] = True
        sl[axis] = slice(-edge, None)
        border[tuple(sl)] = True
    boundary_mass = float(np.sum(mass[border]))
    if boundary_mass > 1e-12:
        warnings.warn(
            f"stationary mass {boundary_mass:.3e} within h of the boundary; "
            f"enlarge the box", BoundaryMassWarning)

    data = {"c": c, "foot": foot, "w": w, "g": g, "ball_sum": ball_sum,
            "boundary_mass": boundary_mass}
    return GridOperator(kind=WALK_T, grid=grid, h=float(h),
                        stationary_sqrt=v.ravel(), _data=data)


def to_P(op: GridOperator) -> GridOperator:
    """The generator I - S of the symmetrized walk (shares assembly data)."""
    if op.kind != WALK_T:
        raise ValueError(f"to_P expects a {WALK_T} operator, got {op.kind}")
    return GridOperator(kind=WALK_P, grid=op.grid, h=op.h,
                        stationary_sqrt=op.stationary_sqrt, _data=op._data)


def _correlate(arr: np.ndarray, foot: np.ndarray) -> np.ndarray:
    """Sum of arr over the stencil around each cell, zero outside the box."""
    if arr.ndim == 1:
        k = foot.size // 2
        padded = np.zeros(arr.size + 2 * k)
        padded[k:k + arr.size] = arr
        out = np.zeros_like(arr)
        for off in range(foot.size):
            if foot[off]:
                out += padded[off:off + arr.size]
        return out
    return ndimage.correlate(arr, foot.astype(float), mode="constant", cval=0.0)


def _walk_T_matvec(data, grid: Grid, u: np.ndarray) -> np.ndarray:
    c = data["c"]
    shaped = u.reshape(grid.dims)
    return (data["w"] * c * _correlate(c * shaped, data["foot"])).ravel()


def _walk_T_csr(data, grid: Grid):
    # entries are e_i * e_j with e = sqrt(w) c, so S_ij and S_ji round identically
    e = (math.sqrt(data["w"]) * data["c"]).ravel()
    foot = data["foot"]
    dims = grid.dims
    n = grid.n_cells
    rows, cols, vals = [], [], []
    if grid.dimension == 1:
        k = foot.size // 2
        for off in range(-k, k + 1):
            if not foot[off + k]:
                continue
            lo = max(0, -off)
            hi = min(n, n - off)
            i = np.arange(lo, hi)
            j = i + off
            rows.append(i)
            cols.append(j)
            vals.append(e[i] * e[j])
    else:
        k = foot.shape[0] // 2
        nx, ny = dims
        for di in range(-k, k + 1):
            for dj in range(-k, k + 1):
                if not foot[di + k, dj + k]:
                    continue
                ilo, ihi = max(0, -di), min(nx, nx - di)
                jlo, jhi = max(0, -dj), min(ny, ny - dj)
                ii, jj = np.meshgrid(np.arange(ilo, ihi),
                                     np.arange(jlo, jhi), indexing="ij")
                r = (ii * ny + jj).ravel()
                q = ((ii + di) * ny + (jj + dj)).ravel()
                rows.append(r)
                cols.append(q)
                vals.append(e[r] * e[q])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def stationary_histogram(op: GridOperator) -> np.ndarray:
    """Normalized stationary weights pi_i of the discrete walk (flat)."""
    if op.kind not in (WALK_T, WALK_P):
        raise ValueError("stationary histogram is only defined for walk operators")
    pi = (op._data["g"] * op._data["w"] * op._data["ball_sum"]).ravel()
    return pi / pi.sum()


def stochastic_row_sums(op: GridOperator) -> np.ndarray:
    """Row sums of the underlying stochastic matrix t (all exactly 1)."""
    if op.kind not in (WALK_T, WALK_P):
        raise ValueError("stochastic matrix is only defined for walk operators")
    d = op._data
    return (d["w"] * _correlate(d["g"], d["foot"]) / (d["w"] * d["ball_sum"])).ravel()


# --- twisted-difference Gram Laplacian ----------------------------------------


def assemble_witten(spec: PotentialSpec, grid: Grid, h: float) -> GridOperator:
    """Gram-form twisted difference Laplacian whose kernel is the Gibbs state.

    Each factor acts along one axis on cells that have a forward neighbor:

        (L u)_i = (h/dx) * (u_fwd * e^(dphi/2h) - u * e^(-dphi/2h)),

    dphi the forward difference of phi.  Rows without a forward neighbor
    are omitted (homogeneous truncation).  The vector e^(-(phi-min)/h) is
    an exact null vector of every factor up to rounding.
    """
    dx = grid.spacing
    if dx > math.sqrt(h) / 10.0:
        raise ResolutionError(
            f"dx = {dx} too coarse for h = {h}; need dx <= sqrt(h)/10 = "
            f"{math.sqrt(h) / 10:.4g}")
    phi = potentials.value(spec, grid.points()).reshape(grid.dims)
    phi_min = float(np.min(phi))
    eplus, eminus = [], []
    for axis in range(grid.dimension):
        dphi = np.diff(phi, axis=axis)
        eplus.append(np.exp(dphi / (2.0 * h)))
        eminus.append(np.exp(-dphi / (2.0 * h)))
    # the kernel exponent spans hundreds of units; extended precision keeps
    # the neighbor-to-neighbor rounding of exp below the residual budget
    wide = np.exp(-(phi.ravel() - phi_min).astype(np.longdouble) / np.longdouble(h))
    kernel = (wide / np.sqrt(np.sum(wide * wide))).astype(float)
    data = {"eplus": eplus, "eminus": eminus, "factor": h / dx}
    return GridOperator(kind=WITTEN0, grid=grid, h=float(h),
                        stationary_sqrt=kernel, _data=data)


def _witten_matvec(data, grid: Grid, u: np.ndarray) -> np.ndarray:
    shaped = u.reshape(grid.dims)
    out = np.zeros_like(shaped)
    f = data["factor"]
    for axis in range(grid.dimension):
        ep = data["eplus"][axis]
        em = data["eminus"][axis]
        fwd = _shift_view(shaped, axis)
        lu = f * (fwd * ep - _trim_view(shaped, axis) * em)
        # transpose factor: scatter back onto base and forward cells
        _trim_add(out, axis, -f * em * lu)
        _shift_add(out, axis, f * ep * lu)
    return out.ravel()


def _shift_view(arr, axis):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(1, None)
    return arr[tuple(sl)]


def _trim_view(arr, axis):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(0, -1)
    return arr[tuple(sl)]


def _trim_add(arr, axis, val):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(0, -1)
    arr[tuple(sl)] += val


def _shift_add(arr, axis, val):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(1, None)
    arr[tuple(sl)] += val


def _witten_factors_sparse(data, grid: Grid):
    f = data["factor"]
    n = grid.n_cells
    dims = grid.dims
    factors = []
    for axis in range(grid.dimension):
        ep = data["eplus"][axis].ravel()
        em = data["eminus"][axis].ravel()
        idx = np.arange(n).reshape(dims)
        base = _trim_view(idx, axis).ravel()
        fwd = _shift_view(idx, axis).ravel()
        m = base.size
        rows = np.arange(m)
        lmat = sparse.csr_matrix(
            (np.concatenate([f * ep, -f * em]),
             (np.concatenate([rows, rows]), np.concatenate([fwd, base]))),
            shape=(m, n))
        factors.append(lmat)
    return factors


def _witten_csr(data, grid: Grid):
    total = None
    for lmat in _witten_factors_sparse(data, grid):
        term = (lmat.T @ lmat).tocsr()
        total = term if total is None else (total + term).tocsr()
    return total


# --- binary CSR dump -----------------------------------------------------------

_MAGIC = b"MWOP"
_VERSION = 1


def write_operator(matrix, path) -> None:
    """Dump a CSR matrix: header {magic, version u32, n u64, nnz u64} + arrays."""
    m = matrix.tocsr()
    m.sort_indices()
    n = m.shape[0]
    nnz = m.nnz
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", n))
        fh.write(struct.pack("<Q", nnz))
        fh.write(m.indptr.astype("<u8").tobytes())
        fh.write(m.indices.astype("<u8").tobytes())
        fh.write(m.data.astype("<f8").tobytes())


def read_operator(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        version, = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported version {version}")
        n, = struct.unpack("<Q", fh.read(8))
        nnz, = struct.unpack("<Q", fh.read(8))
        indptr = np.frombuffer(fh.read(8 * (n + 1)), dtype="<u8").astype(np.int64)
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<u8").astype(np.int64)
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8").astype(float)
    return sparse.csr_matrix((data, indices, indptr), shape=(n, n))
