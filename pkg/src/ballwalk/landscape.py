"""Landscape analysis: critical points, sublevel-set persistence, labeling.

A merge event of 0-dimensional sublevel-set persistence (union-find over
grid cells processed in increasing value order, elder rule) is exactly a
separating saddle of the landscape: the two components that touch there
were, just below the merge value, different connected components of the
sublevel set.  The labeling pairs each non-global minimum with the saddle
at which its component dies, and the barrier heights S_k are read off the
Newton-refined critical values, not the raw grid samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import potentials
from .potentials import Box, PotentialSpec

NEWTON_TOLERANCE = 1e-12


class NonMorseCritical(RuntimeError):
    """A detected critical point has a near-zero Hessian eigenvalue."""


class AmbiguousMatch(RuntimeError):
    """A persistence event cell matches zero or several critical points.

    Fatal: refine the landscape grid or adjust match_radius.
    """


class BoundaryMergeError(RuntimeError):
    """A merge event sits on the box boundary; the box is too small."""


@dataclass(frozen=True)
class CriticalPoint:
    location: tuple[float, ...]
    value: float
    index: int                      # number of negative Hessian eigenvalues
    hessian_eigs: tuple[float, ...]  # sorted ascending
    hessian_det: float

    def as_array(self) -> np.ndarray:
        return np.asarray(self.location, float)


@dataclass(frozen=True)
class MergeEvent:
    birth_cell: tuple[int, ...]
    birth_value: float
    merge_cell: tuple[int, ...]
    merge_value: float

    @property
    def persistence(self) -> float:
        return self.merge_value - self.birth_value


@dataclass(frozen=True)
class PersistencePairing:
    """Merge events of the sublevel-set sweep, plus the surviving component."""

    events: tuple[MergeEvent, ...]        # sorted by decreasing persistence
    survivor_cell: tuple[int, ...]        # birth cell of the global component
    survivor_value: float
    cell_component: np.ndarray            # per-cell id of first-joined component
    component_births: tuple[tuple[int, ...], ...]  # component id -> birth cell
    shape: tuple[int, ...]


@dataclass(frozen=True)
class LandscapeLabeling:
    """Paired minima and separating saddles with Arrhenius numbers.

    ``pairs[k-1] = (k, minimum, saddle_or_None, S_k)`` with the global
    minimum first (saddle None, S infinite) and S strictly decreasing
    afterwards.  ``component_ids`` maps each grid cell to the 1-based pair
    index of the basin it first joined during the sweep; cells processed
    after their component died carry the surviving ancestor's index.
    """

    minima: tuple[CriticalPoint, ...]
    saddles: tuple              # entry per pair: None for the fictive infinite one
    pairs: tuple                # (k, CriticalPoint, CriticalPoint | None, S_k)
    component_ids: np.ndarray   # grid-shaped int array of pair indices
    n0: int
    n1: int
    non_separating: tuple[CriticalPoint, ...] = ()
    warnings: tuple[str, ...] = ()
    sweep_components: np.ndarray | None = None   # raw elder-rule assignment

    @property
    def arrhenius(self) -> tuple[float, ...]:
        return tuple(p[3] for p in self.pairs)


# --- critical points ---------------------------------------------------------


def find_critical_points(spec: PotentialSpec, box: Box,
                         coarse_spacing: float = 0.05,
                         newton_tolerance: float = NEWTON_TOLERANCE,
                         morse_tolerance: float = potentials.MORSE_TOLERANCE,
                         max_newton_iter: int = 60):
    """Locate and classify all critical points inside the box.

    Newton iterations are seeded from every coarse-grid cell whose discrete
    gradient norm is a local minimum; converged points are deduplicated and
    classified by Hessian inertia.  Returns (points, diagnostics) where
    diagnostics lists the seeds whose iteration left the box or failed.
    """
    d = spec.dimension
    axes = [np.arange(lo + coarse_spacing / 2, hi, coarse_spacing)
            for lo, hi in zip(box.lo, box.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    g = potentials.gradient(spec, pts)
    gn = np.sqrt(np.sum(g * g, axis=1)).reshape([len(a) for a in axes])

    seeds = []
    local_min = np.ones_like(gn, dtype=bool)
    for axis in range(d):
        lower = np.roll(gn, 1, axis=axis)
        upper = np.roll(gn, -1, axis=axis)
        # roll wraps; disable the comparison on the wrapped border
        sl_lo = [slice(None)] * d
        sl_lo[axis] = slice(0, 1)
        sl_hi = [slice(None)] * d
        sl_hi[axis] = slice(-1, None)
        lower[tuple(sl_lo)] = np.inf
        upper[tuple(sl_hi)] = np.inf
        local_min &= (gn <= lower) & (gn <= upper)
    seeds = pts.reshape(gn.shape + (d,))[local_min]

    found = []
    failures = []
    for seed in seeds:
        x = seed.copy()
        ok = False
        for _ in range(max_newton_iter):
            gx = potentials.gradient(spec, x)
            if np.linalg.norm(gx) <= newton_tolerance:
                ok = True
                break
            hx = potentials.hessian(spec, x)
            try:
                step = np.linalg.solve(hx, -gx)
            except np.linalg.LinAlgError:
                break
            # damp absurd steps so seeds near inflection lines don't explode
            norm = np.linalg.norm(step)
            if norm > 0.5:
                step = step * (0.5 / norm)
            x = x + step
            if not box.contains(x):
                break
        if not ok or not box.contains(x):
            failures.append(tuple(float(v) for v in seed))
            continue
        if any(np.linalg.norm(x - p) <= 10 * newton_tolerance for p in found):
            continue
        found.append(x)

    points = []
    for x in found:
        h = potentials.hessian(spec, x)
        eigs = np.linalg.eigvalsh(np.atleast_2d(h))
        if np.min(np.abs(eigs)) <= morse_tolerance:
            raise NonMorseCritical(
                f"critical point at {tuple(x)} has Hessian eigenvalue "
                f"{eigs[np.argmin(np.abs(eigs))]:.3e}")
        points.append(CriticalPoint(
            location=tuple(float(v) for v in x),
            value=float(potentials.value(spec, x)),
            index=int(np.sum(eigs < 0)),
            hessian_eigs=tuple(float(e) for e in np.sort(eigs)),
            hessian_det=float(np.prod(eigs)),
        ))
    points.sort(key=lambda p: (p.index, p.value, p.location))
    return points, failures


# --- persistence sweep -------------------------------------------------------


class _UnionFind:
    __slots__ = ("parent",)

    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, i):
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union_into(self, child_root, parent_root):
        self.parent[child_root] = parent_root


def persistence_sweep(values: np.ndarray) -> PersistencePairing:
    """Union-find sweep of grid values in increasing order (elder rule).

    ``values`` is a grid-shaped array; adjacency is axis-neighborhood.  A
    component is born at each local-minimum cell; when two components first
    touch, the younger (higher birth value, ties by cell index) dies and a
    merge event records the connecting cell and the max of the two touching
    cells' values.
    """
    values = np.asarray(values, float)
    if not np.all(np.isfinite(values)):
        raise ValueError("grid values must be finite")
    shape = values.shape
    flat = values.ravel()
    n = flat.size
    order = np.lexsort((np.arange(n), flat))  # value asc, index asc on ties
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    strides = []
    s = 1
    for size in reversed(shape):
        strides.append(s)
        s *= size
    strides = list(reversed(strides))

    uf = _UnionFind(n)
    birth_cell = np.full(n, -1, dtype=np.int64)    # root -> birth flat index
    component_of = np.full(n, -1, dtype=np.int64)  # cell -> component id (birth cell)
    processed = np.zeros(n, dtype=bool)
    events = []

    idx_nd = np.unravel_index(np.arange(n), shape)
    coords = np.stack(idx_nd, axis=1)

    for flat_i in order:
        ci = coords[flat_i]
        neighbor_roots = {}
        for axis, stride in enumerate(strides):
            for delta in (-1, 1):
                cj = ci[axis] + delta
                if cj < 0 or cj >= shape[axis]:
                    continue
                nb = flat_i + delta * stride
                if not processed[nb]:
                    continue
                r = uf.find(nb)
                prev = neighbor_roots.get(r)
                # remember, per neighboring component, the touching neighbor
                if prev is None or rank[nb] < rank[prev]:
                    neighbor_roots[r] = nb
        processed[flat_i] = True
        if not neighbor_roots:
            birth_cell[flat_i] = flat_i
            component_of[flat_i] = flat_i
            continue
        roots = sorted(neighbor_roots,
                       key=lambda r: (flat[birth_cell[r]], birth_cell[r]))
        elder = roots[0]
        component_of[flat_i] = birth_cell[elder]
        uf.union_into(flat_i, elder)
        for r in roots[1:]:
            nb = neighbor_roots[r]
            merge_value = max(float(flat[flat_i]), float(flat[nb]))
            events.append(MergeEvent(
                birth_cell=tuple(int(v) for v in coords[birth_cell[r]]),
                birth_value=float(flat[birth_cell[r]]),
                merge_cell=tuple(int(v) for v in ci),
                merge_value=merge_value,
            ))
            uf.union_into(r, elder)

    survivor = uf.find(order[-1])
    events.sort(key=lambda e: (-e.persistence, e.birth_cell))
    comp_ids = component_of.reshape(shape)
    births = tuple(tuple(int(v) for v in coords[b])
                   for b in np.unique(component_of))
    return PersistencePairing(
        events=tuple(events),
        survivor_cell=tuple(int(v) for v in coords[birth_cell[survivor]]),
        survivor_value=float(flat[birth_cell[survivor]]),
        cell_component=comp_ids,
        component_births=births,
        shape=shape,
    )


# --- labeling ----------------------------------------------------------------


def _cell_center(box: Box, shape, cell) -> np.ndarray:
    ext = box.extent
    spacing = ext / np.asarray(shape, float)
    return np.asarray(box.lo, float) + (np.asarray(cell, float) + 0.5) * spacing


def label_landscape(critical, pairing: PersistencePairing, box: Box,
                    match_radius: float,
                    min_persistence: float = 0.0,
                    values: np.ndarray | None = None) -> LandscapeLabeling:
    """Assemble the pairs (m_k, s_k, S_k) from critical points and merge events.

    Every retained merge cell must match exactly one index-1 critical point
    within ``match_radius``, and every birth cell exactly one minimum;
    anything else is fatal (AmbiguousMatch), instructing grid refinement.
    Events with persistence below ``min_persistence`` are discarded as
    discretization artifacts, with a warning.  S_k comes from the refined
    critical values; pairs are relabeled so S is decreasing.

    When the grid values are supplied, ``component_ids`` holds the
    merge-level well partition: each cell gets the deepest component (at
    that pair's merge level) containing it, and cells above every merge
    level go to the nearest minimum.  Without values it falls back to the
    raw elder-rule assignment of the sweep.
    """
    shape = pairing.shape
    minima = [c for c in critical if c.index == 0]
    saddles1 = [c for c in critical if c.index == 1]
    warn_list = []

    def match_one(cell, cands, what):
        x = _cell_center(box, shape, cell)
        hits = [c for c in cands
                if np.linalg.norm(x - c.as_array()) <= match_radius]
        if len(hits) != 1:
            raise AmbiguousMatch(
                f"{what} cell at {tuple(round(v, 6) for v in x)} matches "
                f"{len(hits)} critical points within radius {match_radius}; "
                f"refine the landscape grid")
        return hits[0]

    kept_events = []
    dropped_components = {}
    for ev in pairing.events:
        if ev.persistence < min_persistence:
            warn_list.append(
                f"discarded merge event with persistence {ev.persistence:.3e} "
                f"below the discretization floor {min_persistence:.3e}")
            dropped_components[ev.birth_cell] = ev
            continue
        if any(c == 0 or c == s - 1 for c, s in zip(ev.merge_cell, shape)):
            raise BoundaryMergeError(
                f"merge event at boundary cell {ev.merge_cell}; "
                f"the box is too small for this landscape")
        kept_events.append(ev)

    survivor_min = match_one(pairing.survivor_cell, minima, "survivor birth")
    used_saddles = []
    raw_pairs = []
    for ev in kept_events:
        m = match_one(ev.birth_cell, minima, "birth")
        s = match_one(ev.merge_cell, saddles1, "merge")
        raw_pairs.append((m, s, s.value - m.value))
        used_saddles.append(s)

    expected = len(minima) - 1
    if len(raw_pairs) != expected:
        raise AmbiguousMatch(
            f"{len(raw_pairs)} merge events for {len(minima)} minima; "
            f"expected {expected}")

    raw_pairs.sort(key=lambda t: -t[2])
    pairs = [(1, survivor_min, None, math.inf)]
    for j, (m, s, S) in enumerate(raw_pairs, start=2):
        pairs.append((j, m, s, S))

    # map persistence component ids (birth cells) to final pair indices
    birth_to_k = {pairing.survivor_cell: 1}
    for k, m, s, S in pairs[1:]:
        # find the event whose refined minimum matched m
        for ev in kept_events:
            bm = match_one(ev.birth_cell, minima, "birth")
            if bm is m:
                birth_to_k[ev.birth_cell] = k
                break

    flat_ids = pairing.cell_component.ravel()
    comp_k = np.zeros(flat_ids.size, dtype=np.int32)
    births_flat = {}
    for cell in pairing.component_births:
        flat = int(np.ravel_multi_index(cell, shape))
        births_flat[flat] = cell
    # components dropped as artifacts inherit the id of the component they
    # merged into, resolved transitively through the kept merge tree
    def resolve(cell):
        seen = set()
        while cell not in birth_to_k:
            if cell in seen:
                return 1
            seen.add(cell)
            ev = dropped_components.get(cell)
            if ev is None:
                return 1
            cell = _merge_parent(pairing, ev)
        return birth_to_k[cell]

    cache = {}
    for flat, cell in births_flat.items():
        cache[flat] = resolve(cell)
    for flat, k in cache.items():
        comp_k[flat_ids == flat] = k
    sweep_components = comp_k.reshape(shape)

    if values is not None:
        component_ids = _merge_level_partition(values, box, pairs)
    else:
        component_ids = sweep_components

    non_sep = tuple(s for s in saddles1 if s not in used_saddles)
    n1 = len(saddles1)
    return LandscapeLabeling(
        minima=tuple(p[1] for p in pairs),
        saddles=tuple(p[2] for p in pairs),
        pairs=tuple(pairs),
        component_ids=component_ids,
        n0=len(minima),
        n1=n1,
        non_separating=non_sep,
        warnings=tuple(warn_list),
        sweep_components=sweep_components,
    )


def _merge_level_partition(values: np.ndarray, box: Box, pairs) -> np.ndarray:
    """Well partition: deepest merge-level component, ties to nearest minimum.

    The global well's core is the component of m_1 at the highest finite
    merge level; each E_k (k >= 2) is filled at its own merge level, deeper
    components overwriting the enclosing ones; every remaining cell (above
    all merge levels) goes to the nearest minimum.
    """
    shape = values.shape
    structure = ndimage.generate_binary_structure(values.ndim, 1)
    ext = box.extent
    spacing = ext / np.asarray(shape, float)

    def cell_of(point):
        idx = np.floor((np.asarray(point) - np.asarray(box.lo)) / spacing)
        return tuple(int(v) for v in np.clip(idx, 0, np.asarray(shape) - 1))

    # the grid undershoots the refined saddle value by up to |mu| dx^2/8 at
    # the saddle cell; flooding strictly below sigma - |mu| dx^2 keeps that
    # cell out so the two valleys stay disconnected
    dx2 = float(np.max(spacing)) ** 2

    def flood_level(s):
        mu = max(abs(e) for e in s.hessian_eigs)
        return s.value - max(1e-12, mu * dx2)

    well = np.zeros(shape, dtype=np.int32)
    finite = [(k, m, s) for (k, m, s, S) in pairs if s is not None]
    if finite:
        top = max(finite, key=lambda t: t[2].value)[2]
        lab, _ = ndimage.label(values < flood_level(top), structure=structure)
        m1 = pairs[0][1]
        comp = lab[cell_of(m1.location)]
        if comp:
            well[lab == comp] = 1
        for k, m, s in sorted(finite):
            lab, _ = ndimage.label(values < flood_level(s), structure=structure)
            comp = lab[cell_of(m.location)]
            if comp:
                well[lab == comp] = k

    leftovers = well == 0
    if np.any(leftovers):
        mins = np.array([m.location for (_, m, _, _) in pairs])
        mesh = np.meshgrid(*[box.lo[j] + (np.arange(shape[j]) + 0.5) * spacing[j]
                             for j in range(values.ndim)], indexing="ij")
        pts = np.stack([m[leftovers] for m in mesh], axis=1)
        d2 = ((pts[:, None, :] - mins[None, :, :]) ** 2).sum(axis=2)
        well[leftovers] = np.argmin(d2, axis=1).astype(np.int32) + 1
    return well


def _merge_parent(pairing: PersistencePairing, ev: MergeEvent):
    """Birth cell of the component that absorbed the one dying at ``ev``."""
    flat_merge = int(np.ravel_multi_index(ev.merge_cell, pairing.shape))
    parent = pairing.cell_component.ravel()[flat_merge]
    parent_cell = tuple(int(v) for v in
                        np.unravel_index(int(parent), pairing.shape))
    return parent_cell


def label_potential(spec: PotentialSpec, box: Box, dx: float,
                    coarse_spacing: float = 0.05,
                    newton_tolerance: float = NEWTON_TOLERANCE,
                    match_radius: float | None = None,
                    cell_cap: int = 40_000_000) -> LandscapeLabeling:
    """End-to-end labeling of a potential on a box at grid resolution dx."""
    shape = tuple(int(round((hi - lo) / dx)) for lo, hi in zip(box.lo, box.hi))
    if int(np.prod(shape)) > cell_cap:
        raise ValueError(f"landscape grid {shape} exceeds cell cap {cell_cap}")
    axes = [lo + (np.arange(n) + 0.5) * ((hi - lo) / n)
            for (lo, hi), n in zip(zip(box.lo, box.hi), shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = potentials.value(spec, pts).reshape(shape)

    critical, failures = find_critical_points(
        spec, box, coarse_spacing=coarse_spacing,
        newton_tolerance=newton_tolerance)
    pairing = persistence_sweep(vals)
    lip = potentials.max_gradient_norm(spec, box, n_per_axis=200)
    if match_radius is None:
        match_radius = max(5 * dx, 0.05)
    labeling = label_landscape(critical, pairing, box, match_radius,
                               min_persistence=10 * dx * lip, values=vals)
    if failures:
        labeling = LandscapeLabeling(
            minima=labeling.minima, saddles=labeling.saddles,
            pairs=labeling.pairs, component_ids=labeling.component_ids,
            n0=labeling.n0, n1=labeling.n1,
            non_separating=labeling.non_separating,
            warnings=labeling.warnings + tuple(
                f"newton seed at {f} did not converge" for f in failures),
        )
    return labeling
