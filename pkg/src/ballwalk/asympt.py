"""Closed-form gap predictions and Arrhenius fits from h-sweeps.

The predicted leading term for the k-th relaxation rate of the walk is

    gap_k(h) = h / ((2d+4) pi) * mu_k * sqrt|det H(m_k) / det H(s_k)| * e^(-2 S_k / h)

with mu_k the magnitude of the single negative Hessian eigenvalue at the
paired saddle and S_k the barrier height.  The diffusion-limit comparison
operator obeys the same law without the (2d+4) factor.  The uncontrolled
(1 + O(h)) correction is not modeled; comparison tolerances absorb it.

Rate fits regress ln(gap/h) on 1/h, i.e. against the model
gap = prefactor * h * e^(slope/h); fitting ln(gap) directly would bias the
slope by the logarithmic derivative of the h prefactor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .landscape import LandscapeLabeling

EIG_FLOOR = 100 * np.finfo(float).eps


class InsufficientPoints(ValueError):
    """Fewer than four admissible sweep points after windowing."""


@dataclass(frozen=True)
class GapPrediction:
    k: int
    S: float
    mu: float                # magnitude of the negative Hessian eigenvalue at s_k
    det_min: float
    det_saddle: float
    dimension: int
    simple_eigenvalue: bool = False   # k = 1: the trivial eigenvalue, gap 0

    def gap(self, h: float) -> float:
        if self.simple_eigenvalue:
            return 0.0
        return self.witten_gap(h) / (2 * self.dimension + 4)

    def witten_gap(self, h: float) -> float:
        if self.simple_eigenvalue:
            return 0.0
        amp = self.mu * math.sqrt(abs(self.det_min / self.det_saddle))
        return h / math.pi * amp * math.exp(-2.0 * self.S / h)


def predict(labeling: LandscapeLabeling, k: int, dimension: int) -> GapPrediction:
    """Prediction data for pair k (k = 1 returns the flagged zero gap)."""
    entry = next((p for p in labeling.pairs if p[0] == k), None)
    if entry is None:
        raise ValueError(f"no pair with index {k} (n0 = {labeling.n0})")
    _, minimum, saddle, S = entry
    if saddle is None:
        return GapPrediction(k=1, S=math.inf, mu=math.nan,
                             det_min=minimum.hessian_det, det_saddle=math.nan,
                             dimension=dimension, simple_eigenvalue=True)
    mu = -saddle.hessian_eigs[0]
    if mu <= 0:
        raise ValueError(f"pair {k} saddle has no negative Hessian eigenvalue")
    return GapPrediction(k=k, S=S, mu=mu, det_min=minimum.hessian_det,
                         det_saddle=saddle.hessian_det, dimension=dimension)


def predict_gap(labeling: LandscapeLabeling, k: int, h: float,
                dimension: int) -> float:
    return predict(labeling, k, dimension).gap(h)


def predict_witten(labeling: LandscapeLabeling, k: int, h: float,
                   dimension: int) -> float:
    return predict(labeling, k, dimension).witten_gap(h)


@dataclass(frozen=True)
class SweepFit:
    h_values: tuple[float, ...]
    measured_gaps: tuple[float, ...]
    slope: float                  # estimates -2 S_k
    slope_stderr: float
    prefactor_estimate: float     # gap ~ prefactor * h * e^(slope/h)
    window: tuple[int, ...]       # indices kept by the windowing rule


def fit_rate(h_values, gaps, residuals=None) -> SweepFit:
    """Least-squares Arrhenius fit over the admissible window.

    Points with gap below 100 machine epsilons, nonpositive gap, or with a
    solver residual exceeding 1 percent of the gap are excluded; at least
    four points must remain.  The prefactor is the geometric mean of
    gap * e^(-slope/h) / h over the window.
    """
    h = np.asarray(h_values, float)
    g = np.asarray(gaps, float)
    if residuals is None:
        residuals = np.zeros_like(g)
    r = np.asarray(residuals, float)
    keep = (g > EIG_FLOOR) & (r <= 0.01 * np.abs(g))
    idx = np.nonzero(keep)[0]
    if idx.size < 4:
        raise InsufficientPoints(
            f"only {idx.size} admissible sweep points (need >= 4)")
    x = 1.0 / h[idx]
    y = np.log(g[idx] / h[idx])
    n = idx.size
    a = np.vstack([x, np.ones(n)]).T
    coef, res_sq, _, _ = np.linalg.lstsq(a, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    fitted = a @ coef
    dof = max(n - 2, 1)
    s2 = float(np.sum((y - fitted) ** 2)) / dof
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    prefactor = float(np.exp(np.mean(np.log(g[idx]) - slope * x - np.log(h[idx]))))
    return SweepFit(
        h_values=tuple(float(v) for v in h),
        measured_gaps=tuple(float(v) for v in g),
        slope=slope,
        slope_stderr=stderr,
        prefactor_estimate=prefactor,
        window=tuple(int(i) for i in idx),
    )


@dataclass(frozen=True)
class ComparisonRow:
    h: float
    k: int
    measured: float
    predicted: float
    ratio: float
    witten_measured: float | None
    witten_ratio: float | None    # witten_measured / measured


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    fit: SweepFit                     # for k = 2
    S_fit: float                      # -slope/2
    S_theory: float
    rel_err: float
    prefactor_ratio: float            # fitted / predicted prefactor
    witten_ratio_median: float | None
    passed: bool
    tolerances: dict


def compare(h_values, measured, labeling: LandscapeLabeling, dimension: int,
            witten_measured=None, residuals=None,
            rate_tolerance: float = 0.05,
            prefactor_band: tuple[float, float] = (0.7, 1.3)) -> ComparisonReport:
    """Measured-vs-predicted table plus the fitted Arrhenius summary.

    ``measured`` maps (or arrays, indexed like h_values) of the k = 2 gap;
    pass per-k dicts {k: [gap per h]} to compare several wells at once.
    """
    h = [float(v) for v in h_values]
    if not isinstance(measured, dict):
        measured = {2: list(measured)}
    if witten_measured is not None and not isinstance(witten_measured, dict):
        witten_measured = {2: list(witten_measured)}
    if residuals is None:
        residuals = {k: [0.0] * len(h) for k in measured}
    elif not isinstance(residuals, dict):
        residuals = {2: list(residuals)}

    rows = []
    for k, gaps in sorted(measured.items()):
        pred = predict(labeling, k, dimension)
        for i, hv in enumerate(h):
            p = pred.gap(hv)
            wm = witten_measured[k][i] if witten_measured and k in witten_measured else None
            rows.append(ComparisonRow(
                h=hv, k=k, measured=float(gaps[i]), predicted=p,
                ratio=float(gaps[i]) / p if p > 0 else math.inf,
                witten_measured=None if wm is None else float(wm),
                witten_ratio=None if wm is None else float(wm) / float(gaps[i]),
            ))

    fit = fit_rate(h, measured[2], residuals.get(2))
    pred2 = predict(labeling, 2, dimension)
    s_fit = -fit.slope / 2.0
    rel = abs(s_fit - pred2.S) / pred2.S
    pref_theory = pred2.mu * math.sqrt(abs(pred2.det_min / pred2.det_saddle)) \
        / ((2 * dimension + 4) * math.pi)
    pref_ratio = fit.prefactor_estimate / pref_theory

    wmed = None
    if witten_measured and 2 in witten_measured:
        wr = [witten_measured[2][i] / measured[2][i] for i in fit.window]
        wmed = float(np.median(wr))

    in_band = []
    for i in fit.window:
        p = pred2.gap(h[i])
        in_band.append(prefactor_band[0] <= measured[2][i] / p <= prefactor_band[1])
    passed = rel <= rate_tolerance and all(in_band)
    return ComparisonReport(
        rows=tuple(rows), fit=fit, S_fit=s_fit, S_theory=pred2.S,
        rel_err=rel, prefactor_ratio=pref_ratio, witten_ratio_median=wmed,
        passed=passed,
        tolerances={"rate_rel_err": rate_tolerance,
                    "prefactor_band": list(prefactor_band)},
    )
