"""Command line: landscape | spectrum | sweep | predict | simulate | selfcheck.

Outputs are machine-readable (JSON reports, CSV tables), written atomically
into the configured output directory and nowhere else.  Floating point
values are serialized with 17 significant digits so files round-trip
exactly; timestamps live in a separate metadata file so repeated runs of
the same config produce byte-identical data outputs.

Exit codes: 0 success, 2 bad configuration, 3 numerical failure,
4 hypothesis violation.
"""

import os

# Pin BLAS threading before numpy loads anywhere in this process: reduction
# order inside threaded BLAS kernels varies with the thread count, and the
# determinism contract is byte-identical output at any thread setting.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ[_var] = "1"

import argparse
import json
import math
import sys
import tempfile
import time

import numpy as np

from . import __version__, asympt, config, eigen, gridop, landscape
from . import pipeline, potentials, symbols, walk

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_HYPOTHESIS = 4


# --- serialization -------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def to_json(obj, indent=0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  "{k}": {to_json(v, indent + 1)}' for k, v in obj.items())
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        flat = all(isinstance(v, (int, float, str, bool, type(None)))
                   for v in obj)
        if flat:
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        items = ",\n".join(f"{pad}  {to_json(v, indent + 1)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_outputs(outdir: str, name: str, doc=None, csv_rows=None,
                   csv_header=None, formats=("json", "csv")) -> None:
    if doc is not None and "json" in formats:
        write_atomic(os.path.join(outdir, f"{name}.json"), to_json(doc) + "\n")
    if csv_rows is not None and "csv" in formats:
        lines = [",".join(csv_header)]
        for row in csv_rows:
            lines.append(",".join(
                format(v, ".17g") if isinstance(v, float) else str(v)
                for v in row))
        write_atomic(os.path.join(outdir, f"{name}.csv"),
                     "\n".join(lines) + "\n")
    meta = {"tool": f"ballwalk {__version__}",
            "created_unix": time.time()}
    write_atomic(os.path.join(outdir, f"{name}_metadata.json"),
                 to_json(meta) + "\n")


# --- subcommands ----------------------------------------------------------------


def _landscape_doc(run: pipeline.LandscapeRun) -> dict:
    lab = run.labeling
    crit = []
    seen = list(lab.minima) + [s for s in lab.saddles if s is not None] \
        + list(lab.non_separating)
    for c in sorted(seen, key=lambda c: (c.index, c.value)):
        crit.append({
            "location": list(c.location),
            "value": c.value,
            "index": c.index,
            "hessian_eigs": list(c.hessian_eigs),
            "hessian_det": c.hessian_det,
        })
    pairs = []
    for (k, m, s, S) in lab.pairs:
        pairs.append({
            "k": k,
            "m": list(m.location),
            "s": None if s is None else list(s.location),
            "S": S,
        })
    rep = run.hypotheses
    return {
        "critical_points": crit,
        "pairs": pairs,
        "n0": lab.n0,
        "n1": lab.n1,
        "warnings": list(lab.warnings),
        "hypotheses": {
            "morse_ok": rep.morse_ok,
            "min_hessian_spectral_gap": rep.min_hessian_spectral_gap,
            "boundary_gradient_min": rep.boundary_gradient_min,
            "generic_ok": rep.generic_ok,
            "min_S_separation": rep.min_S_separation,
        },
    }


def cmd_landscape(cfg: config.RunConfig, outdir: str) -> int:
    run = pipeline.run_landscape(
        cfg.spec, cfg.box, cfg.landscape.dx or cfg.dx,
        coarse_spacing=cfg.landscape.coarse_spacing,
        newton_tolerance=cfg.landscape.newton_tolerance,
        match_radius=cfg.landscape.match_radius)
    _write_outputs(outdir, "landscape", doc=_landscape_doc(run))
    ok = run.hypotheses.morse_ok and run.hypotheses.generic_ok
    return EXIT_OK if ok else EXIT_HYPOTHESIS


def cmd_spectrum(cfg: config.RunConfig, outdir: str) -> int:
    # the expected cluster size is advisory here; classification still runs
    # (and still reports) if the labeling cannot be formed
    n0 = None
    try:
        n0 = landscape.label_potential(cfg.spec, cfg.box,
                                       cfg.landscape.dx or cfg.dx).n0
    except (landscape.AmbiguousMatch, landscape.NonMorseCritical,
            landscape.BoundaryMergeError, ValueError):
        pass
    run = pipeline.run_spectrum(
        cfg.spec, cfg.box, cfg.dx, cfg.h, kind=cfg.operator, count=cfg.count,
        tol=cfg.solver.tol, max_iter=cfg.solver.max_iter,
        dense_cutoff=cfg.solver.dense_cutoff, n0_expected=n0,
        cell_cap=cfg.cell_cap)
    res = run.result
    doc = {
        "h": run.h,
        "dx": run.dx,
        "kind": run.kind,
        "eigenvalues": list(res.eigenvalues),
        "residuals": list(res.residual_norms),
        "n_small": res.n_small,
        "next_eigenvalue": res.next_eigenvalue,
        "solver": res.solver,
        "seconds": run.seconds,
    }
    if n0 is not None:
        doc["n0_expected"] = n0
    _write_outputs(outdir, "spectrum", doc=doc)
    return EXIT_OK


def cmd_sweep(cfg: config.RunConfig, outdir: str) -> int:
    run = pipeline.run_sweep(
        cfg.spec, cfg.box, cfg.dx, cfg.h_values,
        landscape_dx=cfg.landscape.dx, count=cfg.count, tol=cfg.solver.tol,
        max_iter=cfg.solver.max_iter, dense_cutoff=cfg.solver.dense_cutoff,
        coarse_spacing=cfg.landscape.coarse_spacing)
    rep = run.report
    header = ["h", "dx", "k", "measured_gap", "predicted_gap", "ratio",
              "witten_gap", "witten_ratio"]
    rows = [(r.h, cfg.dx, r.k, r.measured, r.predicted, r.ratio,
             r.witten_measured, r.witten_ratio) for r in rep.rows]
    summary = {
        "S_fit": rep.S_fit,
        "S_theory": rep.S_theory,
        "rel_err": rep.rel_err,
        "prefactor_ratio": rep.prefactor_ratio,
        "witten_ratio_median": rep.witten_ratio_median,
        "slope": rep.fit.slope,
        "slope_stderr": rep.fit.slope_stderr,
        "window": list(rep.fit.window),
        "passed": rep.passed,
        "tolerances": rep.tolerances,
    }
    _write_outputs(outdir, "sweep", doc=summary, csv_rows=rows,
                   csv_header=header, formats=cfg.formats)
    return EXIT_OK


def cmd_predict(cfg: config.RunConfig, outdir: str) -> int:
    lab = landscape.label_potential(cfg.spec, cfg.box,
                                    cfg.landscape.dx or cfg.dx)
    preds = []
    for k in range(1, lab.n0 + 1):
        p = asympt.predict(lab, k, cfg.spec.dimension)
        entry = {
            "k": k,
            "S": p.S,
            "mu": p.mu,
            "det_min": p.det_min,
            "det_saddle": p.det_saddle,
            "gaps": [{"h": h, "walk": p.gap(h), "witten": p.witten_gap(h)}
                     for h in cfg.h_values],
        }
        if p.simple_eigenvalue:
            entry["flag"] = "simple eigenvalue"
        preds.append(entry)
    _write_outputs(outdir, "predict", doc={"n0": lab.n0, "predictions": preds})
    return EXIT_OK


def cmd_simulate(cfg: config.RunConfig, outdir: str) -> int:
    if cfg.walk is None:
        raise config.ConfigError("simulate needs a walk block in the config")
    w = cfg.walk
    run = pipeline.run_simulation(
        cfg.spec, cfg.box, w.h, w.n_steps, w.n_chains, w.seed, w.start,
        record_every=w.record_every, landscape_dx=cfg.landscape.dx or cfg.dx,
        estimate_gap=w.estimate_gap, freeze_exited=w.freeze_exited)
    tr = run.trace
    n0 = tr.occupation.shape[1]
    header = ["step"] + [f"well_{k}_fraction" for k in range(1, n0 + 1)]
    rows = []
    for i, s in enumerate(tr.recorded_steps):
        rows.append((int(s),) + tuple(tr.occupation[i] / tr.n_chains))
    doc = {
        "acceptance_rate": tr.acceptance_rate,
        "exit_time_mean": run.exit_mean,
        "exit_time_ci": ([run.exit_mean - 2 * run.exit_stderr,
                          run.exit_mean + 2 * run.exit_stderr]
                         if run.exit_mean is not None else None),
        "empirical_gap": (None if run.gap_estimate is None else {
            "rate": run.gap_estimate.rate,
            "ci": [run.gap_estimate.ci_low, run.gap_estimate.ci_high],
        }),
        "stationary_fractions": list(run.stationary_fractions),
    }
    _write_outputs(outdir, "simulate", doc=doc, csv_rows=rows,
                   csv_header=header, formats=cfg.formats)
    return EXIT_OK


def _selfcheck_rows():
    from scipy.integrate import quad

    rng = np.random.Generator(np.random.Philox(key=99))
    rows = []

    def check(name, value, bound):
        rows.append((value <= bound, name, value, bound))

    # multipliers against adaptive quadrature of the defining means
    worst = 0.0
    for r in rng.uniform(0.0, 30.0, size=100):
        ref = quad(lambda z: math.cos(z * r), -1, 1, epsabs=1e-13)[0] / 2.0
        worst = max(worst, abs(symbols.multiplier(1, r) - ref))
    check("multiplier d=1 vs quadrature", worst, 1e-9)
    worst = 0.0
    for r in rng.uniform(0.0, 30.0, size=100):
        ref = quad(lambda t: 2.0 * t * quad(
            lambda a: math.cos(r * t * math.cos(a)), 0.0, math.pi,
            epsabs=1e-12)[0] / math.pi, 0.0, 1.0, epsabs=1e-12)[0]
        worst = max(worst, abs(symbols.multiplier(2, r) - ref))
    check("multiplier d=2 vs quadrature", worst, 1e-9)
    worst = 0.0
    for r in rng.uniform(0.0, 8.0, size=100):
        ref = quad(lambda z: math.exp(-z * r), -1, 1, epsabs=1e-13)[0] / 2.0
        worst = max(worst, abs(symbols.multiplier_imag(1, r) - ref))
    check("imag multiplier d=1 vs quadrature", worst, 1e-9)
    worst = 0.0
    for r in rng.uniform(0.0, 8.0, size=50):
        ref = quad(lambda t: 2.0 * t * quad(
            lambda a: math.exp(-r * t * math.cos(a)), 0.0, math.pi,
            epsabs=1e-12)[0] / math.pi, 0.0, 1.0, epsabs=1e-12)[0]
        worst = max(worst, abs(symbols.multiplier_imag(2, r) - ref))
    check("imag multiplier d=2 vs quadrature", worst, 1e-9)

    # principal symbol nonnegativity
    spec1 = potentials.builtin("double_well_tilted")
    xs = rng.uniform(-2, 2, size=10000)
    xis = rng.uniform(-20, 20, size=10000)
    p0min = min(symbols.symbol_principal(spec1, x, xi)
                for x, xi in zip(xs[:200], xis[:200]))
    w_all = symbols.multiplier_imag(1, np.abs(
        potentials.gradient(spec1, xs[:, None]).ravel()))
    m_all = symbols.multiplier(1, xis)
    p0_all = 1.0 - m_all / w_all
    check("principal symbol >= 0 (1e4 samples)", float(-min(p0_all.min(), p0min)), 1e-12)

    # modulus bound of the analytic continuation
    worst = 0.0
    for _ in range(1000):
        xi, tau = rng.uniform(-6, 6), rng.uniform(-4, 4)
        re = quad(lambda z: math.exp(-z * tau) * math.cos(z * xi), -1, 1,
                  epsabs=1e-12)[0] / 2.0
        im = quad(lambda z: math.exp(-z * tau) * math.sin(z * xi), -1, 1,
                  epsabs=1e-12)[0] / 2.0
        worst = max(worst, math.hypot(re, im) - symbols.multiplier_imag(1, abs(tau)))
    check("analytic modulus bound (1e3 samples)", worst, 1e-10)

    # detailed balance and exact eigenpairs of a small assembled walk
    box = potentials.Box.from_pairs([(-2, 2)])
    grid = gridop.build_grid(box, 0.01)
    op = gridop.assemble_walk(spec1, grid, 0.12)
    v = op.stationary_sqrt
    check("walk top eigenpair residual", float(np.linalg.norm(op.matvec(v) - v)), 1e-13)
    rs = gridop.stochastic_row_sums(op)
    check("stochastic row sums", float(np.max(np.abs(rs - 1.0))), 1e-14)
    s = op.tocsr()
    d = (s - s.T).tocoo()
    check("assembled symmetry", 0.0 if d.nnz == 0 else float(np.max(np.abs(d.data))), 0.0)
    pi = gridop.stationary_histogram(op)
    t = s.multiply(1.0 / np.sqrt(pi)[:, None]).multiply(np.sqrt(pi)[None, :])
    flux = t.multiply(pi[:, None])
    fd = (flux - flux.T).tocoo()
    asym = 0.0 if fd.nnz == 0 else float(np.max(np.abs(fd.data)))
    check("detailed balance flux", asym, 1e-15 * float(flux.max()))

    wop = gridop.assemble_witten(spec1, grid, 0.12)
    check("gram laplacian kernel residual",
          float(np.linalg.norm(wop.matvec(wop.stationary_sqrt))), 1e-12)
    return rows


def cmd_selfcheck() -> int:
    t0 = time.time()
    rows = _selfcheck_rows()
    width = max(len(r[1]) for r in rows)
    ok_all = True
    for ok, name, value, bound in rows:
        ok_all &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  "
              f"value={value:.3e}  bound={bound:.0e}")
    print(f"{'OK' if ok_all else 'FAILED'} ({len(rows)} checks, "
          f"{time.time() - t0:.1f}s)")
    return EXIT_OK if ok_all else EXIT_NUMERICAL


# --- entry ----------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ballwalk",
        description="metastable ball-walk spectral laboratory")
    parser.add_argument("--version", action="version",
                        version=f"ballwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("landscape", "spectrum", "sweep", "predict", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the JSON run config")
        p.add_argument("--output-dir", default=None,
                       help="override the configured output directory")
    sub.add_parser("selfcheck")

    args = parser.parse_args(argv)
    if args.command == "selfcheck":
        return cmd_selfcheck()

    try:
        cfg = config.load(args.config)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = args.output_dir or cfg.output_dir

    handlers = {
        "landscape": cmd_landscape,
        "spectrum": cmd_spectrum,
        "sweep": cmd_sweep,
        "predict": cmd_predict,
        "simulate": cmd_simulate,
    }
    try:
        return handlers[args.command](cfg, outdir)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (eigen.NoConvergence, eigen.AmbiguousCluster, eigen.EmptySupport,
            landscape.AmbiguousMatch, landscape.NonMorseCritical,
            landscape.BoundaryMergeError, walk.RejectionStall,
            walk.NotRelaxed, asympt.InsufficientPoints,
            symbols.QuadratureOverflow, gridop.TooManyCells,
            gridop.BallTooSmall, gridop.ResolutionError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
