"""Declarative run configuration: a JSON document with nested tables.

Schema (version 1):

    {
      "schema_version": 1,
      "potential": {"dimension": 1, "form": "builtin",
                    "name": "double_well_tilted", "params": [0.3]},
      "box": [[-2.0, 2.0]],
      "dx": 0.002,
      "h": 0.1,                      # or "h_list": [0.15, 0.12, 0.1]
      "operator": "walk",            # spectrum subcommand: walk | witten
      "count": 6,
      "solver": {"tol": 1e-11, "max_iter": 20000, "dense_cutoff": 3000},
      "landscape": {"dx": 0.001, "coarse_spacing": 0.05,
                    "newton_tolerance": 1e-12, "match_radius": 0.05},
      "walk": {"h": 0.25, "n_steps": 2000, "n_chains": 10000, "seed": 1,
               "start": {"well": 2}, "record_every": 5,
               "estimate_gap": false},
      "output": {"directory": "out", "formats": ["json", "csv"]},
      "threads": 0
    }

Polynomial potentials replace "name" with
"monomials": [{"exponents": [4], "coefficient": 1.0}, ...].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .potentials import Box, PotentialSpec, builtin, polynomial

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-11
    max_iter: int = 20000
    dense_cutoff: int = 3000


@dataclass(frozen=True)
class LandscapeConfig:
    dx: float | None = None
    coarse_spacing: float = 0.05
    newton_tolerance: float = 1e-12
    match_radius: float | None = None


@dataclass(frozen=True)
class WalkBlock:
    h: float
    n_steps: int
    n_chains: int
    seed: int
    start: object
    record_every: int = 1
    estimate_gap: bool = False
    freeze_exited: bool = False


@dataclass(frozen=True)
class RunConfig:
    spec: PotentialSpec
    box: Box
    dx: float
    h_values: tuple[float, ...]
    operator: str = "walk"
    count: int = 6
    solver: SolverConfig = field(default_factory=SolverConfig)
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    walk: WalkBlock | None = None
    output_dir: str = "out"
    formats: tuple[str, ...] = ("json", "csv")
    threads: int = 0
    cell_cap: int = 300_000

    @property
    def h(self) -> float:
        return self.h_values[0]


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _parse_potential(block) -> PotentialSpec:
    _require(isinstance(block, dict), "potential block must be a table")
    form = block.get("form")
    params = block.get("params", [])
    if form == "builtin":
        _require("name" in block, "builtin potential needs a name")
        try:
            spec = builtin(block["name"], params)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if "dimension" in block:
            _require(int(block["dimension"]) == spec.dimension,
                     f"builtin {block['name']!r} has dimension {spec.dimension}")
        return spec
    if form == "polynomial":
        _require("monomials" in block, "polynomial potential needs monomials")
        try:
            mono = [(m["exponents"], m["coefficient"])
                    for m in block["monomials"]]
            return polynomial(mono, dimension=block.get("dimension"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad monomials: {exc}") from exc
    raise ConfigError(f"unknown potential form {form!r}")


def _parse_start(raw):
    if raw == "stationary":
        return "stationary"
    if isinstance(raw, dict):
        if "well" in raw:
            return ("well", int(raw["well"]))
        if "point" in raw:
            return ("point", [float(v) for v in raw["point"]])
    raise ConfigError(f"bad start specification {raw!r}")


def parse(doc: dict) -> RunConfig:
    _require(isinstance(doc, dict), "config root must be a table")
    version = doc.get("schema_version")
    _require(version == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    _require("potential" in doc, "missing potential block")
    spec = _parse_potential(doc["potential"])

    _require("box" in doc, "missing box")
    try:
        box = Box.from_pairs(doc["box"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad box: {exc}") from exc
    _require(box.dimension == spec.dimension,
             "box dimension does not match the potential")

    _require("dx" in doc, "missing dx")
    dx = float(doc["dx"])
    _require(dx > 0, "dx must be positive")

    if "h_list" in doc:
        hs = [float(v) for v in doc["h_list"]]
        _require(len(hs) >= 1, "h_list must be nonempty")
        _require(all(b < a for a, b in zip(hs, hs[1:])),
                 "h_list must be strictly decreasing")
    elif "h" in doc:
        hs = [float(doc["h"])]
    else:
        raise ConfigError("missing h or h_list")
    _require(all(h >= 8 * dx for h in hs),
             f"every h must be at least 8 dx = {8 * dx}")

    solver_raw = doc.get("solver", {})
    solver = SolverConfig(
        tol=float(solver_raw.get("tol", 1e-11)),
        max_iter=int(solver_raw.get("max_iter", 20000)),
        dense_cutoff=int(solver_raw.get("dense_cutoff", 3000)),
    )
    _require(solver.tol > 0 and solver.max_iter > 0, "solver values must be positive")

    land_raw = doc.get("landscape", {})
    land = LandscapeConfig(
        dx=float(land_raw["dx"]) if "dx" in land_raw else None,
        coarse_spacing=float(land_raw.get("coarse_spacing", 0.05)),
        newton_tolerance=float(land_raw.get("newton_tolerance", 1e-12)),
        match_radius=(float(land_raw["match_radius"])
                      if "match_radius" in land_raw else None),
    )
    _require(land.coarse_spacing > 0 and land.newton_tolerance > 0,
             "landscape tolerances must be positive")

    wblock = None
    if "walk" in doc:
        w = doc["walk"]
        try:
            wblock = WalkBlock(
                h=float(w.get("h", hs[0])),
                n_steps=int(w["n_steps"]),
                n_chains=int(w["n_chains"]),
                seed=int(w.get("seed", 1)),
                start=_parse_start(w.get("start", "stationary")),
                record_every=int(w.get("record_every", 1)),
                estimate_gap=bool(w.get("estimate_gap", False)),
                freeze_exited=bool(w.get("freeze_exited", False)),
            )
        except KeyError as exc:
            raise ConfigError(f"walk block missing {exc}") from exc
        _require(wblock.n_steps >= 1 and wblock.n_chains >= 1
                 and wblock.record_every >= 1,
                 "walk sizes must be positive")

    out = doc.get("output", {})
    formats = tuple(out.get("formats", ["json", "csv"]))
    _require(all(f in ("json", "csv") for f in formats),
             "output formats must be json or csv")

    count = int(doc.get("count", 6))
    _require(1 <= count <= 20, "count must be in [1, 20]")
    operator = doc.get("operator", "walk")
    _require(operator in ("walk", "witten"), "operator must be walk or witten")

    threads = int(doc.get("threads", 0))
    _require(threads >= 0, "threads must be >= 0")
    cell_cap = int(doc.get("cell_cap", 300_000))
    _require(cell_cap > 0, "cell_cap must be positive")

    return RunConfig(
        spec=spec, box=box, dx=dx, h_values=tuple(hs), operator=operator,
        count=count, solver=solver, landscape=land, walk=wblock,
        output_dir=str(out.get("directory", "out")), formats=formats,
        threads=threads, cell_cap=cell_cap,
    )


def load(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse(doc)
