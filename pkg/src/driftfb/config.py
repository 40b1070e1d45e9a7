"""Declarative experiment configs (TOML).

A config names a scenario and carries the blocks that scenario needs.
Every block is validated and turned into the library's own types
(:class:`Grid`, :class:`KernelSpec`, :class:`SolverParams`, ...) before
any heavy work starts, so a typo fails in milliseconds rather than after
a long solve.  See README.md for the schema.
"""
from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .barriers import BarrierDomain
from .free_boundary import FitWindow
from .kernel import KernelSpec
from .obstacles import FAMILIES
from .operator import MAX_NODES, Grid
from .solver import SolverParams

SCENARIOS = ("solve", "sweep-drift", "verify-identity", "chi", "barrier", "convergence")

ORACLE_LIMIT = 513  # largest grid for the dense PSOR / active-set comparison
CONVERGENCE_MAX_NODES = 2 ** 22
_POW2 = re.compile(r"^\s*2\s*\^\s*(-?\d+)\s*$")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def parse_spacing(value) -> float:
    """Grid spacing as a number or a string ``"2^-k"``."""
    if isinstance(value, str):
        m = _POW2.match(value)
        if not m:
            raise ConfigError(f"cannot parse spacing {value!r}; use a number or '2^-k'")
        return 2.0 ** int(m.group(1))
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"spacing must be a number, got {value!r}")
    return float(value)


def _block(raw: dict, name: str) -> dict:
    blk = raw.get(name, {})
    if not isinstance(blk, dict):
        raise ConfigError(f"[{name}] must be a table")
    return blk


def _check_keys(blk: dict, name: str, allowed) -> None:
    extra = sorted(set(blk) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(extra)}")


def _vector(value, dim: int, what: str) -> tuple:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1 or arr.size != dim:
        raise ConfigError(f"{what} must have {dim} component(s), got {value!r}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class AnalysisSettings:
    window: FitWindow = FitWindow()
    n_normals: int = 16
    exponent_tol: float | None = None
    min_within: int | None = None
    sum_rule_tol: float | None = None
    nondegeneracy: bool = False
    apriori: bool = True
    apriori_tol: float = 1e-8
    lip_slack: float = 0.05
    c11_slack: float = 0.05
    positivity_tol: float = 1e-12
    oracle_compare: bool = False
    reflection_tol: float = 0.02


@dataclass(frozen=True)
class IdentitySettings:
    betas: tuple = (0.25, 0.5, 0.75)
    xs: tuple = (0.5, 1.0, 2.0, 4.0)
    drifts: tuple = (0.0,)
    reference: tuple = ("cos", "cot")  # which closed forms are acceptance checks
    rel_tol: float = 1e-7
    precision: float = 1e-10
    root_drifts: int = 101
    root_range: tuple = (-10.0, 10.0)
    root_tol: float = 1e-10
    multiplier_tol: float = 1e-12
    extension_n_theta: int = 0
    extension_tol: float = 1e-4


@dataclass(frozen=True)
class ConsistencySettings:
    drifts: tuple = (0.0, 0.5, 1.0)
    window: tuple = (0.25, 1.0)
    levels: int = 2
    rel_tol: float = 5e-2


@dataclass(frozen=True)
class ChiSettings:
    directions: int = 16
    dimensions: tuple = (1, 2)
    unit_tol: float = 1e-8
    constant_tol: float = 1e-10


@dataclass(frozen=True)
class BarrierSettings:
    domain: BarrierDomain
    drifts: tuple
    kappas: tuple = tuple(np.round(np.linspace(0.1, 0.9, 9), 12))
    sign_kappas: tuple = ()
    threshold_tol: float = 0.02
    slope_tol: float = 0.1
    xtol: float = 1e-4


@dataclass(frozen=True)
class ConvergenceSettings:
    spacings: tuple
    drift_tol: float | None = 0.03  # None: report the drift without a check
    r_sweep: bool = False
    r_sweep_tol: float = 0.01
    regularity: bool = False
    theta: float | None = None
    ratio_limit: float = 1.5


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    name: str
    seed: int
    dimension: int
    h: float
    R: float
    kernel: KernelSpec
    kernel_block: dict
    drifts: tuple  # tuple of drift vectors, one per sweep member
    obstacle: dict
    solver: SolverParams
    analysis: AnalysisSettings
    output: str | None = None
    identity: IdentitySettings | None = None
    consistency: ConsistencySettings | None = None
    chi: ChiSettings | None = None
    barrier: BarrierSettings | None = None
    convergence: ConvergenceSettings | None = None
    raw: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return Grid(self.dimension, self.h, self.R)

    def with_scenario(self, scenario: str) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["scenario"] = scenario
        return from_dict(raw)


def _kernel(blk: dict, dim: int) -> KernelSpec:
    _check_keys(blk, "kernel", ("kind", "value", "values", "lam", "Lam"))
    kind = blk.get("kind", "fractional")
    try:
        if kind == "fractional":
            return KernelSpec.fractional(dim)
        if kind == "constant":
            if "value" not in blk:
                raise ConfigError("[kernel] kind = 'constant' needs 'value'")
            return KernelSpec.constant(float(blk["value"]), dim, blk.get("lam"), blk.get("Lam"))
        if kind == "sampled":
            if "values" not in blk:
                raise ConfigError("[kernel] kind = 'sampled' needs 'values'")
            return KernelSpec.sampled(blk["values"], dim, blk.get("lam"), blk.get("Lam"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[kernel] {exc}") from exc
    raise ConfigError(f"unknown kernel kind {kind!r}; choose fractional, constant or sampled")


def _drifts(blk: dict, dim: int, scenario: str) -> tuple:
    _check_keys(blk, "drift", ("b", "values"))
    if "values" in blk and "b" in blk:
        raise ConfigError("[drift] takes either 'b' or 'values', not both")
    if "values" in blk:
        vals = blk["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError("[drift] values must be a non-empty list")
        out = tuple(_vector(v, dim, "drift") for v in vals)
    else:
        out = (_vector(blk.get("b", [0.0] * dim), dim, "drift b"),)
    if scenario == "solve" and len(out) != 1:
        raise ConfigError("scenario 'solve' takes one drift; use 'sweep-drift' for several")
    return out


def _obstacle(blk: dict, dim: int, R: float) -> dict:
    _check_keys(blk, "obstacle", ("family", "a", "rho", "center", "concave_core"))
    family = blk.get("family", "bump")
    if blk.get("concave_core", False):
        family = "concave-core"
    if family not in FAMILIES:
        raise ConfigError(f"unknown obstacle family {family!r}; choose from {sorted(FAMILIES)}")
    a = float(blk.get("a", 1.0))
    rho = float(blk.get("rho", 1.0))
    if not math.isfinite(a) or not (rho > 0 and math.isfinite(rho)):
        raise ConfigError("[obstacle] needs finite a and positive rho")
    center = _vector(blk.get("center", [0.0] * dim), dim, "obstacle center")
    reach = float(np.linalg.norm(center)) + (rho if a > 0 else 0.0)
    if a > 0 and reach > R / 3 + 1e-12:
        raise ConfigError(f"obstacle support reaches radius {reach:.4g}; keep it within "
                          f"R/3 = {R / 3:.4g}")
    return {"family": family, "a": a, "rho": rho, "center": center}


def _solver(blk: dict) -> SolverParams:
    keys = ("omega", "tol", "max_iter", "method", "initial", "check_every", "nested",
            "gmres_restart")
    _check_keys(blk, "solver", keys)
    try:
        return SolverParams(**{k: blk[k] for k in keys if k in blk})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver] {exc}") from exc


def _analysis(blk: dict) -> AnalysisSettings:
    win_keys = ("r_min_cells", "levels", "cap_fraction", "min_points", "ratio")
    keys = win_keys + tuple(f for f in AnalysisSettings.__dataclass_fields__ if f != "window")
    _check_keys(blk, "analysis", keys)
    win = FitWindow(**{k: blk[k] for k in win_keys if k in blk})
    if win.r_min_cells < 8:
        raise ConfigError("analysis.r_min_cells below 8 cells resolves only the grid scale")
    if win.levels < 2 or win.ratio <= 1:
        raise ConfigError("fit window needs at least two levels and ratio > 1")
    rest = {k: blk[k] for k in keys if k in blk and k not in win_keys}
    out = AnalysisSettings(window=win, **rest)
    if out.n_normals < 1:
        raise ConfigError("analysis.n_normals must be positive")
    return out


def _identity(blk: dict) -> IdentitySettings:
    _check_keys(blk, "identity", IdentitySettings.__dataclass_fields__)
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in blk.items()}
    out = IdentitySettings(**vals)
    if any(not 0 < b < 1 for b in out.betas):
        raise ConfigError("identity.betas must lie in (0, 1)")
    if any(x <= 0 for x in out.xs):
        raise ConfigError("identity.xs must be positive")
    bad = set(out.reference) - {"cos", "cot"}
    if bad:
        raise ConfigError(f"identity.reference accepts 'cos' and 'cot', got {sorted(bad)}")
    if out.root_drifts < 2:
        raise ConfigError("identity.root_drifts must be at least 2")
    return out


def _consistency(blk: dict, dim: int, R: float) -> ConsistencySettings:
    _check_keys(blk, "consistency", ConsistencySettings.__dataclass_fields__)
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in blk.items()}
    out = ConsistencySettings(**vals)
    if dim != 1:
        raise ConfigError("[consistency] runs on 1-D grids")
    lo, hi = out.window
    if not 0 < lo < hi < R / 2:
        raise ConfigError(f"consistency window {out.window} must sit in (0, R/2)")
    if out.levels < 2:
        raise ConfigError("consistency.levels must be at least 2")
    return out


def _chi(blk: dict) -> ChiSettings:
    _check_keys(blk, "chi", ChiSettings.__dataclass_fields__)
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in blk.items()}
    out = ChiSettings(**vals)
    if out.directions < 1:
        raise ConfigError("chi.directions must be positive")
    if any(d not in (1, 2) for d in out.dimensions):
        raise ConfigError("chi.dimensions must be drawn from {1, 2}")
    return out


def _barrier(blk: dict, dim: int, drifts: tuple) -> BarrierSettings:
    keys = ("shape", "normal", "center", "radius", "band", "kappas", "sign_kappas",
            "threshold_tol", "slope_tol", "xtol")
    _check_keys(blk, "barrier", keys)
    shape = blk.get("shape", "half-space")
    try:
        if shape == "half-space":
            normal = _vector(blk.get("normal", [1.0] + [0.0] * (dim - 1)), dim, "barrier normal")
            domain = BarrierDomain(shape, normal=normal, band=float(blk.get("band", 0.25)))
        else:
            center = _vector(blk.get("center", [0.0] * dim), dim, "barrier center")
            domain = BarrierDomain(shape, center=center, radius=float(blk.get("radius", 1.0)),
                                   band=float(blk.get("band", 0.25)))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[barrier] {exc}") from exc
    kappas = tuple(float(k) for k in blk.get("kappas", BarrierSettings.kappas))
    signs = tuple(float(k) for k in blk.get("sign_kappas", ()))
    if any(not 0 < k < 1 for k in kappas + signs) or len(kappas) < 2:
        raise ConfigError("barrier kappas must lie in (0, 1), at least two for the scan")
    return BarrierSettings(domain, drifts, kappas, signs,
                           float(blk.get("threshold_tol", 0.02)),
                           float(blk.get("slope_tol", 0.1)), float(blk.get("xtol", 1e-4)))


def _convergence(blk: dict, h: float, dim: int) -> ConvergenceSettings:
    keys = ("spacings", "levels", "drift_tol", "r_sweep", "r_sweep_tol", "regularity", "theta",
            "ratio_limit")
    _check_keys(blk, "convergence", keys)
    if "spacings" in blk:
        spacings = tuple(parse_spacing(s) for s in blk["spacings"])
    else:
        n = int(blk.get("levels", 3))
        spacings = tuple(h / 2 ** k for k in range(n))
    if len(spacings) < 2:
        raise ConfigError("a convergence study needs at least two spacings")
    if dim == 2 and len(spacings) > 2:
        raise ConfigError("2-D convergence studies are limited to two levels")
    theta = blk.get("theta")
    drift_tol = blk.get("drift_tol", 0.03)
    if isinstance(drift_tol, str) and drift_tol == "none":
        drift_tol = None
    return ConvergenceSettings(spacings, None if drift_tol is None else float(drift_tol),
                               bool(blk.get("r_sweep", False)),
                               float(blk.get("r_sweep_tol", 0.01)),
                               bool(blk.get("regularity", False)),
                               None if theta is None else float(theta),
                               float(blk.get("ratio_limit", 1.5)))


def _grid_check(dim: int, h: float, R: float) -> None:
    try:
        g = Grid(dim, h, R)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from exc
    if g.n_nodes > MAX_NODES:
        raise ConfigError(f"grid has {g.n_nodes} nodes, above the {MAX_NODES} guardrail")


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed config mapping."""
    raw = copy.deepcopy(raw)
    top = ("scenario", "name", "seed", "output", "grid", "kernel", "drift", "obstacle", "solver",
           "analysis", "identity", "consistency", "chi", "barrier", "convergence")
    _check_keys(raw, "top level", top)
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}; got {scenario!r}")
    grid = _block(raw, "grid")
    _check_keys(grid, "grid", ("dimension", "h", "R"))
    dim = int(grid.get("dimension", 1))
    if dim not in (1, 2):
        raise ConfigError(f"grid dimension must be 1 or 2, got {dim}")
    h = parse_spacing(grid.get("h", "2^-8"))
    R = float(grid.get("R", 8.0 if dim == 1 else 4.0))
    _grid_check(dim, h, R)
    kernel_block = _block(raw, "kernel")
    kernel = _kernel(kernel_block, dim)
    drifts = _drifts(_block(raw, "drift"), dim, scenario)
    obstacle = _obstacle(_block(raw, "obstacle"), dim, R)
    try:
        analysis = _analysis(_block(raw, "analysis"))
    except TypeError as exc:
        raise ConfigError(f"[analysis] {exc}") from exc
    if analysis.oracle_compare and Grid(dim, h, R).n_nodes > ORACLE_LIMIT:
        raise ConfigError(f"analysis.oracle_compare needs at most {ORACLE_LIMIT} nodes")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    cfg = dict(
        scenario=scenario, name=str(raw.get("name", scenario)), seed=seed, dimension=dim, h=h,
        R=R, kernel=kernel, kernel_block=kernel_block, drifts=drifts, obstacle=obstacle,
        solver=_solver(_block(raw, "solver")), analysis=analysis, output=raw.get("output"),
        raw=raw,
    )
    try:
        if scenario == "verify-identity":
            cfg["identity"] = _identity(_block(raw, "identity"))
            if "consistency" in raw:
                cfg["consistency"] = _consistency(_block(raw, "consistency"), dim, R)
        if scenario == "chi":
            cfg["chi"] = _chi(_block(raw, "chi"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if scenario == "barrier":
        cfg["barrier"] = _barrier(_block(raw, "barrier"), dim, drifts)
    if scenario == "convergence":
        conv = _convergence(_block(raw, "convergence"), h, dim)
        for hh in conv.spacings:
            for RR in ((R, 2 * R) if conv.r_sweep else (R,)):
                _grid_check(dim, hh, RR)
                if Grid(dim, hh, RR).n_nodes > CONVERGENCE_MAX_NODES:
                    raise ConfigError(f"convergence level h={hh:g}, R={RR:g} exceeds the "
                                      f"{CONVERGENCE_MAX_NODES}-node guardrail")
        cfg["convergence"] = conv
    return ExperimentConfig(**cfg)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def echo(config: ExperimentConfig) -> dict[str, Any]:
    """JSON-friendly copy of the raw config for the manifest."""
    return copy.deepcopy(config.raw)
