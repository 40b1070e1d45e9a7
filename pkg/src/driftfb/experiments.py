"""Scenario pipelines: build operator, solve, analyse, report.

Each scenario turns an :class:`ExperimentConfig` into a :class:`RunReport`
holding named tables and pass/fail checks.  Sweep members (drifts, grid
levels) are independent and may run in worker processes; results are
merged in sweep order, so the CSV bodies do not depend on the worker
count.  Wall-clock timings live only in the JSON manifest.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .barriers import barrier_sign_report, threshold_scan
from .config import ExperimentConfig, echo
from .free_boundary import (AnalysisError, FreeBoundaryPoint, analyze_free_boundary,
                            fit_growth_exponent, nondegeneracy_check, regularity_budget,
                            sum_rule)
from .kernel import (KernelSpec, chi_with_error, gamma_exponent, min_gamma,
                     normalization_constant, normalization_constant_quadrature, tilde_gamma)
from .operator import Grid, build_operator, consistency_report
from .profiles import (QuadratureError, extension_identity_check, half_laplacian_power_oracle,
                       power_multiplier, solve_exponent_root)
from .solver import (ProblemSpec, SolverDivergence, SolverParams, a_priori_checks, residuals,
                     solve)

log = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_ANALYSIS = 0, 1, 2, 3, 4


# -- report containers ---------------------------------------------------------

@dataclass
class Check:
    name: str
    subject: str
    value: float
    target: str
    passed: bool
    source: str


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row is missing columns {sorted(missing)}")
        self.rows.append([row[c] for c in self.columns])


@dataclass
class RunReport:
    manifest: dict
    tables: dict
    checks: list
    status: str  # pass | fail | non-convergence | analysis-error
    members: list = field(default_factory=list, repr=False)

    @property
    def exit_code(self) -> int:
        return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "non-convergence": EXIT_NONCONVERGENCE,
                "analysis-error": EXIT_ANALYSIS}[self.status]

    @property
    def verdict(self) -> dict:
        failed = [f"{c.name}[{c.subject}]" for c in self.checks if not c.passed]
        return {"status": self.status, "checks": len(self.checks),
                "passed": len(self.checks) - len(failed), "failed": failed}

    def check(self, name: str) -> list:
        return [c for c in self.checks if c.name == name]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, table: Table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def _checks_table(checks) -> Table:
    t = Table(["check", "subject", "value", "target", "passed", "source"])
    for c in checks:
        t.add(check=c.name, subject=c.subject, value=c.value, target=c.target, passed=c.passed,
              source=c.source)
    return t


def write_report(report: RunReport, out: Path, plots: bool = False) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, table in report.tables.items():
        write_csv(out / f"{name}.csv", table)
        files.append(f"{name}.csv")
    write_csv(out / "checks.csv", _checks_table(report.checks))
    files.append("checks.csv")
    if plots:
        from .plots import write_plots
        files += write_plots(report, out)
    report.manifest["files"] = files + ["manifest.json"]
    report.manifest["verdict"] = report.verdict
    report.manifest["exit_code"] = report.exit_code
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(report.manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return report.manifest["files"]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _versions() -> dict:
    import numba
    import scipy
    return {"driftfb": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _le(name, subject, value, limit, source, strict=False) -> Check:
    ok = bool(value < limit) if strict else bool(value <= limit)
    if not math.isfinite(value):
        ok = False
    return Check(name, subject, float(value), f"{'<' if strict else '<='} {limit:g}", ok, source)


def _drift_label(b) -> str:
    return ";".join(format(float(v), "g") for v in np.atleast_1d(b))


def _map(fn, args, workers: int):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as ex:
        return list(ex.map(fn, *zip(*args)))


# -- solve members -------------------------------------------------------------

@dataclass
class Member:
    b: tuple
    h: float
    R: float
    problem: ProblemSpec | None = None
    solution: object = None
    residuals: object = None
    apriori: object = None
    points: list = field(default_factory=list)
    nondegeneracy: list = field(default_factory=list)
    sum_rule: list = field(default_factory=list)
    oracle_match: bool | None = None
    oracle_mismatch: int = 0
    error: str | None = None
    error_kind: str | None = None  # non-convergence | analysis
    seconds: float = 0.0

    @property
    def label(self) -> str:
        return f"b={_drift_label(self.b)},h={self.h:g},R={self.R:g}"


def _normal_angles(n: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


def solve_member(cfg: ExperimentConfig, b, h: float | None = None,
                 R: float | None = None) -> Member:
    """One solve plus free boundary analysis; errors are recorded, not raised."""
    t0 = time.perf_counter()
    h = cfg.h if h is None else h
    R = cfg.R if R is None else R
    m = Member(tuple(b), h, R)
    grid = Grid(cfg.dimension, h, R)
    ob = cfg.obstacle
    problem = ProblemSpec.bump(grid, cfg.kernel, b, ob["family"], ob["a"], ob["rho"],
                               ob["center"])
    m.problem = problem
    op = build_operator(grid, cfg.kernel, b)
    an = cfg.analysis
    try:
        sol = solve(problem, op, cfg.solver)
    except SolverDivergence as exc:
        m.error, m.error_kind = str(exc), "non-convergence"
        m.seconds = time.perf_counter() - t0
        return m
    m.solution = sol
    m.residuals = residuals(sol, op, problem)
    if an.apriori:
        m.apriori = a_priori_checks(sol, problem, an.apriori_tol, an.lip_slack, an.c11_slack)
    if not sol.converged:
        m.error = (f"complementarity residual {sol.complementarity_residual:.3e} above "
                   f"tol {cfg.solver.tol:g} after {sol.iterations} iterations")
        m.error_kind = "non-convergence"
    if an.oracle_compare and np.any(problem.obstacle > 0):
        ref = sol
        if sol.method != "psor":
            ref = solve(problem, op, _with_method(cfg.solver, "psor"))
        oracle = solve(problem, op, _with_method(cfg.solver, "active-set"))
        diff = int(np.count_nonzero(ref.contact_mask != oracle.contact_mask))
        m.oracle_match, m.oracle_mismatch = diff == 0, diff
    if sol.contact_mask.any():
        try:
            angles = None if cfg.dimension == 1 else _normal_angles(an.n_normals)
            m.points = analyze_free_boundary(sol, problem, an.window, angles)
            if cfg.dimension == 1:
                m.sum_rule = sum_rule(m.points)
            if an.nondegeneracy:
                m.nondegeneracy = nondegeneracy_check(sol, problem, an.window, m.points)
        except AnalysisError as exc:
            if m.error_kind is None:
                m.error, m.error_kind = str(exc), "analysis"
    m.seconds = time.perf_counter() - t0
    log.info("member %s: %s, %d FB points, %.1f s", m.label,
             m.error_kind or "ok", len(m.points), m.seconds)
    return m


def _with_method(params: SolverParams, method: str) -> SolverParams:
    kw = {k: getattr(params, k) for k in params.__dataclass_fields__}
    kw["method"] = method
    return SolverParams(**kw)


def _side(p: FreeBoundaryPoint) -> str:
    if p.normal.size == 1:
        return "+1" if p.normal[0] > 0 else "-1"
    return format(math.degrees(p.angle), ".6g")


def _fb_table(dim: int) -> Table:
    cols = ["b"] if dim == 1 else ["b_x", "b_y"]
    cols += ["h", "R", "side"]
    cols += ["x"] if dim == 1 else ["x", "y", "nu_x", "nu_y", "angle_deg"]
    cols += ["half_gap", "r_min", "r_max", "fitted", "c0", "r2", "predicted", "deviation",
             "classification", "flags"]
    return Table(cols)


def _fb_rows(table: Table, m: Member) -> None:
    for p in m.points:
        row = dict(h=m.h, R=m.R, side=_side(p), half_gap=p.half_gap, r_min=p.fit_window[0],
                   r_max=p.fit_window[1], fitted=p.fitted_exponent, c0=p.fitted_c0,
                   r2=p.fit_quality, predicted=p.predicted_exponent, deviation=p.deviation,
                   classification=p.classification, flags="|".join(p.flags))
        if len(m.b) == 1:
            row.update(b=m.b[0], x=p.location[0])
        else:
            row.update(b_x=m.b[0], b_y=m.b[1], x=p.location[0], y=p.location[1],
                       nu_x=p.normal[0], nu_y=p.normal[1], angle_deg=math.degrees(p.angle))
        table.add(**row)


_RESIDUAL_COLS = ["member", "method", "iterations", "converged", "contact_nodes",
                  "complementarity", "negative_au", "free_pde", "below_obstacle", "max_u",
                  "max_phi", "lip_u", "lip_phi", "lip_ratio", "min_second_difference", "c11_phi",
                  "semiconvexity_slack", "bounded", "lipschitz", "semiconvex"]


def _residual_rows(table: Table, m: Member) -> None:
    row = dict.fromkeys(_RESIDUAL_COLS)
    row["member"] = m.label
    if m.solution is not None:
        s, r = m.solution, m.residuals
        row.update(method=s.method, iterations=s.iterations, converged=s.converged,
                   contact_nodes=int(s.contact_mask.sum()), complementarity=r.complementarity,
                   negative_au=r.negative_au, free_pde=r.free_pde,
                   below_obstacle=r.below_obstacle)
    if m.apriori is not None:
        a = m.apriori
        row.update(max_u=a.max_u, max_phi=a.max_phi, lip_u=a.lip_u, lip_phi=a.lip_phi,
                   lip_ratio=a.lip_ratio, min_second_difference=a.min_second_difference,
                   c11_phi=a.c11_phi, semiconvexity_slack=a.slack, bounded=a.bounded,
                   lipschitz=a.lipschitz, semiconvex=a.semiconvex)
    table.add(**row)


def member_checks(cfg: ExperimentConfig, m: Member) -> list[Check]:
    """Solver, a-priori and exponent checks for one solve."""
    an = cfg.analysis
    subj = m.label
    out = []
    if m.solution is None:
        return [Check("solver-converged", subj, math.nan, "converged", False, "solve")]
    r = m.residuals
    out.append(_le("complementarity", subj, r.complementarity, cfg.solver.tol, "residuals"))
    out.append(_le("u-above-obstacle", subj, r.below_obstacle, an.positivity_tol, "residuals"))
    if m.apriori is not None:
        a = m.apriori
        out.append(Check("apriori-bound", subj, a.max_u - a.max_phi, f"<= {an.apriori_tol:g}",
                         a.bounded, "a_priori_checks"))
        out.append(Check("apriori-lipschitz", subj, a.lip_ratio, f"<= {1 + an.lip_slack:g}",
                         a.lipschitz, "a_priori_checks"))
        out.append(Check("apriori-semiconvexity", subj, a.semiconvexity_margin, ">= 0",
                         a.semiconvex, "a_priori_checks"))
    if m.oracle_match is not None:
        out.append(Check("psor-matches-active-set", subj, float(m.oracle_mismatch),
                         "== 0 differing nodes", m.oracle_match, "solve/active_set_dense"))
    if an.exponent_tol is not None and m.points:
        devs = np.array([abs(p.deviation) for p in m.points])
        if cfg.dimension == 1 or an.min_within is None:
            for p, d in zip(m.points, devs):
                out.append(_le("exponent", f"{subj},side={_side(p)}", d, an.exponent_tol,
                               "analyze_free_boundary"))
        else:
            within = int(np.sum(devs <= an.exponent_tol))
            out.append(Check("exponent-normals", subj, float(within),
                             f">= {an.min_within} of {len(devs)} normals within "
                             f"{an.exponent_tol:g}", within >= an.min_within,
                             "analyze_free_boundary"))
    if an.sum_rule_tol is not None:
        for k, s in enumerate(m.sum_rule):
            out.append(_le("sum-rule", f"{subj},interval={k}", abs(s - 1.0), an.sum_rule_tol,
                           "sum_rule"))
    for v in m.nondegeneracy:
        loc = ";".join(format(float(c), ".6g") for c in v.location)
        out.append(Check("nondegeneracy", f"{subj},x={loc}", v.min_ratio,
                         f"> 0 and exponent {v.exponent:.4f} <= 2.05", v.verdict == "pass",
                         "nondegeneracy_check"))
    return out


def _status(members, checks) -> str:
    kinds = {m.error_kind for m in members}
    if "non-convergence" in kinds:
        return "non-convergence"
    if "analysis" in kinds:
        return "analysis-error"
    return "pass" if all(c.passed for c in checks) else "fail"


def _member_meta(m: Member) -> dict:
    return {"member": m.label, "seconds": round(m.seconds, 3), "error": m.error,
            "error_kind": m.error_kind}


# -- scenarios -----------------------------------------------------------------

def _solve_tables(cfg, members):
    fb = _fb_table(cfg.dimension)
    res = Table(list(_RESIDUAL_COLS))
    checks = []
    for m in members:
        _fb_rows(fb, m)
        _residual_rows(res, m)
        checks += member_checks(cfg, m)
    return fb, res, checks


def scenario_solve(cfg: ExperimentConfig, workers: int = 1):
    members = _map(solve_member, [(cfg, b) for b in cfg.drifts], workers)
    fb, res, checks = _solve_tables(cfg, members)
    return {"fb": fb, "residuals": res}, checks, members


def _side_fits(m: Member, side: str) -> list[float]:
    pts = [p for p in m.points if _side(p) == side]
    pts.sort(key=lambda p: float(p.location[0]))
    return [p.fitted_exponent for p in pts]


def scenario_sweep(cfg: ExperimentConfig, workers: int = 1):
    members = _map(solve_member, [(cfg, b) for b in cfg.drifts], workers)
    fb, res, checks = _solve_tables(cfg, members)
    sweep = Table(["b", "side", "fitted", "predicted", "deviation"])
    for m in members:
        for p in m.points:
            sweep.add(b=_drift_label(m.b), side=_side(p), fitted=p.fitted_exponent,
                      predicted=p.predicted_exponent, deviation=p.deviation)
    if cfg.dimension == 1:
        done = [m for m in members if m.points]
        order = sorted(done, key=lambda m: m.b[0])
        for side, sign in (("+1", 1), ("-1", -1)):
            seq = [(m.b[0], _side_fits(m, side)) for m in order]
            seq = [(b, f[0]) for b, f in seq if f]
            if len(seq) >= 2:
                steps = [sign * (f1 - f0) for (_, f0), (_, f1) in zip(seq[:-1], seq[1:])]
                checks.append(Check("monotone-in-b", f"side={side}", float(min(steps)),
                                    ">= 0", min(steps) >= 0, "sweep_drift"))
        by_b = {m.b[0]: m for m in done}
        for b, m in sorted(by_b.items()):
            if b <= 0 or -b not in by_b:
                continue
            mirror = by_b[-b]
            for side, other in (("+1", "-1"), ("-1", "+1")):
                f, g = _side_fits(m, side), _side_fits(mirror, other)[::-1]
                for k, (a, c) in enumerate(zip(f, g)):
                    checks.append(_le("reflection", f"b=+-{b:g},side={side},k={k}", abs(a - c),
                                      cfg.analysis.reflection_tol, "sweep_drift"))
    return {"fb": fb, "residuals": res, "sweep": sweep}, checks, members


def _ref_scale(ref: float, natural: float) -> float:
    return abs(ref) if abs(ref) > 1e-12 * natural else natural


def scenario_identity(cfg: ExperimentConfig, workers: int = 1):
    s = cfg.identity
    tables, checks = {}, []
    ident = Table(["beta", "x", "b", "oracle", "oracle_error", "cos_form", "cot_form",
                   "rel_error_cos", "rel_error_cot"])
    for b in s.drifts:
        for beta in s.betas:
            for x in s.xs:
                try:
                    hl, err = half_laplacian_power_oracle(beta, x, s.precision, return_error=True)
                except QuadratureError as exc:
                    raise AnalysisError(str(exc)) from exc
                val = hl + b * beta * x ** (beta - 1)
                cos_form = power_multiplier(beta, b).multiplier * x ** (beta - 1)
                cot_form = beta * (1 / math.tan(beta * math.pi) + b) * x ** (beta - 1)
                # relative to the reference; where it vanishes (beta at the root),
                # relative to the derivative scale beta x^(beta-1)
                natural = beta * x ** (beta - 1)
                rel_cos = abs(val - cos_form) / _ref_scale(cos_form, natural)
                rel_cot = abs(val - cot_form) / _ref_scale(cot_form, natural)
                ident.add(beta=beta, x=x, b=b, oracle=val, oracle_error=err, cos_form=cos_form,
                          cot_form=cot_form, rel_error_cos=rel_cos, rel_error_cot=rel_cot)
                subj = f"beta={beta:g},x={x:g},b={b:g}"
                if "cos" in s.reference:
                    checks.append(_le("identity-cos-form", subj, rel_cos,
                                      s.rel_tol, "half_laplacian_power_oracle/power_multiplier"))
                if "cot" in s.reference:
                    checks.append(_le("identity-cot-form", subj, rel_cot,
                                      s.rel_tol, "half_laplacian_power_oracle"))
    tables["identity"] = ident

    roots = Table(["b", "bisection", "closed_form", "abs_diff", "multiplier_at_gamma"])
    t0 = time.perf_counter()
    for b in np.linspace(*s.root_range, s.root_drifts):
        r, g = solve_exponent_root(float(b)), gamma_exponent(float(b))
        roots.add(b=float(b), bisection=r, closed_form=g, abs_diff=abs(r - g),
                  multiplier_at_gamma=power_multiplier(g, float(b)).multiplier)
    roots_seconds = time.perf_counter() - t0
    tables["roots"] = roots
    diffs = np.array([row[3] for row in roots.rows])
    mults = np.array([abs(row[4]) for row in roots.rows])
    checks.append(_le("root-vs-closed-form", f"{s.root_drifts} drifts", float(diffs.max()),
                      s.root_tol, "solve_exponent_root/gamma_exponent"))
    checks.append(_le("multiplier-at-root", f"{s.root_drifts} drifts", float(mults.max()),
                      s.multiplier_tol, "power_multiplier"))
    checks.append(_le("root-runtime", "seconds", roots_seconds, 1.0, "solve_exponent_root",
                      strict=True))

    if s.extension_n_theta > 0:
        ext = Table(["beta", "b", "r", "n_theta", "max_residual"])
        for b in s.drifts:
            for beta in s.betas:
                res = extension_identity_check(beta, 1.0, s.extension_n_theta, b)
                ext.add(beta=beta, b=b, r=1.0, n_theta=s.extension_n_theta, max_residual=res)
                checks.append(_le("extension-identity", f"beta={beta:g},b={b:g}", res,
                                  s.extension_tol, "extension_identity_check"))
        tables["extension"] = ext

    if cfg.consistency is not None:
        c = cfg.consistency
        cons = Table(["b", "beta", "h", "R", "max_rel_error", "order"])
        rows = _map(_consistency_member, [(cfg, b) for b in c.drifts], workers)
        for b, beta, levels in rows:
            for lv in levels:
                cons.add(b=b, beta=beta, h=lv.h, R=cfg.R, max_rel_error=lv.max_rel_error,
                         order=lv.order)
            checks.append(_le("consistency-error", f"b={b:g},h={levels[0].h:g}",
                              levels[0].max_rel_error, c.rel_tol, "consistency_report"))
            errs = [lv.max_rel_error for lv in levels]
            shrink = max(e1 / e0 for e0, e1 in zip(errs[:-1], errs[1:]))
            checks.append(_le("consistency-decreasing", f"b={b:g}", shrink, 1.0,
                              "consistency_report", strict=True))
        tables["consistency"] = cons
    return tables, checks, []


def _consistency_member(cfg: ExperimentConfig, b: float):
    c = cfg.consistency
    beta = gamma_exponent(b)
    op = build_operator(Grid(1, cfg.h, cfg.R), cfg.kernel, [b])
    return b, beta, consistency_report(op, beta, c.window, c.levels)


def _random_directions(rng, dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return rng.choice([-1.0, 1.0], size=(n, 1))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([np.cos(t), np.sin(t)])


def scenario_chi(cfg: ExperimentConfig, workers: int = 1):
    s = cfg.chi
    rng = np.random.default_rng(cfg.seed)
    consts = Table(["n", "closed_form", "quadrature", "quadrature_error", "abs_diff",
                    "reference_1_over_pi"])
    table = Table(["kernel", "n", "e_1", "e_2", "chi", "chi_error", "b_dot_e", "tilde_gamma"])
    checks = []
    for n in s.dimensions:
        cf = normalization_constant(n)
        q, qerr = normalization_constant_quadrature(n)
        consts.add(n=n, closed_form=cf, quadrature=q, quadrature_error=qerr,
                   abs_diff=abs(cf - q), reference_1_over_pi=1 / math.pi if n == 1 else None)
        checks.append(_le("normalization-quadrature", f"n={n}", abs(cf - q), s.constant_tol,
                          "normalization_constant_quadrature"))
        if n == 1:
            checks.append(_le("normalization-one-over-pi", "n=1", abs(q - 1 / math.pi),
                              s.constant_tol, "normalization_constant_quadrature"))
        k = KernelSpec.constant(cf, n)
        dirs = _random_directions(rng, n, s.directions)
        for e in dirs:
            val, err = chi_with_error(k, e)
            table.add(kernel="constant-c_n", n=n, e_1=e[0], e_2=e[1] if n == 2 else None,
                      chi=val, chi_error=err, b_dot_e=None, tilde_gamma=None)
            checks.append(_le("chi-unit", f"n={n},e={';'.join(format(v, '.6g') for v in e)}",
                              abs(val - 1.0), s.unit_tol, "chi"))
    b = np.asarray(cfg.drifts[0])
    for e in _random_directions(rng, cfg.dimension, s.directions):
        val, err = chi_with_error(cfg.kernel, e)
        table.add(kernel="configured", n=cfg.dimension, e_1=e[0],
                  e_2=e[1] if cfg.dimension == 2 else None, chi=val, chi_error=err,
                  b_dot_e=float(b @ e), tilde_gamma=tilde_gamma(cfg.kernel, b, e))
    mg = min_gamma(cfg.kernel, b)
    extremes = Table(["b", "direction_1", "direction_2", "gamma_minus", "gamma_b"])
    extremes.add(b=_drift_label(b), direction_1=mg.direction[0],
                 direction_2=mg.direction[1] if len(mg.direction) > 1 else None,
                 gamma_minus=mg.gamma_minus, gamma_b=mg.gamma_b)
    return {"normalization": consts, "chi": table, "gamma_extremes": extremes}, checks, []


def _barrier_member(cfg: ExperimentConfig, b):
    s = cfg.barrier
    grid = cfg.grid
    scan = threshold_scan(s.domain, cfg.kernel, b, s.kappas, grid, s.xtol)
    reports = [barrier_sign_report(s.domain, cfg.kernel, b, k, grid) for k in s.sign_kappas]
    return tuple(b), scan, reports


def scenario_barrier(cfg: ExperimentConfig, workers: int = 1):
    s = cfg.barrier
    try:
        results = _map(_barrier_member, [(cfg, b) for b in s.drifts], workers)
    except ValueError as exc:
        raise AnalysisError(str(exc)) from exc
    thr = Table(["b", "shape", "estimate", "predicted", "abs_diff", "kappas", "mean_scaled"])
    signs = Table(["b", "kappa", "threshold", "expected", "verdict", "min_value", "max_value",
                   "min_scaled", "max_scaled", "slope", "kappa_minus_1", "nodes"])
    checks = []
    for b, scan, reports in results:
        lab = _drift_label(b)
        thr.add(b=lab, shape=s.domain.shape, estimate=scan.estimate, predicted=scan.predicted,
                abs_diff=abs(scan.estimate - scan.predicted),
                kappas=";".join(format(k, ".17g") for k in scan.kappas),
                mean_scaled=";".join(format(v, ".17g") for v in scan.mean_scaled))
        checks.append(_le("barrier-threshold", f"b={lab}", abs(scan.estimate - scan.predicted),
                          s.threshold_tol, "threshold_scan"))
        for r in reports:
            signs.add(b=lab, kappa=r.kappa, threshold=r.threshold, expected=r.expected,
                      verdict=r.verdict, min_value=r.min_value, max_value=r.max_value,
                      min_scaled=r.min_scaled, max_scaled=r.max_scaled, slope=r.slope,
                      kappa_minus_1=r.kappa - 1, nodes=r.nodes_tested)
            subj = f"b={lab},kappa={r.kappa:g}"
            checks.append(Check("barrier-sign", subj, r.threshold, f"{r.expected} confirmed",
                                r.agrees, "barrier_sign_report"))
            checks.append(_le("barrier-decay", subj, abs(r.slope - (r.kappa - 1)), s.slope_tol,
                              "barrier_sign_report"))
    return {"barrier_thresholds": thr, "barrier_signs": signs}, checks, []


def scenario_convergence(cfg: ExperimentConfig, workers: int = 1):
    c = cfg.convergence
    jobs = [(cfg, b, h) for b in cfg.drifts for h in c.spacings]
    if c.r_sweep:
        jobs += [(cfg, b, c.spacings[0], 2 * cfg.R) for b in cfg.drifts]
    members = _map(solve_member, jobs, workers)
    fb, res, checks = _solve_tables(cfg, members)
    conv = Table(["b", "h", "R", "side", "index", "fitted", "predicted", "deviation",
                  "complementarity", "iterations"])
    for m in members:
        sides = sorted({_side(p) for p in m.points})
        for side in sides:
            pts = sorted((p for p in m.points if _side(p) == side),
                         key=lambda p: tuple(p.location))
            for k, p in enumerate(pts):
                conv.add(b=_drift_label(m.b), h=m.h, R=m.R, side=side, index=k,
                         fitted=p.fitted_exponent, predicted=p.predicted_exponent,
                         deviation=p.deviation,
                         complementarity=m.solution.complementarity_residual,
                         iterations=m.solution.iterations)

    def fits(m):
        out = {}
        for side in sorted({_side(p) for p in m.points}):
            pts = sorted((p for p in m.points if _side(p) == side), key=lambda p: tuple(p.location))
            out[side] = [p.fitted_exponent for p in pts]
        return out

    n_lv = len(c.spacings)
    for i, b in enumerate(cfg.drifts):
        lvls = members[i * n_lv:(i + 1) * n_lv]
        for m0, m1 in zip(lvls[:-1], lvls[1:]):
            f0, f1 = fits(m0), fits(m1)
            for side in sorted(set(f0) & set(f1)):
                for k, (a, d) in enumerate(zip(f0[side], f1[side])):
                    if c.drift_tol is None:
                        continue
                    checks.append(_le("refinement-drift",
                                      f"b={_drift_label(b)},h={m0.h:g}->{m1.h:g},side={side},k={k}",
                                      abs(a - d), c.drift_tol, "convergence_study"))
        if c.r_sweep:
            mr = members[len(cfg.drifts) * n_lv + i]
            f0, f1 = fits(lvls[0]), fits(mr)
            for side in sorted(set(f0) & set(f1)):
                for k, (a, d) in enumerate(zip(f0[side], f1[side])):
                    checks.append(_le("truncation-sensitivity",
                                      f"b={_drift_label(b)},R={lvls[0].R:g}->{mr.R:g},"
                                      f"side={side},k={k}", abs(a - d), c.r_sweep_tol,
                                      "convergence_study"))
    tables = {"fb": fb, "residuals": res, "convergence": conv}
    if c.regularity:
        reg = Table(["b", "theta", "h", "seminorm", "ratio", "ratio_limit"])
        for i, b in enumerate(cfg.drifts):
            lvls = members[i * n_lv:(i + 1) * n_lv]
            if any(m.solution is None for m in lvls):
                continue
            rep = regularity_budget([(m.solution, m.problem) for m in lvls], cfg.kernel, b,
                                    c.theta, c.ratio_limit)
            for k, (h, sn) in enumerate(zip(rep.spacings, rep.seminorms)):
                reg.add(b=_drift_label(b), theta=rep.theta, h=h, seminorm=sn,
                        ratio=rep.ratios[k - 1] if k else None, ratio_limit=c.ratio_limit)
            for k, r in enumerate(rep.ratios):
                checks.append(_le("regularity-ratio",
                                  f"b={_drift_label(b)},theta={rep.theta:.4g},"
                                  f"h={rep.spacings[k]:g}->{rep.spacings[k + 1]:g}",
                                  r, c.ratio_limit, "regularity_budget"))
        tables["regularity"] = reg
    return tables, checks, members


SCENARIO_FUNCS = {
    "solve": scenario_solve,
    "sweep-drift": scenario_sweep,
    "verify-identity": scenario_identity,
    "chi": scenario_chi,
    "barrier": scenario_barrier,
    "convergence": scenario_convergence,
}


def run_scenario(cfg: ExperimentConfig, workers: int = 1) -> RunReport:
    """Run the scenario named in ``cfg`` and return the in-memory report."""
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    members: list = []
    try:
        tables, checks, members = SCENARIO_FUNCS[cfg.scenario](cfg, workers)
        status = _status(members, checks)
        error = next((m.error for m in members if m.error), None)
    except AnalysisError as exc:
        tables, checks, status, error = {}, [], "analysis-error", str(exc)
    manifest = {
        "name": cfg.name,
        "scenario": cfg.scenario,
        "config": echo(cfg),
        "versions": _versions(),
        "started_utc": started,
        "seconds": round(time.perf_counter() - t0, 3),
        "workers": workers,
        "members": [_member_meta(m) for m in members],
        "error": error,
    }
    return RunReport(manifest, tables, checks, status, members)


def sweep_drift(cfg: ExperimentConfig, workers: int = 1) -> RunReport:
    return run_scenario(cfg if cfg.scenario == "sweep-drift" else cfg.with_scenario("sweep-drift"),
                        workers)


def convergence_study(cfg: ExperimentConfig, workers: int = 1) -> RunReport:
    return run_scenario(cfg if cfg.scenario == "convergence" else cfg.with_scenario("convergence"),
                        workers)


def growth_samples(m: Member, window=None):
    """``(radii, sups)`` of each fitted point, for plotting."""
    out = []
    for p in m.points:
        fit = fit_growth_exponent(m.solution, m.problem, p, window) if window else \
            fit_growth_exponent(m.solution, m.problem, p)
        out.append((p, fit))
    return out
