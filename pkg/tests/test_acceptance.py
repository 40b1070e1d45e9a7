"""Acceptance criteria, one line per criterion.

Each criterion runs one or more shipped configs from ``configs/`` through
the same code path as the CLI and inspects the named checks.  Results are
cached per session so the cross-run criteria (7, 8) reuse earlier solves.

Run ``python tests/test_acceptance.py`` for the bare report, or
``pytest tests/test_acceptance.py`` (the lines appear in the summary).
"""
from __future__ import annotations

import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from driftfb.config import load_config
from driftfb.experiments import run_scenario

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: dict = {}
_CACHE: dict = {}

SOLVE_RUNS = ("acceptance-05-exponents-b0", "acceptance-05-exponents-b1",
              "acceptance-06-anisotropy-2d", "acceptance-07-psor-oracle",
              "acceptance-08-apriori-sweep", "acceptance-09-nondegeneracy",
              "acceptance-11-regularity")


def run(name):
    if name not in _CACHE:
        cfg = load_config(CONFIGS / f"{name}.toml")
        t0 = time.perf_counter()
        rep = run_scenario(cfg)
        _CACHE[name] = (rep, time.perf_counter() - t0)
    return _CACHE[name]


@dataclass(frozen=True)
class Criterion:
    number: int
    title: str
    runs: tuple
    checks: tuple
    budget: float | None = None  # seconds per run
    budget_runs: tuple | None = None  # runs the budget applies to (default: all)

    def evaluate(self):
        notes, ok = [], True
        for name in self.runs:
            rep, secs = run(name)
            if rep.status in ("non-convergence", "analysis-error"):
                ok = False
                notes.append(f"{name}: {rep.status}")
            sel = [c for c in rep.checks if c.name in self.checks]
            if not sel:
                ok = False
                notes.append(f"{name}: no {'/'.join(self.checks)} checks")
            bad = [c for c in sel if not c.passed]
            ok &= not bad
            for c in bad[:3]:
                notes.append(f"{c.name}[{c.subject}]={c.value:.6g} vs {c.target}")
            if len(bad) > 3:
                notes.append(f"... {len(bad) - 3} more")
            timed = self.budget_runs is None or name in self.budget_runs
            if self.budget is not None and timed and secs > self.budget:
                ok = False
                notes.append(f"{name}: {secs:.1f}s over {self.budget:g}s budget")
        n = sum(len([c for c in run(r)[0].checks if c.name in self.checks]) for r in self.runs)
        secs = sum(run(r)[1] for r in self.runs)
        detail = f"{n} checks, {secs:.1f}s" + ("; " + "; ".join(notes) if notes else "")
        return ok, detail


CRITERIA = (
    Criterion(1, "closed-form exponent root and multiplier", ("acceptance-01-closed-form",),
              ("root-vs-closed-form", "multiplier-at-root", "root-runtime")),
    Criterion(2, "oracle against beta*cos(beta*pi)*x^(beta-1)", ("acceptance-02-oracle-identity",),
              ("identity-cos-form",), 10.0),
    Criterion(3, "chi normalization and c = 1/pi", ("acceptance-03-chi",),
              ("chi-unit", "normalization-one-over-pi", "normalization-quadrature"), 10.0),
    Criterion(4, "discrete consistency on (x+)^gamma(b)", ("acceptance-04-consistency",),
              ("consistency-error", "consistency-decreasing"), 60.0),
    Criterion(5, "1-D exponents b = 0 and b = 1 with sum rule",
              ("acceptance-05-exponents-b0", "acceptance-05-exponents-b1"),
              ("exponent", "sum-rule"), 300.0),
    Criterion(6, "2-D anisotropic exponent at 16 normals, h = 2^-7",
              ("acceptance-06-anisotropy-2d",), ("exponent-normals",), 1800.0),
    Criterion(7, "u >= phi, complementarity, PSOR mask = active-set mask", SOLVE_RUNS,
              ("u-above-obstacle", "complementarity", "psor-matches-active-set",
               "solver-converged"), 60.0, ("acceptance-07-psor-oracle",)),
    Criterion(8, "a-priori bound, Lipschitz and semiconvexity", SOLVE_RUNS,
              ("apriori-bound", "apriori-lipschitz", "apriori-semiconvexity")),
    Criterion(9, "nondegeneracy on the concave-core bump", ("acceptance-09-nondegeneracy",),
              ("nondegeneracy",)),
    Criterion(10, "barrier thresholds and band decay",
              ("acceptance-10-barrier-1d", "acceptance-10-barrier-2d"),
              ("barrier-threshold", "barrier-decay", "barrier-sign")),
    Criterion(11, "C^{1,theta} seminorm stable across refinement", ("acceptance-11-regularity",),
              ("regularity-ratio",)),
)


def line(crit, ok, detail):
    return f"criterion {crit.number:2d} {'PASS' if ok else 'FAIL'}  {crit.title}  ({detail})"


@pytest.mark.slow
@pytest.mark.parametrize("crit", CRITERIA, ids=lambda c: f"criterion-{c.number:02d}")
def test_criterion(crit):
    ok, detail = crit.evaluate()
    RESULTS[crit.number] = line(crit, ok, detail)
    print(RESULTS[crit.number])
    assert ok, RESULTS[crit.number]


@pytest.mark.slow
def test_cot_form_companion():
    """The identity holds with cot in place of cos, including the drift term."""
    rep, _ = run("identity-cot-form")
    assert rep.check("identity-cot-form") and rep.check("extension-identity")
    assert rep.status == "pass", rep.verdict


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("DRIFTFB_FULL"), reason="about 15 min; set DRIFTFB_FULL=1")
def test_anisotropy_one_level_finer():
    rep, _ = run("anisotropy-2d-fine")
    assert rep.status == "pass", rep.verdict


if __name__ == "__main__":
    failed = 0
    for crit in CRITERIA:
        ok, detail = crit.evaluate()
        failed += not ok
        print(line(crit, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
