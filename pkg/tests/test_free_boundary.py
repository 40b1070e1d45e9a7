import math

import numpy as np
import pytest

from driftfb.free_boundary import (AnalysisError, FitWindow, analyze_free_boundary, classify,
                                   concavity_hypothesis, holder_seminorm, locate_free_boundary,
                                   nondegeneracy_check, power_fit, regularity_budget, sum_rule)
from driftfb.kernel import KernelSpec
from driftfb.operator import Grid
from driftfb.solver import ProblemSpec, SolutionField, contact_tolerance, solve


def _synthetic(problem, w):
    ctol = contact_tolerance(1e-10, problem.grid.h)
    mask = (w <= ctol) & (problem.obstacle > 0)
    u = problem.obstacle + w
    return SolutionField(u, mask, np.zeros_like(u), 0.0, 0, True, "synthetic", ctol)


def test_fit_window_radii():
    win = FitWindow()
    h = 2 ** -10
    r = win.radii(h, rho=1.0, half_gap=0.5)
    np.testing.assert_allclose(r, 8 * h * 2.0 ** np.arange(4))
    # cap at rho/16 keeps three radii when the fourth would exceed it
    r = win.radii(2 ** -8, rho=1.0, half_gap=0.5)
    np.testing.assert_allclose(r, [2 ** -5, 2 ** -4, 2 ** -3])
    # the half-gap is a hard limit
    assert win.radii(2 ** -8, rho=1.0, half_gap=0.05).max() <= 0.05
    assert win.shifted().r_min_cells == 16


def test_power_fit_exact():
    r = np.geomspace(0.01, 0.1, 5)
    alpha, c0, r2 = power_fit(r, 3.0 * r ** 1.7)
    assert alpha == pytest.approx(1.7, abs=1e-12)
    assert c0 == pytest.approx(3.0, rel=1e-10)
    assert r2 == pytest.approx(1.0)


@pytest.mark.parametrize("alpha_l, alpha_r", [(1.5, 1.5), (1.25, 1.75)])
def test_synthetic_1d_exponents(alpha_l, alpha_r):
    g = Grid(1, 2 ** -10, 4)
    p = ProblemSpec.bump(g, KernelSpec.fractional(1), [0.0])
    x = g.axis
    xl, xr = -0.4 + 0.3 * g.h, 0.3 + 0.55 * g.h  # off-node free boundary
    w = np.maximum(x - xr, 0.0) ** alpha_r + np.maximum(xl - x, 0.0) ** alpha_l
    pts = analyze_free_boundary(_synthetic(p, w), p)
    assert len(pts) == 2
    left, right = pts
    assert left.normal[0] == -1 and right.normal[0] == 1
    assert abs(left.location[0] - xl) < 0.1 * g.h
    assert abs(right.location[0] - xr) < 0.1 * g.h
    assert left.fitted_exponent == pytest.approx(alpha_l, abs=0.01)
    assert right.fitted_exponent == pytest.approx(alpha_r, abs=0.01)
    assert sum_rule(pts)[0] == pytest.approx(alpha_l + alpha_r - 2, abs=0.02)


def test_synthetic_2d_radial():
    g = Grid(2, 2 ** -6, 4)
    p = ProblemSpec.bump(g, KernelSpec.fractional(2), [0.0, 0.0])
    X, Y = g.coords()
    r = np.hypot(X, Y)
    w = np.maximum(r - 0.5, 0.0) ** 1.6
    pts = analyze_free_boundary(_synthetic(p, w), p, angles=np.linspace(0, 2 * np.pi, 8,
                                                                      endpoint=False))
    assert len(pts) == 8
    for q in pts:
        assert np.linalg.norm(q.location) == pytest.approx(0.5, abs=0.3 * g.h)
        assert q.normal @ q.location / np.linalg.norm(q.location) > 0.99
        assert q.fitted_exponent == pytest.approx(1.6, abs=0.03)
        assert q.predicted_exponent == pytest.approx(1.5, abs=1e-9)


def test_empty_contact_raises():
    g = Grid(1, 2 ** -6, 4)
    p = ProblemSpec.bump(g, KernelSpec.fractional(1), [0.0])
    with pytest.raises(AnalysisError):
        locate_free_boundary(_synthetic(p, np.ones(g.n)), p)


def test_classify():
    assert classify(1.5, 0.999) == "regular"
    assert classify(1.97, 0.999) == "degenerate-suspect"
    assert classify(1.5, 0.5) == "degenerate-suspect"


def test_nondegeneracy_quadratic_growth():
    g = Grid(1, 2 ** -9, 4)
    p = ProblemSpec.bump(g, KernelSpec.fractional(1), [1.0], family="concave-core")
    assert concavity_hypothesis(p)
    x = g.axis
    w = np.where(np.abs(x) > 0.3, (np.abs(x) - 0.3) ** 2, 0.0)
    verdicts = nondegeneracy_check(_synthetic(p, w), p)
    assert [v.verdict for v in verdicts] == ["pass", "pass"]
    assert all(v.exponent == pytest.approx(2.0, abs=0.01) for v in verdicts)
    bump = ProblemSpec.bump(g, KernelSpec.fractional(1), [1.0])
    assert not concavity_hypothesis(bump)


def test_holder_seminorm_detects_exponent():
    theta0 = 0.5
    vals = {}
    for e in (8, 9, 10):
        h = 2.0 ** -e
        x = -1 + h * np.arange(int(round(2 / h)) + 1)
        u = np.abs(x) ** (1 + theta0)
        vals[e] = (holder_seminorm(u, h, theta0 - 0.05, 8 * h, 0.5),
                   holder_seminorm(u, h, theta0 + 0.3, 8 * h, 0.5))
    assert vals[10][0] / vals[9][0] < 1.1
    assert vals[10][1] / vals[9][1] > 1.15


def test_regularity_budget_on_solutions():
    k = KernelSpec.fractional(1)
    levels = []
    for e in (8, 9):
        p = ProblemSpec.bump(Grid(1, 2.0 ** -e, 8), k, [0.0])
        levels.append((solve(p), p))
    rep = regularity_budget(levels, k, [0.0])
    assert rep.theta == pytest.approx(0.45)
    assert rep.bounded
