"""Free boundary points of a discrete solution and the growth of ``u - phi`` there.

Points come from the boundary of the contact mask.  Each point gets a
sub-grid location and a unit normal pointing into ``{u > phi}``.  Growth
is measured with sup-balls: ``d_r = sup_{B_r(x0)} (u - phi)``, read off the
piecewise-linear (bilinear in 2-D) interpolant of the nodal values, for
dyadic ``r``.  The fitted exponent is the slope of ``log d_r`` against
``log r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage, optimize

from .kernel import KernelSpec, min_gamma, tilde_gamma
from .solver import ProblemSpec, SolutionField, interior_window, second_differences

DEGENERATE_MARGIN = 0.05
MIN_R2 = 0.99
STABILITY_TOL = 0.02
NONDEGENERACY_CEILING = 2.05


class AnalysisError(ValueError):
    """Raised when a free boundary analysis cannot be carried out."""


@dataclass(frozen=True)
class FitWindow:
    """Geometric radii ``r_min_cells * h * ratio**k`` for ``k < levels`` (dyadic by default).

    Radii above ``min(rho/2, half-gap, cap_fraction * rho)`` are dropped,
    except that up to ``min_points`` radii are kept as long as they stay
    below ``min(rho/2, half-gap)``.
    """

    r_min_cells: float = 8
    levels: int = 4
    cap_fraction: float = 0.0625
    min_points: int = 3
    ratio: float = 2.0

    def radii(self, h: float, rho: float, half_gap: float) -> np.ndarray:
        hard = min(rho / 2, half_gap)
        soft = min(hard, self.cap_fraction * rho)
        r = self.r_min_cells * h * self.ratio ** np.arange(self.levels)
        keep = (r <= soft * (1 + 1e-12)) | (np.arange(r.size) < self.min_points)
        keep &= r <= hard * (1 + 1e-12)
        return r[keep]

    def shifted(self, levels: int = 1) -> "FitWindow":
        return replace(self, r_min_cells=self.r_min_cells * self.ratio ** levels)


@dataclass(frozen=True)
class GrowthFit:
    exponent: float
    c0: float
    r2: float
    radii: np.ndarray
    sups: np.ndarray


@dataclass(frozen=True, eq=False)
class FreeBoundaryPoint:
    location: np.ndarray
    normal: np.ndarray
    node: tuple
    half_gap: float
    fitted_exponent: float = math.nan
    fitted_c0: float = math.nan
    predicted_exponent: float = math.nan
    deviation: float = math.nan
    fit_window: tuple = (math.nan, math.nan)
    fit_quality: float = math.nan
    classification: str = "unfitted"
    flags: tuple = ()

    @property
    def angle(self) -> float:
        """Polar angle of the normal (2-D); 0 or pi in 1-D."""
        if self.normal.size == 1:
            return 0.0 if self.normal[0] > 0 else math.pi
        return math.atan2(self.normal[1], self.normal[0])


# -- localisation ----------------------------------------------------------------

def _subgrid_offset(w: np.ndarray, h: float) -> float:
    """Offset ``s`` (in cells) such that ``w_j ~ c ((j - s) h)^alpha``, ``j = 1..K``.

    ``w`` holds ``u - phi`` at the first ``K`` steps off the contact set.  The
    offset that makes the log-log relation straightest wins; it lies in
    ``(-1, 1)``, negative values pointing back into the contact set.
    """
    j = np.arange(1, w.size + 1, dtype=float)
    if np.any(w <= 0) or w.size < 4:
        return 0.5
    lw = np.log(w)

    def misfit(s):
        A = np.column_stack([np.ones_like(j), np.log((j - s) * h)])
        coef, res, *_ = np.linalg.lstsq(A, lw, rcond=None)
        return float(res[0]) if res.size else float(np.sum((A @ coef - lw) ** 2))

    out = optimize.minimize_scalar(misfit, bounds=(-1.0, 0.999), method="bounded",
                                   options={"xatol": 1e-6})
    return float(out.x)


def _ray_gap(mask: np.ndarray, start: np.ndarray, direction: np.ndarray, h: float,
             axis0: float) -> float:
    """Distance from ``start`` along ``direction`` to the first non-contact node."""
    n = mask.shape[0]
    step = 0.5 * h
    t = step
    while True:
        p = start + t * direction
        idx = np.rint((p - axis0) / h).astype(int)
        if np.any(idx < 0) or np.any(idx >= n):
            return t
        if not mask[tuple(idx)]:
            return t
        t += step


def _interp(field: np.ndarray, points: np.ndarray, h: float, axis0: float) -> np.ndarray:
    """Piecewise-(bi)linear interpolation at physical ``points`` (shape ``(m, dim)``)."""
    idx = (np.asarray(points, dtype=float) - axis0) / h
    return ndimage.map_coordinates(field, idx.T, order=1, mode="nearest")


def locate_free_boundary(solution: SolutionField, problem: ProblemSpec,
                         n_probe: int = 6, smoothing: float = 4.0) -> list[FreeBoundaryPoint]:
    """Free boundary points with sub-grid locations and outward normals.

    1-D: two points per maximal contact interval.  2-D: every contact node
    with a non-contact axis neighbour; the normal is minus the gradient of
    the contact indicator smoothed with a Gaussian of width ``smoothing * h``.
    The location is moved off the node along the normal by the offset that
    makes ``u - phi`` at the next ``n_probe`` steps look most like a power
    of the distance.
    """
    mask = solution.contact_mask
    if not mask.any():
        raise AnalysisError("empty contact set")
    g = problem.grid
    h, x = g.h, g.axis
    w = solution.u - problem.obstacle
    axis0 = float(x[0])
    points: list[FreeBoundaryPoint] = []
    if g.dimension == 1:
        edges = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
        for i0, i1 in zip(edges[::2], edges[1::2] - 1):
            for i, nu in ((i0, -1), (i1, 1)):
                j = i + nu * np.arange(1, n_probe + 1)
                if j.min() < 0 or j.max() >= g.n:
                    continue
                s = _subgrid_offset(w[j], h)
                loc = np.array([x[i] + nu * s * h])
                gap = (x[i1] - x[i0]) + h
                points.append(FreeBoundaryPoint(loc, np.array([float(nu)]), (int(i),), gap / 2))
        return points

    smooth = ndimage.gaussian_filter(mask.astype(float), sigma=smoothing, mode="constant")
    gx, gy = np.gradient(smooth, h)
    free = ~mask
    pad = np.pad(free, 1, constant_values=True)
    boundary = mask & (pad[2:, 1:-1] | pad[:-2, 1:-1] | pad[1:-1, 2:] | pad[1:-1, :-2])
    X, Y = g.coords()
    for i, j in zip(*np.nonzero(boundary)):
        nvec = -np.array([gx[i, j], gy[i, j]])
        norm = np.linalg.norm(nvec)
        if norm == 0:
            continue
        nu = nvec / norm
        base = np.array([X[i, j], Y[i, j]])
        steps = base + h * np.arange(1, n_probe + 1)[:, None] * nu
        s = _subgrid_offset(_interp(w, steps, h, axis0), h)
        loc = base + s * h * nu
        gap = _ray_gap(mask, loc, -nu, h, axis0)
        points.append(FreeBoundaryPoint(loc, nu, (int(i), int(j)), gap / 2))
    return points


# -- growth fits -------------------------------------------------------------------

def sup_ball(w: np.ndarray, problem: ProblemSpec, centre: np.ndarray, r: float,
             n_circle: int = 720) -> float:
    """``sup`` over ``B_r(centre)`` of the piecewise-linear interpolant of ``w``."""
    g = problem.grid
    h, x = g.h, g.axis
    axis0 = float(x[0])
    centre = np.atleast_1d(np.asarray(centre, dtype=float))
    if g.dimension == 1:
        inside = np.abs(x - centre[0]) <= r
        best = w[inside].max() if inside.any() else -math.inf
        ends = _interp(w, np.array([[centre[0] - r], [centre[0] + r]]), h, axis0)
        return float(max(best, ends.max()))
    lo = np.clip(np.floor((centre - r - axis0) / h).astype(int), 0, g.n - 1)
    hi = np.clip(np.ceil((centre + r - axis0) / h).astype(int) + 1, 0, g.n)
    sub = w[lo[0]:hi[0], lo[1]:hi[1]]
    xs, ys = x[lo[0]:hi[0]], x[lo[1]:hi[1]]
    inside = (xs[:, None] - centre[0]) ** 2 + (ys[None, :] - centre[1]) ** 2 <= r * r
    best = sub[inside].max() if inside.any() else -math.inf
    t = np.linspace(0, 2 * np.pi, n_circle, endpoint=False)
    ring = centre + r * np.column_stack([np.cos(t), np.sin(t)])
    return float(max(best, _interp(w, ring, h, axis0).max()))


def power_fit(radii: np.ndarray, sups: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``log d = log c0 + alpha log r``; returns ``(alpha, c0, R^2)``."""
    lr, ld = np.log(radii), np.log(sups)
    alpha, logc = np.polyfit(lr, ld, 1)
    pred = logc + alpha * lr
    ss_res = float(np.sum((ld - pred) ** 2))
    ss_tot = float(np.sum((ld - ld.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(alpha), float(math.exp(logc)), r2


def _rho(problem: ProblemSpec) -> float:
    return float(problem.metadata.get("rho", 1.0))


def fit_growth_exponent(solution: SolutionField, problem: ProblemSpec,
                        point: FreeBoundaryPoint, window: FitWindow = FitWindow()) -> GrowthFit:
    h = problem.grid.h
    radii = window.radii(h, _rho(problem), point.half_gap)
    if radii.size < 2:
        raise AnalysisError(f"fit window is empty at {point.location} "
                            f"(half-gap {point.half_gap:.4g}, h {h:.4g})")
    w = solution.u - problem.obstacle
    sups = np.array([sup_ball(w, problem, point.location, r) for r in radii])
    if np.any(sups <= 0):
        raise AnalysisError(f"u - phi vanishes on a fit ball at {point.location}; "
                            "the point sits inside the contact set")
    alpha, c0, r2 = power_fit(radii, sups)
    return GrowthFit(alpha, c0, r2, radii, sups)


def classify(exponent: float, r2: float, margin: float = DEGENERATE_MARGIN) -> str:
    return "regular" if (r2 >= MIN_R2 and exponent < 2 - margin) else "degenerate-suspect"


def compare_prediction(point: FreeBoundaryPoint, kernel: KernelSpec, b) -> FreeBoundaryPoint:
    predicted = 1.0 + tilde_gamma(kernel, b, point.normal)
    return replace(point, predicted_exponent=predicted,
                   deviation=point.fitted_exponent - predicted)


def analyze_point(solution: SolutionField, problem: ProblemSpec, point: FreeBoundaryPoint,
                  window: FitWindow = FitWindow()) -> FreeBoundaryPoint:
    """Fit, classify and compare one point; flags an unstable window."""
    fit = fit_growth_exponent(solution, problem, point, window)
    flags = list(point.flags)
    try:
        shifted = fit_growth_exponent(solution, problem, point, window.shifted())
        if abs(shifted.exponent - fit.exponent) > STABILITY_TOL:
            flags.append("window-unstable")
    except AnalysisError:
        flags.append("window-unverified")
    out = replace(point, fitted_exponent=fit.exponent, fitted_c0=fit.c0,
                  fit_window=(float(fit.radii[0]), float(fit.radii[-1])),
                  fit_quality=fit.r2, classification=classify(fit.exponent, fit.r2),
                  flags=tuple(flags))
    return compare_prediction(out, problem.kernel, problem.b)


def analyze_free_boundary(solution: SolutionField, problem: ProblemSpec,
                          window: FitWindow = FitWindow(),
                          angles: Sequence[float] | None = None) -> list[FreeBoundaryPoint]:
    """Locate and fit free boundary points.

    In 2-D, ``angles`` (radians) selects for each target the point whose
    normal angle is closest; otherwise every boundary point is fitted.
    """
    points = locate_free_boundary(solution, problem)
    if angles is not None and problem.grid.dimension == 2:
        ang = np.array([p.angle for p in points])
        chosen = []
        for a in angles:
            d = np.abs(np.angle(np.exp(1j * (ang - a))))
            k = int(np.argmin(d))
            if k not in chosen:
                chosen.append(k)
        points = [points[k] for k in chosen]
    return [analyze_point(solution, problem, p, window) for p in points]


def sum_rule(points: Sequence[FreeBoundaryPoint]) -> list[float]:
    """``(f_+ - 1) + (f_- - 1)`` for consecutive opposite-normal pairs in 1-D."""
    out = []
    for left, right in zip(points[::2], points[1::2]):
        if left.normal[0] * right.normal[0] < 0:
            out.append((left.fitted_exponent - 1) + (right.fitted_exponent - 1))
    return out


# -- nondegeneracy -------------------------------------------------------------------

@dataclass(frozen=True)
class NondegeneracyVerdict:
    location: np.ndarray
    min_ratio: float  # min over the window of d_r / r^2
    exponent: float
    verdict: str  # pass | fail | hypothesis-not-met


def concavity_hypothesis(problem: ProblemSpec, tol: float = 1e-9) -> bool:
    """Whether ``(Delta + d_bb) phi <= 0`` at every node where ``phi > 0``."""
    phi, h = problem.obstacle, problem.grid.h
    b = problem.b
    inner = tuple(slice(1, -1) for _ in range(phi.ndim))
    if phi.ndim == 1:
        d2 = second_differences(phi, h)[0]
        op = (1 + b[0] ** 2) * d2
    else:
        dxx, dyy, dpp, dmm = second_differences(phi, h)
        # diagonal second differences: dpp - dmm = 2 d_xy
        op = dxx + dyy + b[0] ** 2 * dxx + b[1] ** 2 * dyy + b[0] * b[1] * (dpp - dmm)
    pos = phi[inner] > 0
    return bool(np.all(op[pos] <= tol * max(1.0, float(np.abs(op).max()))))


def nondegeneracy_check(solution: SolutionField, problem: ProblemSpec,
                        window: FitWindow = FitWindow(),
                        points: Sequence[FreeBoundaryPoint] | None = None) -> list[NondegeneracyVerdict]:
    """Quadratic lower bound on the growth of ``u - phi`` at each point."""
    hyp = concavity_hypothesis(problem)
    if points is None:
        points = locate_free_boundary(solution, problem)
    out = []
    for p in points:
        fit = fit_growth_exponent(solution, problem, p, window)
        ratio = float(np.min(fit.sups / fit.radii ** 2))
        if not hyp:
            verdict = "hypothesis-not-met"
        else:
            verdict = "pass" if (ratio > 0 and fit.exponent <= NONDEGENERACY_CEILING) else "fail"
        out.append(NondegeneracyVerdict(p.location, ratio, fit.exponent, verdict))
    return out


# -- regularity ----------------------------------------------------------------------

@dataclass(frozen=True)
class RegularityReport:
    theta: float
    spacings: tuple
    seminorms: tuple
    ratios: tuple
    bounded: bool


def holder_seminorm(u: np.ndarray, h: float, theta: float, r_min: float, r_max: float) -> float:
    """``max |grad_h u(x) - grad_h u(y)| / |x - y|^theta`` over ``r_min <= |x - y| <= r_max``.

    1-D uses every node pair in range; 2-D uses pairs along the axes and
    diagonals.
    """
    grads = np.gradient(u, h)
    if u.ndim == 1:
        grads = [grads]
    kmin = max(1, int(math.ceil(r_min / h - 1e-9)))
    kmax = int(math.floor(r_max / h + 1e-9))
    if u.ndim == 1:
        offsets = [((k,), k * h) for k in range(kmin, kmax + 1)]
    else:
        offsets = []
        for k in range(1, kmax + 1):
            for d, length in (((k, 0), k * h), ((0, k), k * h),
                              ((k, k), k * h * math.sqrt(2)), ((k, -k), k * h * math.sqrt(2))):
                if r_min <= length <= r_max:
                    offsets.append((d, length))
    best = 0.0
    for k, dist in offsets:
        src, dst = [], []
        for kj, n in zip(k, u.shape):
            src.append(slice(0, n - kj) if kj >= 0 else slice(-kj, n))
            dst.append(slice(kj, n) if kj >= 0 else slice(0, n + kj))
        diff = sum((gc[tuple(dst)] - gc[tuple(src)]) ** 2 for gc in grads)
        best = max(best, float(np.sqrt(diff.max())) / dist ** theta)
    return best


def regularity_budget(levels: Sequence[tuple[SolutionField, ProblemSpec]], kernel: KernelSpec, b,
                      theta: float | None = None, ratio_limit: float = 1.5,
                      interior: float = 2 / 3) -> RegularityReport:
    """Hoelder seminorm of the discrete gradient on successive refinements.

    ``theta`` defaults to ``min_e gamma(b.e/chi(e)) - 0.05``.  The budget is
    met when each refinement changes the seminorm by a factor at most
    ``ratio_limit``.  Only nodes with ``|x|_inf <= interior * R`` enter,
    which keeps the truncation boundary layer out.
    """
    if theta is None:
        theta = min_gamma(kernel, b).gamma_minus - 0.05
    hs, norms = [], []
    for sol, prob in levels:
        h = prob.grid.h
        rho = _rho(prob)
        hs.append(h)
        u = sol.u[interior_window(prob.grid, interior)]
        norms.append(holder_seminorm(u, h, theta, 8 * h, rho / 2))
    ratios = []
    for a, c in zip(norms[:-1], norms[1:]):
        ratios.append(c / a if a > 0 else (1.0 if c == 0 else math.inf))
    return RegularityReport(theta, tuple(hs), tuple(norms), tuple(ratios),
                            all(r <= ratio_limit for r in ratios))
