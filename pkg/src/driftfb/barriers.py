"""Sign of ``(-L + b.grad) rho^kappa`` near the boundary of model domains.

``rho`` is the exact distance to the boundary of a half-space or a ball,
clamped to zero outside.  Near the boundary ``rho^kappa`` is a
supersolution when ``kappa`` is below the local exponent
``gamma(b.nu/chi(nu))`` (``nu`` the inward normal) and a subsolution above
it.  The discrete operator sees zero data outside the box; for the
half-space the missing far field is added back in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .kernel import KernelSpec, tilde_gamma
from .operator import Grid, build_operator

MARGIN = 0.05


@dataclass(frozen=True)
class BarrierDomain:
    """Half-space ``{x.e > 0}`` or ball ``{|x - c| < radius}``."""

    shape: str
    normal: tuple = (1.0,)
    center: tuple = (0.0,)
    radius: float = 1.0
    band: float = 0.25

    def __post_init__(self):
        if self.shape not in ("half-space", "ball"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.band <= 0:
            raise ValueError("band must be positive")
        if self.shape == "half-space":
            e = np.asarray(self.normal, dtype=float)
            if not np.isclose(np.linalg.norm(e), 1.0, atol=1e-12):
                raise ValueError("half-space normal must be a unit vector")
        elif self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dimension(self) -> int:
        return len(self.normal) if self.shape == "half-space" else len(self.center)

    def distance(self, coords) -> np.ndarray:
        """Distance to the boundary inside the domain, zero outside."""
        if self.shape == "half-space":
            d = sum(c * e for c, e in zip(coords, self.normal))
        else:
            r = np.sqrt(sum((c - x0) ** 2 for c, x0 in zip(coords, self.center)))
            d = self.radius - r
        return np.maximum(d, 0.0)

    def inward_normals(self, coords) -> np.ndarray:
        """Unit vectors along which the distance grows, shape ``(..., dim)``."""
        if self.shape == "half-space":
            e = np.asarray(self.normal, dtype=float)
            return np.broadcast_to(e, coords[0].shape + (e.size,))
        rel = np.stack([c - x0 for c, x0 in zip(coords, self.center)], axis=-1)
        r = np.linalg.norm(rel, axis=-1, keepdims=True)
        return -rel / np.where(r > 0, r, 1.0)


@dataclass(frozen=True)
class BarrierReport:
    kappa: float
    threshold: float  # smallest pointwise threshold over the band (equal on a half-space)
    verdict: str  # supersolution-confirmed | subsolution-confirmed | inconclusive
    expected: str  # what the threshold predicts: supersolution | subsolution | none
    min_value: float
    max_value: float
    min_scaled: float  # min of values * d^(1 - kappa)
    max_scaled: float
    slope: float  # log-log slope of |values| against d
    nodes_tested: int

    @property
    def agrees(self) -> bool:
        if self.expected == "none":
            return True
        return self.verdict == f"{self.expected}-confirmed"


def _ray_tail(a, c, P, kappa):
    """``int_P^inf rho^-2 ((a + c rho)_+)^kappa d rho`` elementwise (``a >= 0``, ``P > 0``)."""
    a, c, P = np.broadcast_arrays(np.asarray(a, float), np.asarray(c, float), np.asarray(P, float))
    out = np.zeros(a.shape)
    pos = c > 0
    if pos.any():
        cp, Pp, ap = c[pos], P[pos], a[pos]
        out[pos] = (cp ** kappa * Pp ** (kappa - 1) / (1 - kappa)
                    * special.hyp2f1(-kappa, 1 - kappa, 2 - kappa, -ap / (cp * Pp)))
    zero = c == 0
    out[zero] = a[zero] ** kappa / P[zero]
    neg = (c < 0) & (a + c * P > 0)
    if neg.any():
        an, cn, Pn = a[neg], c[neg], P[neg]
        end = an / -cn
        x, w = special.roots_legendre(32)
        # substitute rho = end - (end - P) s^2 to soften the kappa-power endpoint
        s = 0.5 * (x + 1)
        rho = end[:, None] - (end - Pn)[:, None] * s ** 2
        jac = 2 * (end - Pn)[:, None] * s
        vals = rho ** -2.0 * np.maximum(an[:, None] + cn[:, None] * rho, 0.0) ** kappa
        out[neg] = 0.5 * np.sum(w * vals * jac, axis=1)
    return out


def half_space_tail(grid: Grid, kernel: KernelSpec, normal, kappa: float, points: np.ndarray,
                    n_angles: int = 4096) -> np.ndarray:
    """``int_{y outside box} K(y - x) ((y.e)_+)^kappa dy`` at ``points`` (shape ``(m, dim)``).

    The box is widened by ``h/2``, matching the exterior mass of the
    discrete operator.
    """
    e = np.asarray(normal, dtype=float)
    edge = grid.R + grid.h / 2
    pts = np.atleast_2d(points)
    a = pts @ e
    if grid.dimension == 1:
        m = float(kernel.density(np.array([1.0]))[0])
        out = np.zeros(len(pts))
        for sgn in (1.0, -1.0):
            P = edge - sgn * pts[:, 0]
            out += m * _ray_tail(a, sgn * e[0], P, kappa)
        return out
    theta = (np.arange(n_angles) + 0.5) * (2 * np.pi / n_angles)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    mu = kernel.density(theta)
    with np.errstate(divide="ignore"):
        exits = []
        for j in range(2):
            dj = dirs[:, j][None, :]
            t = np.where(dj > 0, (edge - pts[:, j:j + 1]) / dj,
                         np.where(dj < 0, (-edge - pts[:, j:j + 1]) / dj, np.inf))
            exits.append(t)
    P = np.minimum(exits[0], exits[1])
    c = (dirs @ e)[None, :]
    vals = _ray_tail(np.broadcast_to(a[:, None], P.shape), np.broadcast_to(c, P.shape), P, kappa)
    return (vals * mu[None, :]).sum(axis=1) * (2 * np.pi / n_angles)


def _band_values(domain: BarrierDomain, kernel: KernelSpec, b, kappa: float, grid: Grid, op=None):
    """Operator values on ``rho^kappa`` at band nodes, with their distances and thresholds."""
    if not 0 < kappa < 1:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    if domain.dimension != grid.dimension or kernel.dimension != grid.dimension:
        raise ValueError("domain, kernel and grid dimensions differ")
    if domain.band < 16 * grid.h:
        raise ValueError(f"band {domain.band:.4g} is under-resolved: need at least 16h = "
                         f"{16 * grid.h:.4g}")
    coords = grid.coords()
    d = domain.distance(coords)
    if domain.shape == "ball":
        reach = np.linalg.norm(domain.center, ord=np.inf) + domain.radius
        if reach > grid.R - 8 * grid.h:
            raise ValueError("ball must sit inside the box")
        near = np.ones(grid.shape, dtype=bool)
    else:
        r = np.sqrt(sum(c ** 2 for c in coords))
        near = r <= 0.5
    # nodes closer than h to the boundary have the kink inside their own cell
    band = near & (d >= grid.h * (1 - 1e-9)) & (d <= domain.band * (1 + 1e-12))
    if op is None:
        op = build_operator(grid, kernel, b)
    f = d ** kappa
    vals = op.apply(f)[band]
    if domain.shape == "half-space":
        pts = np.column_stack([c[band] for c in coords])
        vals = vals - half_space_tail(grid, kernel, domain.normal, kappa, pts)
    normals = domain.inward_normals(coords)[band]
    bvec = np.atleast_1d(np.asarray(b, dtype=float))
    thresholds = np.array([tilde_gamma(kernel, bvec, nu) for nu in _unique_rows(normals)[0]])
    thr_nodes = thresholds[_unique_rows(normals)[1]]
    return vals, d[band], thr_nodes


def _unique_rows(a: np.ndarray):
    rounded = np.round(a, 12)
    uniq, inv = np.unique(rounded, axis=0, return_inverse=True)
    return uniq, inv.ravel()


def _slope(dist, vals, h):
    sel = (dist >= 8 * h) & (np.abs(vals) > 0)
    if sel.sum() < 3:
        return math.nan
    return float(np.polyfit(np.log(dist[sel]), np.log(np.abs(vals[sel])), 1)[0])


def barrier_sign_report(domain: BarrierDomain, kernel: KernelSpec, b, kappa: float, grid: Grid,
                        margin: float = MARGIN) -> BarrierReport:
    """Sign of the discrete operator on ``rho^kappa`` over the boundary band."""
    vals, dist, thr = _band_values(domain, kernel, b, kappa, grid)
    if vals.size == 0:
        raise ValueError("no grid nodes in the band")
    eps = 1e-9  # a kappa exactly on the margin edge counts as outside the band
    if np.all(kappa <= thr - margin + eps):
        expected = "supersolution"
    elif np.all(kappa >= thr + margin - eps):
        expected = "subsolution"
    else:
        expected = "none"
    if expected == "supersolution" and np.all(vals > 0):
        verdict = "supersolution-confirmed"
    elif expected == "subsolution" and np.all(vals < 0):
        verdict = "subsolution-confirmed"
    else:
        verdict = "inconclusive"
    scaled = vals * dist ** (1 - kappa)
    return BarrierReport(kappa, float(thr.min()), verdict, expected, float(vals.min()),
                         float(vals.max()), float(scaled.min()), float(scaled.max()),
                         _slope(dist, vals, grid.h), int(vals.size))


@dataclass(frozen=True)
class ThresholdScan:
    estimate: float
    predicted: float
    kappas: tuple
    mean_scaled: tuple  # band average of values * d^(1-kappa) at each kappa


def threshold_scan(domain: BarrierDomain, kernel: KernelSpec, b, kappas, grid: Grid,
                   xtol: float = 1e-4) -> ThresholdScan:
    """Locate the sign change of the scaled operator value in ``kappa``.

    The band average of ``(-L + b.grad) rho^kappa * d^(1-kappa)`` is computed on
    ``kappas``; the first bracket where it changes sign is refined by
    Brent's method.
    """
    kappas = sorted(float(k) for k in kappas)
    op = build_operator(grid, kernel, b)

    def mean_scaled(k):
        vals, dist, _ = _band_values(domain, kernel, b, k, grid, op)
        sel = dist >= 8 * grid.h
        return float(np.mean(vals[sel] * dist[sel] ** (1 - k)))

    means = [mean_scaled(k) for k in kappas]
    signs = np.sign(means)
    if np.all(signs == signs[0]):
        raise ValueError("no sign change across the scanned kappas; widen the range")
    i = int(np.flatnonzero(signs[:-1] != signs[1:])[0])
    est = optimize.brentq(mean_scaled, kappas[i], kappas[i + 1], xtol=xtol)
    _, _, thr = _band_values(domain, kernel, b, est, grid, op)
    return ThresholdScan(float(est), float(np.median(thr)), tuple(kappas), tuple(means))
