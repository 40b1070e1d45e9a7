"""Angular kernels of order-1 nonlocal operators and the closed-form exponents.

An operator of the family

    L u(x) = int ((u(x+y) + u(x-y))/2 - u(x)) mu(y/|y|) / |y|^(n+1) dy

is described by its angular density ``mu`` on the unit sphere.  This module
evaluates the kernel functional ``chi(e)``, the growth exponent
``gamma(t) = 1/2 + arctan(t)/pi`` and the direction-dependent exponent
``gamma(b.e / chi(e))`` that governs the free boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special

SUPPORTED_DIMENSIONS = (1, 2)
UNIT_TOL = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Angular density ``mu`` with ellipticity bounds ``lam <= mu <= Lam``.

    ``kind`` is ``"constant"`` (``values`` holds one number) or ``"sampled"``
    (``values`` at ``N`` equispaced angles ``2 pi i / N``; piecewise linear in
    angle between samples).  In one dimension the sphere is ``{+1, -1}`` and a
    sampled kernel has exactly two values, in that order.
    """

    dimension: int
    kind: str
    values: tuple[float, ...]
    lam: float
    Lam: float

    def __post_init__(self):
        if self.dimension not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"unsupported dimension {self.dimension}; expected 1 or 2")
        if self.kind not in ("constant", "sampled"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ValueError("kernel values must be a non-empty list of finite numbers")
        if self.kind == "constant" and vals.size != 1:
            raise ValueError("a constant kernel takes exactly one value")
        if self.kind == "sampled":
            n = vals.size
            if n % 2:
                raise ValueError(f"sampled kernel needs an even number of samples, got {n}")
            if self.dimension == 1 and n != 2:
                raise ValueError("a 1-D sampled kernel has exactly two values (mu(+1), mu(-1))")
            if not np.allclose(vals, np.roll(vals, n // 2), rtol=1e-12, atol=0):
                raise ValueError("kernel must be even: values[i] == values[(i + N/2) % N]")
        if not (0 < self.lam <= self.Lam):
            raise ValueError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        if vals.min() < self.lam or vals.max() > self.Lam:
            raise ValueError(
                f"kernel values in [{vals.min():g}, {vals.max():g}] violate "
                f"ellipticity bounds [{self.lam:g}, {self.Lam:g}]"
            )

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value: float, dimension: int, lam: float | None = None,
                 Lam: float | None = None) -> "KernelSpec":
        return cls(dimension, "constant", (float(value),),
                   float(value) if lam is None else lam,
                   float(value) if Lam is None else Lam)

    @classmethod
    def sampled(cls, values: Sequence[float], dimension: int = 2, lam: float | None = None,
                Lam: float | None = None) -> "KernelSpec":
        vals = tuple(float(v) for v in values)
        return cls(dimension, "sampled", vals,
                   min(vals) if lam is None else lam,
                   max(vals) if Lam is None else Lam)

    @classmethod
    def fractional(cls, dimension: int) -> "KernelSpec":
        """The constant kernel for which ``-L`` is the half-Laplacian."""
        return cls.constant(normalization_constant(dimension), dimension)

    # -- evaluation ---------------------------------------------------------
    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def density(self, theta) -> np.ndarray:
        """``mu`` at polar angles ``theta`` (2-D) or at directions ``+-1`` (1-D)."""
        theta = np.asarray(theta, dtype=float)
        if self.is_constant:
            return np.full(theta.shape, self.values[0])
        vals = np.asarray(self.values)
        if self.dimension == 1:
            return np.where(theta >= 0, vals[0], vals[1])
        n = vals.size
        grid = 2 * np.pi * np.arange(n + 1) / n
        return np.interp(np.mod(theta, 2 * np.pi), grid, np.append(vals, vals[0]))

    def breakpoints(self) -> np.ndarray:
        """Angles in [0, 2 pi) where ``mu`` fails to be smooth."""
        if self.is_constant or self.dimension == 1:
            return np.zeros(0)
        n = len(self.values)
        return 2 * np.pi * np.arange(n) / n

    def scaled(self, factor: float) -> "KernelSpec":
        return KernelSpec(self.dimension, self.kind, tuple(factor * v for v in self.values),
                          factor * self.lam, factor * self.Lam)

    def __add__(self, other: "KernelSpec") -> "KernelSpec":
        if self.dimension != other.dimension:
            raise ValueError("cannot add kernels of different dimension")
        if self.is_constant and other.is_constant:
            return KernelSpec.constant(self.values[0] + other.values[0], self.dimension,
                                       self.lam + other.lam, self.Lam + other.Lam)
        n = max(len(k.values) for k in (self, other) if not k.is_constant)
        if any(not k.is_constant and len(k.values) != n for k in (self, other)):
            raise ValueError("sampled kernels must share the sample count to be added")
        angles = 2 * np.pi * np.arange(n) / n
        vals = self.density(angles) + other.density(angles)
        return KernelSpec(self.dimension, "sampled", tuple(vals),
                          self.lam + other.lam, self.Lam + other.Lam)


@dataclass(frozen=True)
class ExponentPrediction:
    """Exponents attached to a (kernel, drift) pair.

    ``direction`` is the unit vector attaining the directional infimum;
    ``gamma_value`` is ``gamma(b.e)`` there (no kernel correction),
    ``chi_value`` is ``chi(e)`` and ``tilde_gamma = gamma(b.e/chi(e))``.
    """

    direction: tuple[float, ...]
    gamma_value: float
    chi_value: float
    tilde_gamma: float
    gamma_b: float
    gamma_minus: float


def gamma_exponent(t):
    """``1/2 + arctan(t)/pi``; maps the real line increasingly onto (0, 1)."""
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"gamma_exponent needs a finite argument, got {t!r}")
    out = 0.5 + np.arctan(arr) / np.pi
    return float(out) if out.ndim == 0 else out


def _as_unit(e, dimension: int) -> np.ndarray:
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.shape != (dimension,):
        raise ValueError(f"expected a vector of length {dimension}, got shape {e.shape}")
    if abs(np.linalg.norm(e) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction {e} is not a unit vector (|e| = {np.linalg.norm(e)!r})")
    return e


def _circle_pieces(kinks: np.ndarray) -> np.ndarray:
    """Sorted piece boundaries covering [0, 2 pi] including every kink."""
    pts = np.concatenate([[0.0, 2 * np.pi], np.mod(kinks, 2 * np.pi)])
    pts = np.unique(pts)
    return pts[np.diff(np.append(pts, np.inf)) > 1e-15]


def integrate_circle(f, kinks, order: int = 16) -> tuple[float, float]:
    """Piecewise Gauss-Legendre quadrature of ``f(theta)`` over [0, 2 pi).

    The circle is cut at ``kinks`` so that ``f`` is smooth on every piece.
    Returns the value and the difference to the half-order rule as an error
    estimate.
    """
    pts = _circle_pieces(np.asarray(kinks, dtype=float))
    a, b = pts[:-1], pts[1:]

    def rule(m):
        x, w = special.roots_legendre(m)
        mid, half = (a + b) / 2, (b - a) / 2
        theta = mid[:, None] + half[:, None] * x[None, :]
        return float(np.sum(half[:, None] * w[None, :] * f(theta)))

    hi = rule(order)
    return hi, abs(hi - rule(order // 2))


def chi_with_error(kernel: KernelSpec, e) -> tuple[float, float]:
    """``chi(e) = (pi/2) int_{S^{n-1}} |theta.e| mu(theta) dtheta`` and its quadrature error."""
    e = _as_unit(e, kernel.dimension)
    if kernel.dimension == 1:
        mu = kernel.density(np.array([1.0, -1.0]))
        return float(np.pi / 2 * (mu[0] + mu[1]) * abs(e[0])), 0.0
    theta_e = math.atan2(e[1], e[0])
    kinks = np.concatenate([kernel.breakpoints(), [theta_e + np.pi / 2, theta_e - np.pi / 2]])
    val, err = integrate_circle(lambda th: np.abs(np.cos(th - theta_e)) * kernel.density(th), kinks)
    return np.pi / 2 * val, np.pi / 2 * err


def chi(kernel: KernelSpec, e) -> float:
    return chi_with_error(kernel, e)[0]


def tilde_gamma(kernel: KernelSpec, b, nu) -> float:
    """Free-boundary exponent ``gamma(b.nu / chi(nu))`` for the normal ``nu``."""
    nu = _as_unit(nu, kernel.dimension)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != nu.shape:
        raise ValueError(f"drift has shape {b.shape}, expected {nu.shape}")
    return gamma_exponent(float(b @ nu) / chi(kernel, nu))


def normalization_constant(dimension: int) -> float:
    """``c_{n,1/2}`` from ``1/c = (pi/2) int_{S^{n-1}} |theta_1| dtheta``."""
    if dimension == 1:
        sphere_integral = 2.0  # |+1| + |-1|
    elif dimension == 2:
        sphere_integral, _ = integrate_circle(lambda th: np.abs(np.cos(th)),
                                              np.array([np.pi / 2, 3 * np.pi / 2]))
    else:
        raise ValueError(f"unsupported dimension {dimension}; expected 1 or 2")
    return 1.0 / (np.pi / 2 * sphere_integral)


def _one_minus_cos_over(t_split: float, weight) -> tuple[float, float]:
    """``int_0^inf (1 - cos t) g(t) dt`` for a smooth decaying ``g``.

    The finite part is integrated directly; the tail is split into the plain
    integral of ``g`` and a Fourier integral handled by QUADPACK's QAWF.
    """
    head, e1 = integrate.quad(lambda t: (1 - math.cos(t)) * weight(t), 0, t_split,
                              limit=400, epsabs=1e-14, epsrel=1e-13)
    tail, e2 = integrate.quad(weight, t_split, np.inf, epsabs=1e-14, epsrel=1e-13)
    osc, e3 = integrate.quad(weight, t_split, np.inf, weight="cos", wvar=1.0, limlst=200)
    return head + tail - osc, e1 + e2 + e3


def normalization_constant_quadrature(dimension: int) -> tuple[float, float]:
    """Direct adaptive quadrature of ``(int (1 - cos x_1)/|x|^(n+1) dx)^(-1)``.

    Independent of the polar identity used by :func:`normalization_constant`.
    Returns ``(c, estimated absolute error)``.
    """
    if dimension == 1:
        integral, err = _one_minus_cos_over(20 * np.pi, lambda t: t ** -2)
        integral, err = 2 * integral, 2 * err
    elif dimension == 2:
        def transverse(x1):
            # int_R dx2 / (x1^2 + x2^2)^(3/2), integrated numerically
            f = lambda x2: (x1 * x1 + x2 * x2) ** -1.5
            a, _ = integrate.quad(f, 0, x1, epsabs=0, epsrel=1e-13)
            b, _ = integrate.quad(f, x1, np.inf, epsabs=0, epsrel=1e-12)
            return 2 * (a + b)

        integral, err = _one_minus_cos_over(20 * np.pi, transverse)
        integral, err = 2 * integral, 2 * err
    else:
        raise ValueError(f"unsupported dimension {dimension}; expected 1 or 2")
    return 1.0 / integral, err / integral ** 2


def _chi_scan(kernel: KernelSpec, angles: np.ndarray) -> np.ndarray:
    # coarse but vectorised: fixed 8-point pieces between kernel samples
    pts = _circle_pieces(np.concatenate([kernel.breakpoints(), np.linspace(0, 2 * np.pi, 257)]))
    x, w = special.roots_legendre(8)
    mid, half = (pts[:-1] + pts[1:]) / 2, (pts[1:] - pts[:-1]) / 2
    th = (mid[:, None] + half[:, None] * x).ravel()
    wt = (half[:, None] * w).ravel() * kernel.density(th)
    out = np.empty(angles.size)
    for i in range(0, angles.size, 256):
        blk = angles[i:i + 256]
        out[i:i + 256] = np.abs(np.cos(th[None, :] - blk[:, None])) @ wt
    return np.pi / 2 * out


def min_gamma(kernel: KernelSpec, b, n_scan: int = 4096) -> ExponentPrediction:
    """Directional infimum of ``gamma(b.e/chi(e))`` over unit vectors ``e``."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (kernel.dimension,):
        raise ValueError(f"drift has shape {b.shape}, expected ({kernel.dimension},)")
    bnorm = float(np.linalg.norm(b))
    gamma_b = gamma_exponent(-bnorm)

    def exponent(e):
        return gamma_exponent(float(b @ e) / chi(kernel, e))

    if kernel.dimension == 1:
        candidates = [np.array([1.0]), np.array([-1.0])]
        best = min(candidates, key=exponent)
    elif bnorm == 0.0:
        best = np.array([1.0, 0.0])
    else:
        angles = 2 * np.pi * np.arange(n_scan) / n_scan
        ratio = (b[0] * np.cos(angles) + b[1] * np.sin(angles)) / _chi_scan(kernel, angles)
        i = int(np.argmin(ratio))
        step = 2 * np.pi / n_scan

        def f(th):
            return float(b @ [math.cos(th), math.sin(th)]) / chi(kernel, [math.cos(th), math.sin(th)])

        res = optimize.minimize_scalar(
            f, bounds=(angles[i] - step, angles[i] + step), method="bounded",
            options={"xatol": 1e-10})
        th = res.x if res.fun <= f(angles[i]) else angles[i]
        best = np.array([math.cos(th), math.sin(th)])
        if kernel.is_constant:
            # chi is constant, so the infimum sits exactly at -b/|b|
            best = -b / bnorm
    chi_e = chi(kernel, best)
    tg = gamma_exponent(float(b @ best) / chi_e)
    return ExponentPrediction(
        direction=tuple(float(v) for v in best),
        gamma_value=gamma_exponent(float(b @ best)),
        chi_value=chi_e,
        tilde_gamma=tg,
        gamma_b=gamma_b,
        gamma_minus=tg,
    )
