"""One-dimensional power profiles ``(x_+)^beta`` under the half-Laplacian with drift.

For ``0 < beta < 1`` and ``x > 0``

    (-Delta)^{1/2} (x_+)^beta + b d/dx (x_+)^beta = c(beta, b) x^(beta - 1),
    c(beta, b) = beta (b sin(beta pi) + cos(beta pi)),

so the profile is a supersolution for ``beta < gamma(b)``, a solution at
``beta = gamma(b)`` and a subsolution above.  The quadrature routines here
evaluate the half-Laplacian directly from its principal-value integral and
never use the closed form; they serve as the reference for the grid
operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .kernel import gamma_exponent, normalization_constant

SOLUTION_TOL = 1e-12


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature misses its target accuracy."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class ProfileIdentity:
    beta: float
    drift: float
    multiplier: float
    classification: str  # "supersolution" | "solution" | "subsolution"


def power_multiplier(beta: float, b: float) -> ProfileIdentity:
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    c = beta * (b * math.sin(beta * math.pi) + math.cos(beta * math.pi))
    if abs(c) <= SOLUTION_TOL:
        kind = "solution"
    else:
        kind = "supersolution" if c > 0 else "subsolution"
    return ProfileIdentity(beta, b, c, kind)


def _quad(f, a, b, **kw):
    kw.setdefault("limit", 500)
    kw.setdefault("epsabs", 1e-15)
    kw.setdefault("epsrel", 1e-13)
    return integrate.quad(f, a, b, **kw)


def half_laplacian_pv(u, x: float, scale: float = 1.0) -> tuple[float, float]:
    """``(1/pi) int_0^inf (2u(x) - u(x+t) - u(x-t)) / t^2 dt`` for a smooth ``u``.

    ``scale`` is the length on which ``u`` varies; the integral is split
    there.  Returns ``(value, error estimate)``.
    """
    ux = u(x)

    def g(t):
        return (2 * ux - u(x + t) - u(x - t)) / (t * t)

    v1, e1 = _quad(g, 0.0, scale)
    v2, e2 = _quad(g, scale, math.inf)
    c = normalization_constant(1)
    return c * (v1 + v2), c * (e1 + e2)


def half_laplacian_power_oracle(beta: float, x: float, precision: float = 1e-10,
                                return_error: bool = False):
    """Principal-value quadrature of ``(-Delta)^{1/2} (y_+)^beta`` at ``x > 0``.

    The real line is split into ``y < 0`` (exact), ``[0, x/2]`` and
    ``[3x/2, Y]`` (adaptive), the symmetric cell ``|y - x| < x/2`` (symmetric
    second difference, Taylor series where it cancels) and ``y > Y = 100x``
    (series in ``x/y``).
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not x > 0:
        raise ValueError(f"x must be positive, got {x}")
    if precision < 1e-12:
        raise ValueError("precision below 1e-12 is not supported")

    xb = x ** beta
    delta = x / 2
    far = 100 * x

    left = xb / x  # int_{-inf}^0 x^beta / (x - y)^2 dy

    near0, e_near0 = _quad(lambda y: (xb - y ** beta) / (x - y) ** 2, 0.0, x - delta)

    # symmetric cell: int_0^delta (2u(x) - u(x+t) - u(x-t)) / t^2 dt
    t_series = 1e-2 * x
    d2 = beta * (beta - 1) * x ** (beta - 2)
    d4 = d2 * (beta - 2) * (beta - 3) / x ** 2
    d6 = d4 * (beta - 4) * (beta - 5) / x ** 2

    def sym(t):
        return (2 * xb - (x + t) ** beta - (x - t) ** beta) / (t * t)

    series = -(d2 * t_series + d4 * t_series ** 3 / 36 + d6 * t_series ** 5 / 1800)
    series_err = abs(d6) * (x / 7) * (t_series / x) ** 6  # next term, generously bounded
    cell, e_cell = _quad(sym, t_series, delta)
    cell += series
    e_cell += series_err

    right, e_right = _quad(lambda y: (xb - y ** beta) / (y - x) ** 2, x + delta, far)

    # y > Y: int x^beta/(y-x)^2 - int y^beta/(y-x)^2, the latter as a series in x/y
    tail = xb / (far - x)
    ratio = x / far
    acc, m, term = 0.0, 0, math.inf
    while abs(term) > 1e-18 * far ** (beta - 1) and m < 60:
        term = (m + 1) * x ** m * far ** (beta - 1 - m) / (1 + m - beta)
        acc += term
        m += 1
    tail -= acc
    e_tail = abs(term) * ratio / (1 - ratio)

    c = normalization_constant(1)
    value = c * (left + near0 + cell + right + tail)
    err = c * (e_near0 + e_cell + e_right + e_tail) + 1e-15 * c * abs(left)
    if err > precision:
        raise QuadratureError(f"half-Laplacian oracle at beta={beta}, x={x}", err)
    return (value, err) if return_error else value


def extension_identity_check(beta: float, r: float, n_theta: int, b: float = 0.0) -> float:
    """Max residual of the harmonic extension ``w = r^beta sin(beta theta)``.

    Checks the polar Laplace equation on ``theta in (0, pi)`` with finite
    differences in ``theta`` (exact radial derivatives) and the conormal
    identity ``(r^-1 d_theta + b d_r) w |_{theta=pi} = c(beta, b) r^(beta-1)``.
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    theta = np.linspace(0.0, np.pi, n_theta + 1)
    dth = theta[1] - theta[0]
    h = np.sin(beta * theta)
    g, g1, g2 = r ** beta, beta * r ** (beta - 1), beta * (beta - 1) * r ** (beta - 2)
    h2 = (h[2:] - 2 * h[1:-1] + h[:-2]) / dth ** 2
    laplace = g2 * h[1:-1] + g1 * h[1:-1] / r + g * h2 / r ** 2
    # one-sided second-order derivative at theta = pi
    dh_pi = (3 * h[-1] - 4 * h[-2] + h[-3]) / (2 * dth)
    conormal = g * dh_pi / r + b * g1 * h[-1]
    expected = power_multiplier(beta, b).multiplier * r ** (beta - 1)
    boundary = abs(r ** beta * math.sin(0.0))
    return float(max(np.max(np.abs(laplace)), abs(conormal - expected), boundary))


def solve_exponent_root(b: float) -> float:
    """Root in (0, 1) of ``b sin(beta pi) + cos(beta pi)`` by bisection."""
    if not math.isfinite(b):
        raise ValueError(f"drift must be finite, got {b}")
    f = lambda beta: b * math.sin(beta * math.pi) + math.cos(beta * math.pi)
    # f(0) = 1 > 0 and f(1) = -1 < 0 for every b
    return optimize.bisect(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def profile_exponent(b: float) -> float:
    """Exponent of the homogeneous 1-D solution ``(x_+)^gamma(b)``."""
    return gamma_exponent(b)
