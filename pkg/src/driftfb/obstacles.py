"""Smooth compactly supported obstacles."""
from __future__ import annotations

import numpy as np


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        g = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return f / (f + g)


def radius(coords, center) -> np.ndarray:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return np.sqrt(sum((c - x0) ** 2 for c, x0 in zip(coords, center)))


def smooth_bump(coords, a: float = 1.0, rho: float = 1.0, center=0.0) -> np.ndarray:
    """``a exp(1 - 1/(1 - |x-c|^2/rho^2))`` inside the ball, zero outside."""
    s2 = (radius(coords, center) / rho) ** 2
    inside = s2 < 1
    out = np.zeros_like(s2)
    out[inside] = a * np.exp(1 - 1 / (1 - s2[inside]))
    return out


def concave_core(coords, a: float = 1.0, rho: float = 1.0, center=0.0,
                 taper: float = 1.5) -> np.ndarray:
    """``a (1 - |x-c|^2/rho^2)`` cut off smoothly between ``rho`` and ``taper rho``.

    Positive exactly on the open ball of radius ``rho`` and concave there;
    negative on the taper annulus, zero beyond.
    """
    s = radius(coords, center) / rho
    cut = _smooth_step((taper - s) / (taper - 1))
    return a * (1 - s ** 2) * cut


FAMILIES = {"bump": smooth_bump, "concave-core": concave_core}


def make_obstacle(family: str, coords, a: float, rho: float, center) -> np.ndarray:
    try:
        fn = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown obstacle family {family!r}; choose from {sorted(FAMILIES)}")
    return fn(coords, a=a, rho=rho, center=center)


def outer_radius(family: str, rho: float) -> float:
    """Radius of the ball outside which the obstacle vanishes."""
    return 1.5 * rho if family == "concave-core" else rho
