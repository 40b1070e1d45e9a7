import math

import numpy as np
import pytest
from scipy import integrate

from driftfb.kernel import (KernelSpec, chi, chi_with_error, gamma_exponent, min_gamma,
                            normalization_constant, normalization_constant_quadrature, tilde_gamma)


def test_gamma_exponent_values():
    assert gamma_exponent(0.0) == 0.5
    assert gamma_exponent(1.0) == pytest.approx(0.75, abs=1e-15)
    assert gamma_exponent(-1.0) == pytest.approx(0.25, abs=1e-15)
    assert gamma_exponent(0.5) == pytest.approx(0.5 + math.atan(0.5) / math.pi, abs=1e-15)
    t = np.linspace(-50, 50, 201)
    g = gamma_exponent(t)
    assert np.all((g > 0) & (g < 1))
    assert np.all(np.diff(g) > 0)
    np.testing.assert_allclose(g + gamma_exponent(-t), 1.0, atol=1e-15)


def test_normalization_constants():
    assert normalization_constant(1) == pytest.approx(1 / math.pi, abs=1e-15)
    assert normalization_constant(2) == pytest.approx(1 / (2 * math.pi), abs=1e-15)
    for n in (1, 2):
        q, err = normalization_constant_quadrature(n)
        assert abs(q - normalization_constant(n)) < 1e-10
        assert err < 1e-9


@pytest.mark.parametrize("dim", [1, 2])
def test_chi_fractional_is_one(dim):
    k = KernelSpec.fractional(dim)
    rng = np.random.default_rng(3)
    for _ in range(8):
        e = rng.normal(size=dim)
        e /= np.linalg.norm(e)
        val, err = chi_with_error(k, e)
        assert abs(val - 1) < 1e-10
        assert err < 1e-8


def test_chi_sampled_matches_direct_quadrature():
    vals = [1.0, 2.0, 1.5, 3.0, 1.0, 2.0, 1.5, 3.0]
    k = KernelSpec.sampled(vals)
    for ang in (0.0, 0.3, 1.2, 2.5):
        e = np.array([math.cos(ang), math.sin(ang)])
        kinks = np.mod(np.concatenate([k.breakpoints(), [ang + np.pi / 2, ang - np.pi / 2]]),
                       2 * np.pi)
        edges = np.unique(np.concatenate([[0.0, 2 * np.pi], kinks]))
        ref = sum(integrate.quad(lambda t: abs(math.cos(t - ang)) * float(k.density(t)), a, c,
                                 epsabs=1e-14, epsrel=1e-13)[0]
                  for a, c in zip(edges[:-1], edges[1:]))
        assert chi(k, e) == pytest.approx(math.pi / 2 * ref, rel=1e-9)


def test_chi_scales_linearly_and_adds():
    k1 = KernelSpec.sampled([1.0, 2.0, 1.0, 2.0])
    k2 = KernelSpec.constant(0.5, 2)
    e = np.array([0.6, 0.8])
    assert chi(k1.scaled(3.0), e) == pytest.approx(3 * chi(k1, e), rel=1e-12)
    assert chi(k1 + k2, e) == pytest.approx(chi(k1, e) + chi(k2, e), rel=1e-12)


def test_tilde_gamma_fractional_reduces_to_gamma():
    k = KernelSpec.fractional(2)
    for ang in np.linspace(0, 2 * np.pi, 7):
        nu = np.array([math.cos(ang), math.sin(ang)])
        b = np.array([0.5, -0.2])
        assert tilde_gamma(k, b, nu) == pytest.approx(gamma_exponent(b @ nu), abs=1e-9)
    k1 = KernelSpec.fractional(1)
    assert tilde_gamma(k1, [1.0], [1.0]) == pytest.approx(0.75, abs=1e-12)
    assert tilde_gamma(k1, [1.0], [-1.0]) == pytest.approx(0.25, abs=1e-12)


def test_min_gamma_fractional():
    k = KernelSpec.fractional(2)
    pred = min_gamma(k, [1.0, 0.0])
    assert pred.gamma_minus == pytest.approx(0.25, abs=1e-8)
    assert abs(abs(pred.direction[0]) - 1) < 1e-6


@pytest.mark.parametrize("values, dim", [
    ([1.0, 2.0, 3.0], 2),          # odd sample count
    ([1.0, 2.0, 3.0, 4.0], 2),     # not even under theta -> theta + pi
    ([1.0, 2.0, 1.0], 1),
])
def test_invalid_sampled_kernels(values, dim):
    with pytest.raises(ValueError):
        KernelSpec.sampled(values, dim)


def test_ellipticity_bounds_enforced():
    with pytest.raises(ValueError):
        KernelSpec.sampled([1.0, 2.0, 1.0, 2.0], lam=1.5)
    with pytest.raises(ValueError):
        KernelSpec.constant(-1.0, 2)
