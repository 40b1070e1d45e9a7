import math

import numpy as np
import pytest

from driftfb.profiles import (QuadratureError, extension_identity_check,
                              half_laplacian_power_oracle, power_multiplier, profile_exponent,
                              solve_exponent_root)
from driftfb.kernel import gamma_exponent


@pytest.mark.parametrize("beta", [0.1, 0.25, 0.4, 0.6, 0.75, 0.9])
@pytest.mark.parametrize("x", [0.5, 1.0, 3.0])
def test_oracle_matches_cotangent_form(beta, x):
    val, err = half_laplacian_power_oracle(beta, x, return_error=True)
    ref = beta / math.tan(beta * math.pi) * x ** (beta - 1)
    assert err < 1e-10
    assert abs(val - ref) <= 1e-9 * beta * x ** (beta - 1)


def test_oracle_at_half_vanishes():
    assert abs(half_laplacian_power_oracle(0.5, 2.0)) < 1e-11


def test_oracle_homogeneity():
    beta = 0.3
    v1 = half_laplacian_power_oracle(beta, 1.0)
    v2 = half_laplacian_power_oracle(beta, 4.0)
    assert v2 == pytest.approx(v1 * 4.0 ** (beta - 1), rel=1e-9)


def test_oracle_rejects_bad_input():
    with pytest.raises(ValueError):
        half_laplacian_power_oracle(1.0, 1.0)
    with pytest.raises(ValueError):
        half_laplacian_power_oracle(0.5, -1.0)
    with pytest.raises(ValueError):
        half_laplacian_power_oracle(0.5, 1.0, precision=1e-14)


def test_quadrature_error_type():
    e = QuadratureError("demo", 1e-3)
    assert e.achieved == 1e-3 and "1.000e-03" in str(e)


def test_power_multiplier_signs():
    b = 1.0
    g = gamma_exponent(b)
    assert power_multiplier(g, b).classification == "solution"
    assert power_multiplier(g - 0.1, b).classification == "supersolution"
    assert power_multiplier(g + 0.1, b).classification == "subsolution"
    with pytest.raises(ValueError):
        power_multiplier(0.0, 0.0)


def test_root_agrees_with_closed_form():
    for b in np.linspace(-10, 10, 41):
        assert abs(solve_exponent_root(b) - gamma_exponent(b)) < 1e-12
        assert profile_exponent(b) == gamma_exponent(b)
    with pytest.raises(ValueError):
        solve_exponent_root(float("nan"))


@pytest.mark.parametrize("b", [0.0, 1.0, -0.5])
def test_extension_identity_residual_shrinks(b):
    r1 = extension_identity_check(0.4, 1.0, 200, b)
    r2 = extension_identity_check(0.4, 1.0, 400, b)
    assert r2 < r1
    assert r2 < 1e-4
