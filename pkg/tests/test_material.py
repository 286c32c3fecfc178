import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growthfem.material import (
    InvertedElementError,
    MaterialParams,
    cauchy_stress,
    dW_dFe,
    first_piola_diagnostic,
    rotation,
    strain_energy_density,
)


def fd_derivative(Fe, mu, K, h=1e-6):
    out = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = h
            out[i, j] = (strain_energy_density(Fe + E, mu, K) - strain_energy_density(Fe - E, mu, K)) / (2 * h)
    return out


def random_F(rng, spread=0.3):
    while True:
        F = np.eye(2) + spread * rng.standard_normal((2, 2))
        if np.linalg.det(F) > 0.2:
            return F


def test_energy_at_identity_is_zero():
    assert strain_energy_density(np.eye(2), 3.0, 7.0) == 0.0


def test_energy_pure_shear_value():
    assert strain_energy_density(np.diag([2.0, 0.5]), 1.0, 1.0) == pytest.approx(1.125, abs=1e-15)


@given(st.floats(-np.pi, np.pi))
def test_energy_rotation_invariant(theta):
    assert strain_energy_density(rotation(theta), 1.0, 2.0) == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=60)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_energy_nonnegative(a, d, b, c):
    F = np.array([[a, b], [c, d]])
    if np.linalg.det(F) <= 0.05:
        return
    assert strain_energy_density(F, 1.0, 1.0) >= -1e-14


@pytest.mark.parametrize("F", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.diag([1.0, -1.0]), np.zeros((2, 2))])
def test_inverted_raises(F):
    with pytest.raises(InvertedElementError):
        strain_energy_density(F, 1.0, 1.0)
    with pytest.raises(InvertedElementError):
        dW_dFe(F, 1.0, 1.0)
    with pytest.raises(InvertedElementError):
        cauchy_stress(F, 1.0, 1.0)


def test_derivative_zero_at_identity():
    assert np.allclose(dW_dFe(np.eye(2), 2.0, 5.0), 0.0, atol=1e-15)


def test_derivative_pure_shear_fd():
    F = np.diag([2.0, 0.5])
    d = dW_dFe(F, 1.0, 0.0)
    assert np.allclose(d, fd_derivative(F, 1.0, 0.0), rtol=1e-8, atol=1e-10)


def test_derivative_random_fd(rng):
    for _ in range(100):
        F = random_F(rng)
        mu, K = rng.uniform(0.1, 3.0, 2)
        d = dW_dFe(F, mu, K)
        fd = fd_derivative(F, mu, K)
        assert np.linalg.norm(d - fd) <= 1e-7 * max(np.linalg.norm(fd), 1e-3)


def test_cauchy_identity_and_symmetry(rng):
    assert np.allclose(cauchy_stress(np.eye(2), 1.0, 1.0), 0.0)
    for _ in range(50):
        s = cauchy_stress(random_F(rng), 1.0, 2.0)
        assert s[0, 1] == s[1, 0]


def test_cauchy_matches_definition(rng):
    for _ in range(30):
        F = random_F(rng)
        J = np.linalg.det(F)
        expected = dW_dFe(F, 0.7, 1.9) @ F.T / J
        assert np.allclose(cauchy_stress(F, 0.7, 1.9), expected, rtol=1e-12, atol=1e-14)


def test_cauchy_objectivity(rng):
    F = random_F(rng)
    R = rotation(0.83)
    s = cauchy_stress(F, 1.0, 1.0)
    assert np.allclose(cauchy_stress(R @ F, 1.0, 1.0), R @ s @ R.T, atol=1e-13)


def test_cauchy_diagonal_for_diagonal_stretch():
    s = cauchy_stress(np.diag([1.7, 1 / 1.7]), 1.0, 1.0)
    assert s[0, 1] == 0.0 and s[0, 0] > 0 > s[1, 1]


def test_piola_identity_growth_and_relation(rng):
    F = random_F(rng)
    assert np.allclose(first_piola_diagnostic(F, np.eye(2), 1.0, 2.0), dW_dFe(F, 1.0, 2.0))
    g = 1.4
    assert np.allclose(first_piola_diagnostic(g * np.eye(2), g * np.eye(2), 1.0, 2.0), 0.0, atol=1e-14)
    for _ in range(20):
        F = random_F(rng)
        G = random_F(rng, 0.2)
        P = first_piola_diagnostic(F, G, 1.0, 2.0)
        Fe = F @ np.linalg.inv(G)
        sigma = cauchy_stress(Fe, 1.0, 2.0)
        assert np.allclose(P @ F.T / np.linalg.det(F), sigma, atol=1e-12)


def test_piola_singular_growth_rejected():
    with pytest.raises(ValueError):
        first_piola_diagnostic(np.eye(2), np.zeros((2, 2)), 1.0, 1.0)


def test_material_params_validation():
    with pytest.raises(ValueError):
        MaterialParams(mu_g=0.0)
    with pytest.raises(ValueError):
        MaterialParams.from_ratio(-1.0)
    m = MaterialParams.from_ratio(0.4, mu_g=2.0, K_g=3.0)
    assert (m.mu_ng, m.K_ng) == pytest.approx((0.8, 1.2))
    mu, K = m.per_triangle(np.array([True, False]))
    assert list(mu) == pytest.approx([2.0, 0.8]) and list(K) == pytest.approx([3.0, 1.2])
    assert m.scaled(2.0).mu_ng == pytest.approx(1.6)
