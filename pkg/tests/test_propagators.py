import numpy as np
import pytest
from scipy.linalg import expm

from smallmass.core.noise_model import QSpec
from smallmass.core.propagators import (
    build_propagators, langevin_velocity_variance, stationary_covariance,
)
from smallmass.utils.validators import ValidationError


def _drift(alpha, m):
    return np.array([[0.0, 1.0], [-alpha / m, -1.0 / m]])


def _reference(alpha, q, m, h):
    """Transition, force response and noise covariance of one mode from matrix exponentials."""
    M = _drift(alpha, m)
    transition = expm(M * h)

    augmented = np.zeros((3, 3))
    augmented[:2, :2] = M
    augmented[1, 2] = 1.0 / m
    gains = expm(augmented * h)[:2, 2]

    b = np.array([[0.0], [q / m]])
    van_loan = np.zeros((4, 4))
    van_loan[:2, :2] = -M
    van_loan[:2, 2:] = b @ b.T
    van_loan[2:, 2:] = M.T
    blocks = expm(van_loan * h)
    covariance = blocks[2:, 2:].T @ blocks[:2, 2:]
    return transition, gains, covariance


@pytest.mark.parametrize("m, h", [(0.1, 0.01), (1e-3, 1e-3), (1.0, 0.05)])
def test_wave_tables_match_matrix_exponentials(basis, smooth_q, m, h):
    table = build_propagators(basis, smooth_q, m, h)
    q = smooth_q.values(basis)

    for k, alpha in enumerate(basis.eigenvalues):
        transition, gains, covariance = _reference(alpha, q[k], m, h)
        assert np.allclose(table.transition[:, :, k], transition, rtol=1e-9, atol=1e-12)
        assert np.allclose(table.gains[:, k], gains, rtol=1e-8, atol=1e-14)
        assert np.allclose(table.sigma[:, :, k], covariance, rtol=1e-6, atol=1e-9 * np.abs(covariance).max())


def test_heat_tables(basis, smooth_q):
    h = 0.01
    table = build_propagators(basis, smooth_q, 0.0, h)
    alpha, q = basis.eigenvalues, smooth_q.values(basis)

    assert table.is_heat
    assert np.allclose(table.transition[0, 0], np.exp(-alpha * h))
    assert np.allclose(table.gains[0], (1.0 - np.exp(-alpha * h)) / alpha)
    assert np.allclose(table.sigma[0, 0], q * q * (1.0 - np.exp(-2.0 * alpha * h)) / (2.0 * alpha))
    assert np.all(table.sigma[1, 1] == 0)


@pytest.mark.parametrize("m", [0.0, 0.1])
def test_noise_split_reproduces_the_covariance(basis, smooth_q, m):
    table = build_propagators(basis, smooth_q, m, 0.01)
    a, factor = table.brownian_gain, table.residual_factor

    regression = table.step * a[:, None, :] * a[None, :, :]
    residual = np.einsum("ikn,jkn->ijn", factor, factor)

    scale = np.abs(table.sigma).max(axis=(0, 1))
    assert np.all(np.abs(regression + residual - table.sigma) <= 1e-8 * scale + 1e-18)


def test_tables_are_cached_and_read_only(basis, smooth_q):
    first = build_propagators(basis, smooth_q, 0.1, 0.01)
    second = build_propagators(basis, smooth_q, 0.1, 0.01)

    assert first is second
    with pytest.raises(ValueError):
        first.transition[0, 0, 0] = 2.0


def test_invalid_arguments(basis, smooth_q):
    with pytest.raises(ValidationError) as excinfo:
        build_propagators(basis, smooth_q, 0.1, 0.0)
    assert excinfo.value.code == "nonpositive-step"

    with pytest.raises(ValidationError):
        build_propagators(basis, smooth_q, -0.1, 0.01)

    with pytest.raises(ValidationError):
        build_propagators(basis, smooth_q, 0.0, 0.01, eigenvalues=np.zeros(basis.size))


def test_langevin_table_uses_zero_stiffness(basis):
    q = QSpec.uniform(1.0, basis.size)
    m, h = 0.5, 0.01
    table = build_propagators(basis, q, m, h, eigenvalues=np.zeros(basis.size))

    assert np.allclose(table.transition[1, 1], np.exp(-h / m))
    assert np.allclose(table.transition[0, 0], 1.0)
    assert np.allclose(table.sigma[1, 1], langevin_velocity_variance(np.ones(basis.size), m, h), rtol=1e-6)


def test_closed_form_moments():
    alpha, q = np.array([1.0, 4.0]), np.array([1.0, 0.5])

    sigma = stationary_covariance(alpha, q, 0.2)

    assert np.allclose(sigma[0, 0], q * q / (2.0 * alpha))
    assert np.allclose(sigma[1, 1], q * q / 0.4)
    assert np.all(sigma[0, 1] == 0)
    assert langevin_velocity_variance(np.array([1.0]), 0.5, 100.0)[0] == pytest.approx(1.0)
