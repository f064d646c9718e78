import numpy as np
import pytest

from smallmass.core.generator import functional_gradient, generator_apply, generator_check
from smallmass.core.functionals import FunctionalContext, psi2_values
from smallmass.core.noise_model import QSpec, trace_moment
from smallmass.core.spectral_domain import PhaseState, SpectralField
from smallmass.utils.validators import ValidationError


def test_unknown_functional(basis, smooth_q):
    with pytest.raises(ValidationError) as excinfo:
        generator_apply("psi3", PhaseState.zeros(basis), 0.1, None, smooth_q)
    assert excinfo.value.code == "unsupported-functional"


def test_generator_at_rest_is_the_noise_trace(basis, smooth_q, canonical_phi):
    q = smooth_q.values(basis)
    rest = PhaseState.zeros(basis)

    assert generator_apply("energy", rest, 0.1, canonical_phi, smooth_q) == pytest.approx(
        trace_moment(q, basis.eigenvalues, 0))
    assert generator_apply("energy", rest, 0.0, canonical_phi, smooth_q) == pytest.approx(
        0.5 * trace_moment(q, basis.eigenvalues, 0))
    assert generator_apply("psi2", rest, 0.1, None, smooth_q) == pytest.approx(
        trace_moment(q, basis.eigenvalues, 1))


def test_generator_on_a_single_mode(basis, smooth_q, linear_phi):
    state = PhaseState(u=SpectralField.mode(basis, 0), v=SpectralField.zeros(basis))
    trace = trace_moment(smooth_q.values(basis), basis.eigenvalues, 0)

    # -|A^{1/2}u|^2 + <phi(u), u> + T_0 with phi(u) = -u
    assert generator_apply("energy", state, 0.1, linear_phi, smooth_q) == pytest.approx(-2.0 + trace, rel=1e-9)


def test_gradient_matches_finite_differences(basis):
    ctx = FunctionalContext(mass=0.1, phi=None, basis=basis)
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal(basis.size) * 0.1, rng.standard_normal(basis.size) * 0.1
    f = np.zeros(basis.size)

    grad_u, grad_v = functional_gradient("psi2", ctx, u, v, f)

    eps = 1e-6
    bump = np.zeros(basis.size)
    bump[3] = eps
    du = (psi2_values(basis, 0.1, u + bump, v) - psi2_values(basis, 0.1, u - bump, v)) / (2 * eps)
    dv = (psi2_values(basis, 0.1, u, v + bump) - psi2_values(basis, 0.1, u, v - bump)) / (2 * eps)
    assert grad_u[3] == pytest.approx(du, rel=1e-6, abs=1e-6)
    assert grad_v[3] == pytest.approx(dv, rel=1e-6, abs=1e-6)


def test_heat_generator_without_noise_is_the_derivative(basis, linear_phi):
    state = PhaseState.from_arrays(basis, np.eye(basis.size)[0])
    silent = QSpec(coefficients=())

    check = generator_check("psi2", state, 0.0, linear_phi, silent, step=1e-4, paths=10)

    assert check.closed_form == pytest.approx(-2.0)
    assert check.relative_error < 1e-3


def test_monte_carlo_generator_check(basis, smooth_q, linear_phi):
    state = PhaseState(u=SpectralField.mode(basis, 0), v=SpectralField.zeros(basis))

    check = generator_check("energy", state, 0.1, linear_phi, smooth_q, step=1e-3, paths=8000, seed=3)

    assert check.paths == 8000
    assert check.relative_error < 0.05
    assert abs(check.estimate.mean - check.closed_form) <= 4 * check.estimate.half_width + 0.01 * abs(check.closed_form)
