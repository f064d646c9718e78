import numpy as np
import pytest
from scipy.linalg import expm

from smallmass.core.dynamics import (
    BlowUpError, brownian_increments, coarsen_increments, shift_parameters, simulate, simulate_convolution,
    simulate_coupled, simulate_langevin, simulate_shifted, step,
)
from smallmass.core.noise_model import NoiseStream
from smallmass.core.nonlinearity import PhiSpec
from smallmass.core.propagators import build_propagators
from smallmass.core.spectral_domain import PhaseState, SpectralField
from smallmass.utils.validators import ValidationError


def _first_mode(basis, amplitude=1.0, velocity=0.0):
    return PhaseState(u=SpectralField.mode(basis, 0, amplitude), v=SpectralField.mode(basis, 0, velocity))


def test_config_validation(make_config):
    with pytest.raises(ValidationError) as excinfo:
        make_config(step=0.0)
    assert excinfo.value.code == "nonpositive-step"

    with pytest.raises(ValidationError) as excinfo:
        make_config(horizon=0.0105)
    assert excinfo.value.code == "out-of-range"

    with pytest.raises(ValidationError):
        make_config(scheme="leapfrog")
    with pytest.raises(ValidationError):
        make_config(noise_mode="loud")
    with pytest.raises(ValidationError):
        make_config(mass=-1.0)


def test_noiseless_heat_mode_decays_exactly(basis, make_config):
    config = make_config(mass=0.0, horizon=0.5, stride=50, noise_mode="off", initial=_first_mode(basis))

    trajectory = simulate(config)

    assert trajectory.v is None
    assert np.allclose(trajectory.times, [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5])
    assert trajectory.u[-1, 0] == pytest.approx(np.exp(-0.5), rel=1e-12)
    assert np.all(trajectory.u[:, 1:] == 0)


def test_noiseless_wave_mode_follows_the_oscillator(basis, make_config):
    m, T = 0.1, 0.5
    config = make_config(mass=m, horizon=T, noise_mode="off", initial=_first_mode(basis, 1.0, 0.5))

    trajectory = simulate(config)

    exact = expm(np.array([[0.0, 1.0], [-1.0 / m, -1.0 / m]]) * T) @ np.array([1.0, 0.5])
    assert trajectory.u[-1, 0] == pytest.approx(exact[0], rel=1e-9)
    assert trajectory.v[-1, 0] == pytest.approx(exact[1], rel=1e-9)


def test_strang_agrees_with_exponential_euler_without_forcing(basis, make_config):
    initial = _first_mode(basis, 1.0, -1.0)
    euler = simulate(make_config(noise_mode="off", initial=initial))
    strang = simulate(make_config(noise_mode="off", initial=initial, scheme="strang"))

    assert np.allclose(euler.u, strang.u, rtol=1e-10, atol=1e-14)
    assert np.allclose(euler.v, strang.v, rtol=1e-10, atol=1e-14)


def test_runs_are_reproducible(make_config, canonical_phi):
    config = make_config(phi=canonical_phi, seed=5, stride=10)

    first, second = simulate(config), simulate(config)
    other = simulate(make_config(phi=canonical_phi, seed=6, stride=10))

    assert np.array_equal(first.u, second.u)
    assert np.array_equal(first.v, second.v)
    assert not np.array_equal(first.u[-1], other.u[-1])
    assert len(first) == 6


def test_partial_stride_keeps_the_final_record(make_config):
    trajectory = simulate(make_config(stride=20))
    assert np.allclose(trajectory.times, [0.0, 0.02, 0.04, 0.05])


def test_zero_increments_match_the_noiseless_run(basis, make_config, canonical_phi):
    initial = _first_mode(basis, 2.0)
    config = make_config(phi=canonical_phi, initial=initial)
    driven = simulate(config, increments=np.zeros((config.n_steps, basis.size)))
    silent = simulate(make_config(phi=canonical_phi, initial=initial, noise_mode="off"))

    assert np.allclose(driven.u, silent.u)


def test_convolution_ignores_phi_and_initial_data(basis, make_config, canonical_phi):
    trajectory = simulate_convolution(make_config(phi=canonical_phi, initial=_first_mode(basis, 3.0)))
    assert np.all(trajectory.u[0] == 0)


def test_langevin_needs_mass(basis, make_config):
    with pytest.raises(ValidationError) as excinfo:
        simulate_langevin(make_config(mass=0.0))
    assert excinfo.value.code == "zero-mass"

    trajectory = simulate_langevin(make_config(mass=0.5))
    assert np.all(trajectory.u[0] == 0) and np.all(trajectory.v[0] == 0)
    assert np.any(trajectory.v[-1] != 0)


def test_shift_parameters(make_config, canonical_phi):
    assert shift_parameters(make_config()) == (1, 1.0)
    assert shift_parameters(make_config(phi=canonical_phi)) == (2, 4.0)
    assert shift_parameters(make_config(phi=canonical_phi), alpha_shift=9.0) == (2, 9.0)


def test_shifted_run_carries_its_reference(make_config, canonical_phi):
    trajectory = simulate_shifted(make_config(phi=canonical_phi, stride=10))

    assert trajectory.extras == {"n_bar": 2, "alpha_shift": 4.0}
    assert trajectory.companion is not None
    assert trajectory.companion.u.shape == trajectory.u.shape


def test_coupled_masses_share_the_noise(make_config):
    heavy, heat = simulate_coupled(make_config(stride=10), [0.1, 0.0])

    assert heavy.mass == 0.1 and heat.mass == 0.0
    assert heat.v is None
    assert heavy.u.shape == heat.u.shape


def test_blow_up_is_reported(basis, make_config):
    config = make_config(
        mass=0.0, horizon=1.0, noise_mode="off", phi=PhiSpec.from_pairs([(1.0, 1.9)]),
        initial=_first_mode(basis, 100.0),
    )

    with np.errstate(all="ignore"), pytest.raises(BlowUpError) as excinfo:
        simulate(config)
    assert excinfo.value.step > 0
    assert np.all(np.isfinite(excinfo.value.last_state.u.coeffs))


def test_increment_helpers():
    increments = brownian_increments(3, [0, 1], 4, 0.01, 8)
    assert increments.shape == (2, 8, 4)

    coarse = coarsen_increments(increments, 4)
    assert coarse.shape == (2, 2, 4)
    assert np.allclose(coarse[:, 0], increments[:, :4].sum(axis=1))
    assert np.allclose(coarsen_increments(np.ones((1, 8, 2)), 4), 4.0)


def test_single_steps_follow_the_stream(basis, make_config, smooth_q, canonical_phi):
    config = make_config(phi=canonical_phi, seed=4, horizon=0.005, initial=_first_mode(basis, 0.5))
    table = build_propagators(basis, smooth_q, 0.1, 1e-3)
    stream = NoiseStream(4, 0, basis.size)

    state = config.initial
    for n in range(config.n_steps):
        state = step(state, table, canonical_phi, stream, n)

    trajectory = simulate(config)
    assert np.allclose(state.u.coeffs, trajectory.u[-1], rtol=1e-12, atol=1e-15)
    assert np.allclose(state.v.coeffs, trajectory.v[-1], rtol=1e-12, atol=1e-15)


def test_noiseless_step_keeps_rest(basis, smooth_q, canonical_phi):
    table = build_propagators(basis, smooth_q, 0.0, 1e-3)

    state = step(PhaseState.zeros(basis, with_velocity=False), table, canonical_phi, None, 0)

    assert state.v is None
    assert np.all(state.u.coeffs == 0)
