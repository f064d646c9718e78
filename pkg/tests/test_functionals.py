import numpy as np
import pytest

from smallmass.core.functionals import (
    TRAJECTORY_COLUMNS, FunctionalContext, energy, energy_values, equivalence_constants, functional_table,
    nonnegativity_audit, psi1, psi1_sharp_lower_constant, psi1_values, psi2_values, random_states, v_m,
)
from smallmass.core.spectral_domain import PhaseState


def test_heat_limits_of_the_functionals(basis):
    rng = np.random.default_rng(0)
    u, v = random_states(basis, 5, rng)

    assert np.allclose(psi1_values(basis, 0.0, u, v), 0.5 * basis.norm_squared(u))
    assert np.allclose(psi2_values(basis, 0.0, u, v), 0.5 * basis.norm_squared(u, 1))


def test_single_mode_values(basis):
    m = 0.2
    state = PhaseState.from_arrays(basis, np.eye(basis.size)[1] * 2.0, np.eye(basis.size)[1])
    ctx = FunctionalContext(mass=m, phi=None, basis=basis)

    # alpha_2 = 4: m 4 u^2 + m^2 v^2 + m u v + u^2 / 2 with u = 2, v = 1
    assert psi1(state, ctx) == pytest.approx(m * 16 + m * m + m * 2 + 2.0)
    assert energy(state, ctx) == pytest.approx(psi1(state, ctx))
    assert v_m(state, ctx) == pytest.approx(4.0 + m * 16 + m * m + m * 4.0, rel=1e-12)


def test_energy_adds_the_potential(basis, canonical_phi):
    ctx = FunctionalContext(mass=0.1, phi=canonical_phi, basis=basis)
    zero = np.zeros((1, basis.size))

    assert energy_values(ctx, zero, zero)[0] == pytest.approx(2.0 * 0.1 * ctx.potential.shift * np.pi)
    assert ctx.growth == 1.5


def test_table_layout(basis, canonical_phi):
    ctx = FunctionalContext(mass=0.1, phi=canonical_phi, basis=basis)
    u, v = random_states(basis, 4, np.random.default_rng(1))

    table = functional_table(ctx, np.arange(4) * 0.1, u, v)

    assert list(table.columns) == TRAJECTORY_COLUMNS
    assert len(table) == 4
    assert np.allclose(table["u_H1"], basis.norm(u, 1))
    assert np.all(table["Phi1_L1"] > 0)

    heat = functional_table(FunctionalContext(mass=0.0, phi=None, basis=basis), np.arange(4), u, None)
    assert np.all(heat["v_H"] == 0)
    assert np.all(heat["Phi1_L1"] == 0)


def test_functionals_are_nonnegative(basis, canonical_phi):
    ctx = FunctionalContext(mass=0.1, phi=canonical_phi, basis=basis)
    masses = [1.0, 0.1, 0.01]

    audit = nonnegativity_audit(ctx, masses, count=2000)

    assert all(value >= 0 for value in audit.min_values.values())
    assert audit.m_star == 1.0
    assert psi1_sharp_lower_constant(basis, 0.0) == 0.5
    for m in masses:
        assert 0 < audit.sharp_constants[m] <= 0.5 + 1e-12


def test_equivalence_constants(basis, canonical_phi):
    ctx = FunctionalContext(mass=0.1, phi=canonical_phi, basis=basis)

    c, C, violations = equivalence_constants(ctx, count=3000)

    assert c > 0 and C > 0
    assert np.isfinite(C)
    assert violations == 0
