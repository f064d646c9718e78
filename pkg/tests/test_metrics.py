import numpy as np
import pytest

from smallmass.core.functionals import random_states
from smallmass.core.metrics import (
    EmpiricalMeasure, MetricParams, brute_force_assignment, clipped_norm_observable, d_N_beta, dtilde_0,
    dtilde_0_rows, dtilde_m, dtilde_m_rows, dual_lower_bound, pairwise_cost, rho_beta, triangle_audit,
    wasserstein,
)
from smallmass.core.spectral_domain import PhaseState
from smallmass.utils.validators import ValidationError


def _pair(basis, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    u, v = random_states(basis, 2, rng, scale=scale)
    return PhaseState.from_arrays(basis, u[0], v[0]), PhaseState.from_arrays(basis, u[1], v[1])


@pytest.mark.parametrize("kwargs", [{"N": 0.0, "beta": 0.1}, {"N": 1.0, "beta": -0.1}, {"N": 1.0, "beta": 0.1, "nodes": 1}])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValidationError):
        MetricParams(**kwargs)


def test_unweighted_rho_is_the_phase_distance(basis):
    first, second = _pair(basis)
    m = 0.1
    du, dv = first.u.coeffs - second.u.coeffs, first.v.coeffs - second.v.coeffs
    expected = np.sqrt(basis.norm_squared(du) + m * basis.norm_squared(du, 1) + m * m * basis.norm_squared(dv))

    assert rho_beta(first, second, MetricParams(N=1.0, beta=0.0, mass=m)) == pytest.approx(expected)
    assert rho_beta(first, second, MetricParams(N=1.0, beta=0.0)) == pytest.approx(basis.norm(du))


def test_weight_only_increases_rho(basis, canonical_phi):
    first, second = _pair(basis)
    plain = MetricParams(N=1.0, beta=0.0, mass=0.1, phi=canonical_phi)

    assert rho_beta(first, second, plain.with_beta(0.05)) >= rho_beta(first, second, plain)
    assert d_N_beta(first, second, MetricParams(N=100.0, beta=0.05, mass=0.1)) == 1.0


def test_distance_like_functions_vanish_on_the_diagonal(basis):
    first, _ = _pair(basis)
    params = MetricParams(N=1.0, beta=0.05, mass=0.1)

    assert dtilde_m(first, first, params) == 0.0
    assert dtilde_0(first, first, params) == 0.0


def test_dtilde_m_dominates_dtilde_0(basis, canonical_phi):
    rng = np.random.default_rng(5)
    u1, v1 = random_states(basis, 200, rng)
    u2, v2 = random_states(basis, 200, rng)
    params = MetricParams(N=2.0, beta=0.05, mass=0.1, phi=canonical_phi)

    upper = dtilde_m_rows(basis, params, u1, v1, u2, v2)
    lower = dtilde_0_rows(basis, params, u1, u2)

    assert np.all(upper >= lower * (1.0 - 1e-12))


def test_transport_between_translates(basis):
    rng = np.random.default_rng(6)
    samples = random_states(basis, 20, rng)[0]
    shift = np.zeros(basis.size)
    shift[0] = 0.3
    params = MetricParams(N=1.0, beta=0.0)

    A = EmpiricalMeasure(basis=basis, u=samples)
    B = EmpiricalMeasure(basis=basis, u=samples + shift)

    assert wasserstein(A, A, "H", params) == 0.0
    assert wasserstein(A, B, "H", params) == pytest.approx(0.3, rel=1e-9)


@pytest.mark.parametrize("ground", ["H", "dtilde_0", "rho", "d", "dtilde_m"])
def test_assignment_matches_brute_force(basis, ground):
    rng = np.random.default_rng(7)
    A = EmpiricalMeasure(basis=basis, u=random_states(basis, 5, rng)[0], v=random_states(basis, 5, rng)[1])
    B = EmpiricalMeasure(basis=basis, u=random_states(basis, 5, rng)[0], v=random_states(basis, 5, rng)[1])
    params = MetricParams(N=1.0, beta=0.05, mass=0.1)

    exact = wasserstein(A, B, ground, params)

    assert exact == pytest.approx(brute_force_assignment(pairwise_cost(A, B, ground, params)), rel=1e-12)


def test_dual_bound_never_exceeds_the_transport_cost(basis):
    rng = np.random.default_rng(8)
    A = EmpiricalMeasure(basis=basis, u=random_states(basis, 30, rng, scale=0.5)[0])
    B = EmpiricalMeasure(basis=basis, u=random_states(basis, 30, rng, scale=2.0)[0])
    params = MetricParams(N=1.0, beta=0.1)

    bound = dual_lower_bound(clipped_norm_observable(basis, params.N), 1.0, A, B)

    assert 0 < bound <= wasserstein(A, B, "dtilde_0", params) + 1e-12
    with pytest.raises(ValidationError) as excinfo:
        dual_lower_bound(clipped_norm_observable(basis, 1.0), 0.0, A, B)
    assert excinfo.value.code == "zero-Lipschitz-constant"


def test_transport_size_checks(basis):
    params = MetricParams(N=1.0, beta=0.0)
    A = EmpiricalMeasure(basis=basis, u=np.zeros((3, basis.size)))
    B = EmpiricalMeasure(basis=basis, u=np.zeros((4, basis.size)))

    with pytest.raises(ValidationError) as excinfo:
        wasserstein(A, B, "H", params)
    assert excinfo.value.code == "size-mismatch"

    big = EmpiricalMeasure(basis=basis, u=np.zeros((1025, basis.size)))
    with pytest.raises(ValidationError) as excinfo:
        wasserstein(big, big, "H", params)
    assert excinfo.value.code == "size-exceeded"

    with pytest.raises(ValidationError):
        pairwise_cost(A, A, "sup", params)


def test_overflowing_weights_are_flagged(basis):
    rng = np.random.default_rng(9)
    A = EmpiricalMeasure(basis=basis, u=random_states(basis, 4, rng, scale=5.0)[0])
    B = EmpiricalMeasure(basis=basis, u=random_states(basis, 4, rng, scale=5.0)[0])

    with pytest.raises(ValidationError) as excinfo:
        wasserstein(A, B, "dtilde_0", MetricParams(N=1.0, beta=1e4))
    assert excinfo.value.code == "overflow"


def test_measure_shapes(basis):
    with pytest.raises(ValidationError):
        EmpiricalMeasure(basis=basis, u=np.zeros((2, basis.size)), v=np.zeros((3, basis.size)))

    measure = EmpiricalMeasure(basis=basis, u=np.zeros((2, basis.size)), v=np.zeros((2, basis.size)))
    assert measure.kind == "phase"
    assert measure.marginal().kind == "marginal"
    assert measure.marginal().v is None


def test_triangle_audit_is_self_consistent(basis):
    audit = triangle_audit(MetricParams(N=1.0, beta=0.05), basis, triples=4, size=8)

    assert np.isfinite(audit.constant)
    assert audit.violations == 0
    assert audit.triples == 4


def test_brute_force_assignment():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert brute_force_assignment(cost) == pytest.approx(5.0 / 3.0)
