import numpy as np
import pytest

from smallmass.core.spectral_domain import (
    DomainSpec, PhaseState, SpectralField, build_basis, evaluate_direct, from_grid, linf_norm, project,
    sobolev_norm, to_grid,
)
from smallmass.utils.validators import ValidationError


def test_interval_eigenvalues_are_squares(basis):
    assert basis.size == 16
    assert np.allclose(basis.eigenvalues, np.arange(1, 17) ** 2)
    assert basis.position((3,)) == 2


def test_square_ties_break_lexicographically():
    square = build_basis(DomainSpec(dimension=2, lengths=(np.pi, np.pi), modes=(3, 3)))

    assert np.allclose(square.eigenvalues, [2, 5, 5, 8, 10, 10, 13, 13, 18])
    assert tuple(square.indices[1]) == (1, 2)
    assert tuple(square.indices[2]) == (2, 1)
    assert square.position((2, 1)) == 2


def test_rectangle_eigenvalues_scale_with_lengths():
    box = build_basis(DomainSpec(dimension=2, lengths=(1.0, 2.0), modes=(2, 2)))
    expected = sorted((k1 * np.pi) ** 2 + (k2 * np.pi / 2.0) ** 2 for k1 in (1, 2) for k2 in (1, 2))
    assert np.allclose(box.eigenvalues, expected)


@pytest.mark.parametrize("padded", [False, True])
def test_analyze_inverts_synthesize(basis, padded):
    rng = np.random.default_rng(0)
    coeffs = rng.standard_normal((3, basis.size))

    values = basis.synthesize(coeffs, padded=padded)

    assert values.shape == (3,) + basis.grid_shape(padded)
    assert np.allclose(basis.analyze(values, padded=padded), coeffs)


def test_synthesis_matches_direct_summation():
    box = build_basis(DomainSpec(dimension=2, lengths=(1.0, 2.0), modes=(4, 3)))
    rng = np.random.default_rng(1)
    field = SpectralField(rng.standard_normal(box.size), box)

    direct = evaluate_direct(field, box.nodes())

    assert np.allclose(to_grid(field), direct)


def test_padded_trapezoid_integrates_squares_exactly(basis):
    rng = np.random.default_rng(2)
    coeffs = rng.standard_normal(basis.size)

    values = basis.synthesize(coeffs, padded=True)

    assert basis.integrate(values ** 2) == pytest.approx(np.sum(coeffs ** 2), rel=1e-12)
    assert basis.integrate(np.ones_like(values), boundary_value=1.0) == pytest.approx(np.pi)


def test_sobolev_norms_weight_by_eigenvalues(basis):
    field = SpectralField.mode(basis, 2, amplitude=2.0)

    assert sobolev_norm(field) == pytest.approx(2.0)
    assert sobolev_norm(field, 1) == pytest.approx(6.0)
    assert sobolev_norm(field, 2) == pytest.approx(18.0)


def test_sobolev_norm_rejects_non_finite(basis):
    coeffs = np.zeros(basis.size)
    coeffs[0] = np.nan

    with pytest.raises(ValidationError) as excinfo:
        sobolev_norm(SpectralField(coeffs, basis))
    assert excinfo.value.code == "out-of-range"


def test_projection_keeps_leading_modes(basis):
    field = SpectralField(np.arange(1.0, basis.size + 1), basis)

    kept = project(field, 3)

    assert np.allclose(kept.coeffs[:3], [1.0, 2.0, 3.0])
    assert np.all(kept.coeffs[3:] == 0)
    with pytest.raises(ValidationError):
        project(field, basis.size + 1)


def test_linf_of_first_mode(basis):
    # the padded grid has 33 points and contains pi / 2
    assert linf_norm(SpectralField.mode(basis, 0)) == pytest.approx(np.sqrt(2.0 / np.pi))


def test_from_grid_checks_shape(basis):
    with pytest.raises(ValidationError) as excinfo:
        from_grid(np.zeros(basis.size + 1), basis)
    assert excinfo.value.code == "size-mismatch"


def test_invalid_domains_are_rejected():
    with pytest.raises(ValidationError) as excinfo:
        DomainSpec(dimension=4, lengths=(1.0,) * 4, modes=(2,) * 4)
    assert excinfo.value.code == "invalid-domain"

    with pytest.raises(ValidationError):
        DomainSpec(dimension=1, lengths=(1.0,), modes=(0,))
    with pytest.raises(ValidationError):
        DomainSpec(dimension=1, lengths=(-1.0,), modes=(4,))


def test_unknown_multi_index(basis):
    with pytest.raises(ValidationError) as excinfo:
        basis.position((17,))
    assert excinfo.value.code == "out-of-range"


def test_field_and_state_shapes(basis):
    with pytest.raises(ValidationError):
        SpectralField(np.zeros(basis.size - 1), basis)

    state = PhaseState.from_arrays(basis, np.ones(basis.size))
    assert state.v is None
    assert state.stacked().shape == (2, basis.size)
    assert np.all(state.velocity() == 0)
