"""Dirichlet Laplacian eigenstructure on a box, Sobolev norms, projections and sine transforms."""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from smallmass.utils.validators import ValidationError, validate_domain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DomainSpec:
    """Box (0, L_1) x ... x (0, L_d) with n_i retained sine modes per axis."""
    dimension: int
    lengths: Tuple[float, ...]
    modes: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "modes", tuple(int(n) if float(n) == int(n) else n for n in self.modes))
        validate_domain(self.dimension, self.lengths, self.modes)

    @property
    def total_modes(self) -> int:
        return int(np.prod(self.modes))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @classmethod
    def interval(cls, length: float = np.pi, modes: int = 16) -> "DomainSpec":
        return cls(dimension=1, lengths=(length,), modes=(modes,))


@dataclass(frozen=True, eq=False)
class Basis:
    """Sorted Dirichlet eigenbasis of a box.

    ``indices[j]`` is the multi-index of the j-th mode in ascending eigenvalue order
    (lexicographic tie-break) and ``tensor_position[j]`` its flat position in the
    C-ordered (n_1, ..., n_d) coefficient tensor.
    """
    domain: DomainSpec
    indices: np.ndarray
    eigenvalues: np.ndarray
    tensor_position: np.ndarray
    index_map: Dict[Tuple[int, ...], int] = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def grid_shape(self, padded: bool = False) -> Tuple[int, ...]:
        """Interior collocation points per axis: n_i, or 2 n_i + 1 on the dealiased grid."""
        if padded:
            return tuple(2 * n + 1 for n in self.domain.modes)
        return tuple(self.domain.modes)

    def nodes(self, padded: bool = False) -> List[np.ndarray]:
        """Interior nodes x_j = j L / (M + 1), j = 1..M, per axis."""
        return [
            np.arange(1, points + 1) * length / (points + 1)
            for points, length in zip(self.grid_shape(padded), self.domain.lengths)
        ]

    def cell_volume(self, padded: bool = False) -> float:
        return float(np.prod([
            length / (points + 1)
            for points, length in zip(self.grid_shape(padded), self.domain.lengths)
        ]))

    def position(self, multi_index: Sequence[int]) -> int:
        """Sorted position of a multi-index."""
        key = tuple(int(k) for k in multi_index)
        if key not in self.index_map:
            raise ValidationError("out-of-range", f"multi-index {key} is not retained")
        return self.index_map[key]

    # ------------------------------------------------------------------
    # Coefficient-array operations (leading batch axes allowed)
    # ------------------------------------------------------------------

    def norm(self, coeffs: np.ndarray, r: float = 0.0) -> np.ndarray:
        """(sum_k alpha_k^r c_k^2)^(1/2) over the last axis."""
        coeffs = np.asarray(coeffs, dtype=float)
        if r == 0:
            return np.sqrt(np.sum(coeffs * coeffs, axis=-1))
        return np.sqrt(np.sum(self.eigenvalues ** r * coeffs * coeffs, axis=-1))

    def norm_squared(self, coeffs: np.ndarray, r: float = 0.0) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if r == 0:
            return np.sum(coeffs * coeffs, axis=-1)
        return np.sum(self.eigenvalues ** r * coeffs * coeffs, axis=-1)

    def inner(self, a: np.ndarray, b: np.ndarray, r: float = 0.0) -> np.ndarray:
        """<A^{r/2} a, A^{r/2} b>."""
        if r == 0:
            return np.sum(a * b, axis=-1)
        return np.sum(self.eigenvalues ** r * a * b, axis=-1)

    def synthesize(self, coeffs: np.ndarray, padded: bool = False) -> np.ndarray:
        """Grid values of the sine series at interior nodes."""
        coeffs = np.asarray(coeffs, dtype=float)
        batch = coeffs.shape[:-1]
        shape = self.grid_shape(padded)

        tensor = np.zeros(batch + shape)
        modes = self.domain.modes
        flat = np.zeros(batch + (int(np.prod(modes)),))
        flat[..., self.tensor_position] = coeffs
        low = tuple(slice(0, n) for n in modes)
        tensor[(Ellipsis,) + low] = flat.reshape(batch + modes)

        axes = tuple(range(-self.dimension, 0))
        scale = np.prod([np.sqrt(2.0 / length) / 2.0 for length in self.domain.lengths])
        return scale * fft.dstn(tensor, type=1, axes=axes)

    def analyze(self, values: np.ndarray, padded: bool = False) -> np.ndarray:
        """Sine coefficients of grid values, truncated to the retained modes."""
        values = np.asarray(values, dtype=float)
        shape = self.grid_shape(padded)
        if values.shape[-self.dimension:] != shape:
            raise ValidationError(
                "size-mismatch",
                f"grid values of shape {values.shape[-self.dimension:]} do not match {shape}",
            )

        batch = values.shape[:-self.dimension]
        axes = tuple(range(-self.dimension, 0))
        transformed = fft.dstn(values, type=1, axes=axes)

        scale = np.prod([
            length / (points + 1) * np.sqrt(2.0 / length) / 2.0
            for points, length in zip(shape, self.domain.lengths)
        ])
        low = tuple(slice(0, n) for n in self.domain.modes)
        tensor = transformed[(Ellipsis,) + low].reshape(batch + (-1,))
        return scale * tensor[..., self.tensor_position]

    def integrate(self, values: np.ndarray, boundary_value: float = 0.0,
                  padded: bool = True) -> np.ndarray:
        """Tensor trapezoid rule over the box.

        Boundary nodes carry ``boundary_value`` (the integrand at u = 0).
        """
        values = np.asarray(values, dtype=float)
        axes = tuple(range(-self.dimension, 0))
        shape = self.grid_shape(padded)
        cell = self.cell_volume(padded)

        interior = cell * np.sum(values, axis=axes)
        boundary_weight = self.domain.volume - cell * float(np.prod(shape))
        return interior + boundary_value * boundary_weight

    def linf(self, coeffs: np.ndarray) -> np.ndarray:
        values = self.synthesize(coeffs, padded=True)
        axes = tuple(range(-self.dimension, 0))
        return np.max(np.abs(values), axis=axes)

    def projector(self, n: int) -> np.ndarray:
        """0/1 mask keeping the first n sorted modes."""
        if n < 0 or n > self.size:
            raise ValidationError("out-of-range", f"projection order {n} outside [0, {self.size}]")
        mask = np.zeros(self.size)
        mask[:n] = 1.0
        return mask


@lru_cache(maxsize=32)
def build_basis(domain: DomainSpec) -> Basis:
    """Closed-form eigenpairs alpha_k = sum_i (k_i pi / L_i)^2 in sorted order."""
    if not isinstance(domain, DomainSpec):
        raise ValidationError("invalid-domain", "build_basis expects a DomainSpec")

    grids = np.meshgrid(*[np.arange(1, n + 1) for n in domain.modes], indexing="ij")
    tensor_indices = np.stack([g.ravel() for g in grids], axis=-1)
    lengths = np.asarray(domain.lengths)
    alpha = np.sum((tensor_indices * np.pi / lengths) ** 2, axis=-1)

    # ties are compared after rounding so equal sums from different axes stay tied
    rounded = np.round(alpha / alpha.max(), 12)
    keys = tuple(tensor_indices[:, i] for i in reversed(range(domain.dimension))) + (rounded,)
    order = np.lexsort(keys)

    indices = tensor_indices[order]
    index_map = {tuple(int(k) for k in idx): j for j, idx in enumerate(indices)}

    basis = Basis(
        domain=domain,
        indices=indices,
        eigenvalues=alpha[order],
        tensor_position=order,
        index_map=index_map,
    )
    logger.debug(f"Built basis with {basis.size} modes, alpha_1={basis.eigenvalues[0]:.6g}")
    return basis


@dataclass
class SpectralField:
    """Sine coefficients of a function, in sorted eigenvalue order."""
    coeffs: np.ndarray
    basis: Basis

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[-1] != self.basis.size:
            raise ValidationError(
                "size-mismatch", f"{self.coeffs.shape[-1]} coefficients for {self.basis.size} modes"
            )

    @classmethod
    def zeros(cls, basis: Basis) -> "SpectralField":
        return cls(np.zeros(basis.size), basis)

    @classmethod
    def mode(cls, basis: Basis, position: int, amplitude: float = 1.0) -> "SpectralField":
        coeffs = np.zeros(basis.size)
        coeffs[position] = amplitude
        return cls(coeffs, basis)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.coeffs - other.coeffs, self.basis)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.coeffs * scalar, self.basis)

    __rmul__ = __mul__


@dataclass
class PhaseState:
    """Wave-system state (u, v); ``v`` is None for the reaction-diffusion system."""
    u: SpectralField
    v: Optional[SpectralField] = None

    @property
    def basis(self) -> Basis:
        return self.u.basis

    def velocity(self) -> np.ndarray:
        if self.v is None:
            return np.zeros_like(self.u.coeffs)
        return self.v.coeffs

    def stacked(self) -> np.ndarray:
        """(2, N) array of u and v coefficients."""
        return np.stack([self.u.coeffs, self.velocity()])

    @classmethod
    def from_arrays(cls, basis: Basis, u: np.ndarray, v: Optional[np.ndarray] = None) -> "PhaseState":
        return cls(SpectralField(u, basis), None if v is None else SpectralField(v, basis))

    @classmethod
    def zeros(cls, basis: Basis, with_velocity: bool = True) -> "PhaseState":
        return cls(SpectralField.zeros(basis), SpectralField.zeros(basis) if with_velocity else None)


def _require_finite(field: SpectralField) -> None:
    if not np.all(np.isfinite(field.coeffs)):
        raise ValidationError("out-of-range", "field has non-finite coefficients")


def sobolev_norm(field: SpectralField, r: float = 0.0) -> float:
    """H^r norm; r = 0 is the L^2 norm."""
    _require_finite(field)
    return float(field.basis.norm(field.coeffs, r))


def project(field: SpectralField, n: int) -> SpectralField:
    """P_n: keep the first n sorted modes."""
    return SpectralField(field.coeffs * field.basis.projector(n), field.basis)


def to_grid(field: SpectralField, padded: bool = False) -> np.ndarray:
    return field.basis.synthesize(field.coeffs, padded=padded)


def from_grid(values: np.ndarray, basis: Basis, padded: bool = False) -> SpectralField:
    return SpectralField(basis.analyze(values, padded=padded), basis)


def linf_norm(field: SpectralField) -> float:
    """Max |u| over the dealiased collocation grid."""
    return float(field.basis.linf(field.coeffs))


def evaluate_direct(field: SpectralField, points: Sequence[np.ndarray]) -> np.ndarray:
    """Direct summation of the sine series at arbitrary points (one array per axis)."""
    basis = field.basis
    grids = np.meshgrid(*points, indexing="ij")
    total = np.zeros(grids[0].shape)
    for coefficient, multi_index in zip(field.coeffs, basis.indices):
        term = np.full(grids[0].shape, coefficient)
        for axis, k in enumerate(multi_index):
            length = basis.domain.lengths[axis]
            term = term * np.sqrt(2.0 / length) * np.sin(k * np.pi * grids[axis] / length)
        total += term
    return total
