"""Diagonal noise operator Q, its structural checks, and reproducible Gaussian streams."""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from smallmass.config import settings
from smallmass.core.nonlinearity import PhiSpec, validate
from smallmass.core.spectral_domain import Basis, SpectralField
from smallmass.utils.validators import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QSpec:
    """Per-mode noise amplitudes: an explicit list (zero-padded) or sigma (1 + alpha_k)^(-gamma)."""
    coefficients: Optional[Tuple[float, ...]] = None
    sigma: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.coefficients is not None:
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
            if self.sigma is not None or self.gamma is not None:
                raise ValidationError("out-of-range", "give either coefficients or (sigma, gamma), not both")
            if any(c < 0 or not np.isfinite(c) for c in self.coefficients):
                raise ValidationError("out-of-range", "noise coefficients must be finite and nonnegative")
        else:
            if self.sigma is None or self.gamma is None:
                raise ValidationError("out-of-range", "parametric noise needs both sigma and gamma")
            if self.sigma < 0:
                raise ValidationError("out-of-range", f"sigma must be nonnegative, got {self.sigma}")

    @property
    def parametric(self) -> bool:
        return self.coefficients is None

    @classmethod
    def uniform(cls, value: float, count: int) -> "QSpec":
        return cls(coefficients=tuple([value] * count))

    def values(self, basis: Basis) -> np.ndarray:
        """q_k in sorted mode order."""
        if self.parametric:
            return self.sigma * (1.0 + basis.eigenvalues) ** (-self.gamma)

        if len(self.coefficients) > basis.size:
            raise ValidationError(
                "size-mismatch", f"{len(self.coefficients)} noise coefficients for {basis.size} modes"
            )
        values = np.zeros(basis.size)
        values[:len(self.coefficients)] = self.coefficients
        return values

    def to_config(self) -> Dict[str, str]:
        if self.parametric:
            return {"sigma": repr(self.sigma), "gamma": repr(self.gamma)}
        return {"coefficients": ", ".join(repr(c) for c in self.coefficients)}


@dataclass(frozen=True)
class QReport:
    """Derived noise constants; ``n_bar`` is 1-based."""
    n_bar: int
    alpha_n_bar: float
    a_Q: float
    traces: Dict[int, float]
    traces_streaming: Dict[int, float]
    tail_exponent: Optional[float] = None

    def to_dict(self) -> Dict[str, float]:
        report = {"n_bar": self.n_bar, "alpha_n_bar": self.alpha_n_bar, "a_Q": self.a_Q}
        report.update({f"T{r}": value for r, value in self.traces.items()})
        if self.tail_exponent is not None:
            report["tail_exponent"] = self.tail_exponent
        return report


def minimal_forced_index(basis: Basis, a_phi: float) -> int:
    """Smallest 1-based sorted index with alpha_n > a_phi."""
    above = np.nonzero(basis.eigenvalues > a_phi)[0]
    if above.size == 0:
        raise ValidationError(
            "insufficient-modes", f"no retained eigenvalue exceeds a_phi = {a_phi:g}; add modes"
        )
    return int(above[0]) + 1


def check_low_modes(values: np.ndarray, n_bar: int) -> np.ndarray:
    """The first n_bar noise coefficients; all of them must be positive."""
    low = values[:n_bar]
    if np.any(low <= 0):
        first = int(np.argmax(low <= 0)) + 1
        raise ValidationError("degenerate-low-mode", f"q_{first} = 0 but modes up to n_bar = {n_bar} must be forced")
    return low


def trace_moment(q: np.ndarray, eigenvalues: np.ndarray, r: int) -> float:
    return float(np.sum(q * q * eigenvalues ** r))


def trace_moment_streaming(q: np.ndarray, eigenvalues: np.ndarray, r: int, chunk: int = 7) -> float:
    total = 0.0
    for start in range(0, q.size, chunk):
        block = slice(start, start + chunk)
        total += float(np.sum(q[block] ** 2 * eigenvalues[block] ** r))
    return total


def parametric_tail_exponent(gamma: float, dimension: int) -> float:
    """(2/d)(3 - 2 gamma); the continuum trace T_3 converges when this is < -1."""
    return (2.0 / dimension) * (3.0 - 2.0 * gamma)


def validate_q(q: QSpec, phi: PhiSpec, basis: Basis) -> QReport:
    """Low-mode forcing and trace checks of the noise against the nonlinearity."""
    phi_report = validate(phi)
    values = q.values(basis)

    n_bar = minimal_forced_index(basis, phi_report.a_phi)
    low = check_low_modes(values, n_bar)

    tail_exponent = None
    if q.parametric:
        tail_exponent = parametric_tail_exponent(q.gamma, basis.dimension)
        if not tail_exponent < -1.0:
            raise ValidationError(
                "trace-divergent",
                f"gamma = {q.gamma:g} gives tail exponent {tail_exponent:g} >= -1 in dimension {basis.dimension}",
            )

    traces = {r: trace_moment(values, basis.eigenvalues, r) for r in (0, 1, 3)}
    streaming = {r: trace_moment_streaming(values, basis.eigenvalues, r) for r in (0, 1, 3)}

    report = QReport(
        n_bar=n_bar,
        alpha_n_bar=float(basis.eigenvalues[n_bar - 1]),
        a_Q=float(np.min(low)),
        traces=traces,
        traces_streaming=streaming,
        tail_exponent=tail_exponent,
    )
    logger.info(f"Validated Q: n_bar={n_bar}, a_Q={report.a_Q:.6g}, T0={traces[0]:.6g}")
    return report


def apply_q(field: SpectralField, q: QSpec) -> SpectralField:
    return SpectralField(field.coeffs * q.values(field.basis), field.basis)


# ----------------------------------------------------------------------
# Streams
# ----------------------------------------------------------------------

def stream_key(seed: int, trajectory: int) -> np.ndarray:
    """128-bit Philox key mixed from (master seed, trajectory index)."""
    return np.random.SeedSequence([int(seed), int(trajectory)]).generate_state(2, np.uint64)


def draw_block(key: np.ndarray, block: int, steps: int, n_modes: int) -> np.ndarray:
    """Standard normals for one counter block: shape (steps, 3, n_modes).

    Slot 0 is the Brownian increment over the step divided by sqrt(h); slots 1-2 drive the
    conditional residual of the exact linear transition.
    """
    counter = np.array([0, 0, block, 0], dtype=np.uint64)
    generator = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return generator.standard_normal((steps, 3, n_modes))


class NoiseStream:
    """Per-trajectory Gaussian stream addressed by (seed, trajectory, step, mode)."""

    def __init__(self, seed: int, trajectory: int, n_modes: int, chunk_steps: Optional[int] = None):
        self.seed = int(seed)
        self.trajectory = int(trajectory)
        self.n_modes = int(n_modes)
        self.chunk_steps = int(chunk_steps or settings.NOISE_CHUNK_STEPS)
        self._key = stream_key(self.seed, self.trajectory)
        self._block_index = -1
        self._block: Optional[np.ndarray] = None

    def normals(self, step: int) -> np.ndarray:
        """(3, n_modes) standard normals of one step."""
        block = step // self.chunk_steps
        if block != self._block_index:
            self._block = draw_block(self._key, block, self.chunk_steps, self.n_modes)
            self._block_index = block
        return self._block[step % self.chunk_steps]


def sample_increments(stream: NoiseStream, h: float, n_modes: int, step: int) -> np.ndarray:
    """Wiener increments over one step, N(0, h) per mode."""
    if not h > 0:
        raise ValidationError("nonpositive-step", f"step must be positive, got {h}")
    if n_modes > stream.n_modes:
        raise ValidationError("size-mismatch", f"stream carries {stream.n_modes} modes, asked for {n_modes}")
    return np.sqrt(h) * stream.normals(step)[0, :n_modes]


class EnsembleNoise:
    """Stacked streams of a batch of trajectories; ``normals(step)`` has shape (P, 3, N)."""

    def __init__(self, seed: int, trajectories: Sequence[int], n_modes: int, chunk_steps: Optional[int] = None):
        self.seed = int(seed)
        self.trajectories = [int(t) for t in trajectories]
        self.n_modes = int(n_modes)
        self.chunk_steps = int(chunk_steps or settings.NOISE_CHUNK_STEPS)
        self._keys = [stream_key(self.seed, t) for t in self.trajectories]
        self._block_index = -1
        self._block: Optional[np.ndarray] = None

    def normals(self, step: int) -> np.ndarray:
        block = step // self.chunk_steps
        if block != self._block_index:
            self._block = np.stack(
                [draw_block(key, block, self.chunk_steps, self.n_modes) for key in self._keys], axis=0
            )
            self._block_index = block
        return self._block[:, step % self.chunk_steps]
