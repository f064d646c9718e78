"""Signed-power nonlinearities: evaluation, validation, potentials, cutoffs and inequality checks."""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from smallmass.config import settings
from smallmass.core.spectral_domain import SpectralField
from smallmass.utils.validators import ValidationError

logger = logging.getLogger(__name__)

_ZERO_COEFFICIENT = 1e-14


def signed_power(x: np.ndarray, p: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** p


@dataclass(frozen=True)
class PhiSpec:
    """phi(x) = sum_j c_j sign(x) |x|^{p_j}; equal powers are merged, zero terms dropped."""
    terms: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        merged: Dict[float, float] = {}
        for coefficient, power in self.terms:
            merged[float(power)] = merged.get(float(power), 0.0) + float(coefficient)
        cleaned = tuple(sorted(
            ((c, p) for p, c in merged.items() if abs(c) > _ZERO_COEFFICIENT),
            key=lambda term: term[1],
        ))
        object.__setattr__(self, "terms", cleaned)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "PhiSpec":
        return cls(tuple((float(c), float(p)) for c, p in pairs))

    @property
    def growth(self) -> float:
        """lambda = largest power."""
        if not self.terms:
            return 1.0
        return max(p for _, p in self.terms)

    @property
    def leading_coefficient(self) -> float:
        if not self.terms:
            return 0.0
        lam = self.growth
        return sum(c for c, p in self.terms if p == lam)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for c, p in self.terms:
            total = total + (c * x if p == 1.0 else c * signed_power(x, p))
        return total

    def eval_deriv(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for c, p in self.terms:
            total = total + (c if p == 1.0 else c * p * np.abs(x) ** (p - 1.0))
        return total

    def phi2(self, x):
        """Phi_2(x) = -int_0^x phi, term-wise."""
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for c, p in self.terms:
            total = total - c * np.abs(x) ** (p + 1.0) / (p + 1.0)
        return total

    def to_config(self) -> str:
        return ", ".join(f"{c!r}:{p!r}" for c, p in self.terms)


@dataclass(frozen=True)
class PhiReport:
    """Grid-certified constants of a validated nonlinearity."""
    growth: float
    a_phi: float
    a1: float
    a2: float
    a3: float
    a4: float
    sup_deriv_unit: float
    grid_min: float
    grid_max: float
    grid_points: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "lambda": self.growth, "a_phi": self.a_phi, "a1": self.a1, "a2": self.a2,
            "a3": self.a3, "a4": self.a4, "sup_deriv_unit": self.sup_deriv_unit,
        }


def validation_grid() -> np.ndarray:
    """{0} plus the log-spaced certification abscissae."""
    positive = np.logspace(
        math.log10(settings.VALIDATION_GRID_MIN),
        math.log10(settings.VALIDATION_GRID_MAX),
        settings.VALIDATION_GRID_POINTS,
    )
    return np.concatenate([[0.0], positive])


def _refined_max(fn: Callable[[np.ndarray], np.ndarray], grid: np.ndarray) -> Tuple[float, int]:
    """Grid maximum of fn refined by a bounded scalar search between neighbours."""
    values = fn(grid)
    best = int(np.argmax(values))
    best_value = float(values[best])

    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    if hi > lo:
        result = optimize.minimize_scalar(
            lambda x: -float(fn(np.asarray(x))), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-14 * max(1.0, hi)},
        )
        if result.success:
            best_value = max(best_value, -float(result.fun))

    return best_value, best


def _residual_is_tail_bounded(phi: PhiSpec, a2: float) -> bool:
    """Leading power of x phi(x) + a2 |x|^{lambda+1} has a negative coefficient (or vanishes)."""
    residual: Dict[float, float] = {}
    for c, p in phi.terms:
        residual[p + 1.0] = residual.get(p + 1.0, 0.0) + c
    key = phi.growth + 1.0
    residual[key] = residual.get(key, 0.0) + a2

    live = {p: c for p, c in residual.items() if abs(c) > 1e-12}
    if not live:
        return True
    return live[max(live)] < 0


@lru_cache(maxsize=64)
def validate(phi: PhiSpec) -> PhiReport:
    """Check the growth, derivative and dissipativity conditions and certify constants on the grid."""
    if phi.is_zero:
        raise ValidationError("out-of-range", "nonlinearity needs at least one nonzero term")

    powers = [p for _, p in phi.terms]
    if min(powers) < 1.0:
        raise ValidationError("growth-out-of-range", f"powers must be >= 1, got {min(powers)}")

    lam = phi.growth
    if lam >= 2.0:
        raise ValidationError("growth-out-of-range", f"lambda = {lam:g} must lie in [1, 2)")

    leading = phi.leading_coefficient
    if leading >= 0:
        if lam > 1.0:
            raise ValidationError("unbounded-derivative", f"leading coefficient {leading:g} >= 0 makes sup phi' infinite")
        raise ValidationError("not-dissipative", f"leading coefficient {leading:g} is not dissipative")

    grid = validation_grid()

    a_phi, _ = _refined_max(phi.eval_deriv, grid)

    # largest admissible fraction of the leading coefficient, then the matching a3
    a2 = a3 = None
    for fraction in [1.0] + [0.95 - 0.05 * i for i in range(19)]:
        candidate = fraction * abs(leading)
        if not _residual_is_tail_bounded(phi, candidate):
            continue
        residual = lambda x, c=candidate: x * phi.eval(x) + c * np.abs(x) ** (lam + 1.0)
        peak, where = _refined_max(residual, grid)
        if where == grid.size - 1:
            continue
        a2 = candidate
        a3 = max(peak * (1.0 + 1e-10) + 1e-12, settings.A3_FLOOR)
        break

    if a2 is None:
        raise ValidationError("not-dissipative", "no dissipativity constant certified on the grid")

    a1 = max(float(np.max(np.abs(phi.eval(grid)) / (1.0 + grid ** lam))), abs(leading))
    a4 = max(
        float(np.max(np.abs(phi.eval_deriv(grid)) / (grid ** (lam - 1.0) + 1.0))),
        abs(leading) * lam,
    )

    unit = np.linspace(0.0, 1.0, 4001)
    sup_deriv_unit = float(np.max(np.abs(phi.eval_deriv(unit))))

    report = PhiReport(
        growth=lam, a_phi=a_phi, a1=a1, a2=a2, a3=a3, a4=a4,
        sup_deriv_unit=sup_deriv_unit,
        grid_min=settings.VALIDATION_GRID_MIN, grid_max=settings.VALIDATION_GRID_MAX,
        grid_points=settings.VALIDATION_GRID_POINTS,
    )
    logger.info(f"Validated phi: lambda={lam:g}, a_phi={a_phi:.6g}, a2={a2:.6g}, a3={a3:.6g}")
    return report


def eval(phi: PhiSpec, x):
    return phi.eval(x)


def eval_deriv(phi: PhiSpec, x):
    return phi.eval_deriv(x)


def phi2(phi: PhiSpec, x):
    return phi.phi2(x)


@dataclass(frozen=True)
class Potential:
    """Phi_2 + shift; with the shift from ``phi1`` it is the potential Phi_1 >= 1."""
    phi: PhiSpec
    shift: float = 0.0
    c_phi: float = float("nan")
    C_phi: float = float("nan")

    def __call__(self, x):
        return self.phi.phi2(x) + self.shift

    @property
    def at_zero(self) -> float:
        return self.shift


def phi1(phi: PhiSpec) -> Potential:
    """Potential Phi_1 = Phi_2 + K >= 1 with its growth constants (c_phi, C_phi)."""
    report = validate(phi)
    lam = report.growth
    grid = validation_grid()

    values = phi.phi2(grid)
    shift = 1.0 + max(0.0, -float(np.min(values)))
    potential_values = values + shift

    tail = abs(phi.leading_coefficient) / (lam + 1.0)
    positive = grid > 0
    lower = float(np.min(potential_values[positive] / grid[positive] ** (lam + 1.0)))
    upper = float(np.max(potential_values / (grid ** (lam + 1.0) + 1.0)))
    c_phi = min(lower, tail) * (1.0 - 1e-12)
    C_phi = max(upper, tail) * (1.0 + 1e-12)

    violations = np.sum(c_phi * grid ** (lam + 1.0) > potential_values) + np.sum(
        potential_values > C_phi * (grid ** (lam + 1.0) + 1.0)
    )
    if c_phi <= 0 or violations:
        raise ValidationError("bound-fit-failed", f"potential bounds violated at {int(violations)} grid points")

    return Potential(phi=phi, shift=shift, c_phi=c_phi, C_phi=C_phi)


def phi2_potential(phi: PhiSpec) -> Potential:
    return Potential(phi=phi, shift=0.0)


# ----------------------------------------------------------------------
# Cutoff
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffSpec:
    """theta_R: 1 on |x| <= R, 0 on |x| >= R + width, quintic smoothstep between."""
    radius: float
    width: float = 1.0
    order: int = 5

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("out-of-range", f"cutoff radius must be positive, got {self.radius}")

    def theta(self, x):
        t = np.clip((np.abs(np.asarray(x, dtype=float)) - self.radius) / self.width, 0.0, 1.0)
        return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)

    def theta_deriv(self, x):
        x = np.asarray(x, dtype=float)
        t = np.clip((np.abs(x) - self.radius) / self.width, 0.0, 1.0)
        return -np.sign(x) * 30.0 * t * t * (1.0 - t) ** 2 / self.width


@dataclass(frozen=True)
class TruncatedPhi:
    """Pointwise phi(x) theta_R(x)."""
    phi: PhiSpec
    cutoff: CutoffSpec

    @property
    def is_zero(self) -> bool:
        return self.phi.is_zero

    def eval(self, x):
        return self.phi.eval(x) * self.cutoff.theta(x)

    def eval_deriv(self, x):
        return self.phi.eval_deriv(x) * self.cutoff.theta(x) + self.phi.eval(x) * self.cutoff.theta_deriv(x)

    def lipschitz_constant(self, points: int = 20001) -> float:
        x = np.linspace(0.0, self.cutoff.radius + self.cutoff.width, points)
        return float(np.max(np.abs(self.eval_deriv(x))))


def truncate(phi: PhiSpec, cutoff: CutoffSpec) -> TruncatedPhi:
    return TruncatedPhi(phi=phi, cutoff=cutoff)


# ----------------------------------------------------------------------
# Auxiliary inequalities
# ----------------------------------------------------------------------

@dataclass
class InequalityReport:
    """Outcome of the pointwise nonlinearity inequalities at a sample set."""
    epsilon: float
    checked: int
    violations: Dict[str, int]
    first_violation: Optional[Dict[str, float]] = None

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())


def _exceeds(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    scale = 1.0 + np.abs(lhs) + np.abs(rhs)
    return lhs > rhs + 1e-9 * scale


def _inequality_terms(phi: PhiSpec, report: PhiReport, epsilon: float, x: np.ndarray, y: np.ndarray):
    lam = report.growth
    bound = max(report.sup_deriv_unit, 2.0 * report.a1)
    ratio = (2.0 * report.a3 / report.a2) ** ((lam - 1.0) / (lam + 1.0))
    ax, diff = np.abs(x), np.abs(x - y)

    return {
        "growth": (np.abs(phi.eval(x)), bound * (ax + ax ** lam)),
        "increment": (
            np.abs(phi.eval(x) - phi.eval(y)),
            2.0 ** lam * report.a4 * diff * (diff ** (lam - 1.0) + np.abs(y) ** (lam - 1.0) + 1.0),
        ),
        "dissipation": (x * phi.eval(x), (report.a_phi + epsilon) * x * x - epsilon / ratio * ax ** (lam + 1.0)),
        "potential-lower": (
            -0.5 * (report.a_phi + epsilon) * x * x + epsilon / ((lam + 1.0) * ratio) * ax ** (lam + 1.0),
            phi.phi2(x),
        ),
        "potential-upper": (phi.phi2(x), bound * (x * x + ax ** (lam + 1.0)) + 0.5 * report.a_phi * x * x),
    }


def choose_epsilon(phi: PhiSpec, report: PhiReport) -> float:
    """Largest 2^{-k} for which the epsilon-dependent inequalities hold on the validation grid."""
    grid = validation_grid()
    for k in range(1, 41):
        epsilon = 2.0 ** -k
        terms = _inequality_terms(phi, report, epsilon, grid, grid)
        if not any(np.any(_exceeds(*terms[name])) for name in ("dissipation", "potential-lower")):
            return epsilon
    return 2.0 ** -40


def check_inequalities(phi: PhiSpec, samples: Sequence[Tuple[float, float]],
                   epsilon: Optional[float] = None) -> InequalityReport:
    """Evaluate the five auxiliary nonlinearity inequalities at sample pairs (x, y)."""
    report = validate(phi)
    if epsilon is None:
        epsilon = choose_epsilon(phi, report)

    pairs = np.asarray(samples, dtype=float).reshape(-1, 2)
    x, y = pairs[:, 0], pairs[:, 1]
    terms = _inequality_terms(phi, report, epsilon, x, y)

    violations: Dict[str, int] = {}
    first: Optional[Dict[str, float]] = None
    for name, (lhs, rhs) in terms.items():
        bad = _exceeds(lhs, rhs)
        violations[name] = int(np.sum(bad))
        if first is None and violations[name]:
            i = int(np.argmax(bad))
            first = {"inequality": name, "x": float(x[i]), "y": float(y[i]),
                     "lhs": float(lhs[i]), "rhs": float(rhs[i])}

    if first is not None:
        logger.warning(f"Nonlinearity inequality violated: {first}")

    return InequalityReport(epsilon=epsilon, checked=len(x), violations=violations, first_violation=first)


def l1_potential(field: SpectralField, pot: Callable) -> float:
    """int_O pot(u(x)) dx on the padded grid."""
    basis = field.basis
    values = basis.synthesize(field.coeffs, padded=True)
    at_zero = float(pot(np.asarray(0.0)))
    return float(basis.integrate(pot(values), boundary_value=at_zero, padded=True))


def l1_potential_batch(basis, coeffs: np.ndarray, pot: Callable) -> np.ndarray:
    values = basis.synthesize(coeffs, padded=True)
    at_zero = float(pot(np.asarray(0.0)))
    return basis.integrate(pot(values), boundary_value=at_zero, padded=True)


def lp_norm_power(basis, coeffs: np.ndarray, power: float) -> np.ndarray:
    """int_O |u|^power on the padded grid."""
    values = basis.synthesize(coeffs, padded=True)
    return basis.integrate(np.abs(values) ** power, boundary_value=0.0, padded=True)
