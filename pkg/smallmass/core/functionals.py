"""Lyapunov and energy functionals of wave-system states."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from smallmass.core.nonlinearity import PhiSpec, Potential, l1_potential_batch, lp_norm_power, phi1, validate
from smallmass.core.spectral_domain import Basis, PhaseState
from smallmass.utils.validators import validate_mass

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = [
    "t", "u_H", "u_H1", "u_H2", "v_H", "psi1", "psi2", "V_m", "Phi1_L1", "u_Linf",
]


@dataclass
class FunctionalContext:
    """Mass, nonlinearity (for Phi_1 and lambda) and basis; ``phi=None`` means phi = 0."""
    mass: float
    phi: Optional[PhiSpec]
    basis: Basis
    potential: Optional[Potential] = field(default=None, init=False)

    def __post_init__(self):
        validate_mass(self.mass)
        if self.phi is not None and not self.phi.is_zero:
            validate(self.phi)
            self.potential = phi1(self.phi)

    @property
    def growth(self) -> float:
        if self.phi is None or self.phi.is_zero:
            return 1.0
        return validate(self.phi).growth

    def at_mass(self, mass: float) -> "FunctionalContext":
        return FunctionalContext(mass=mass, phi=self.phi, basis=self.basis)


# ----------------------------------------------------------------------
# Array versions: u, v of shape (..., N)
# ----------------------------------------------------------------------

def psi1_values(basis: Basis, m: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """m |A^{1/2}u|^2 + m^2 |v|^2 + m <u, v> + |u|^2 / 2."""
    return (m * basis.norm_squared(u, 1) + m * m * basis.norm_squared(v)
            + m * basis.inner(u, v) + 0.5 * basis.norm_squared(u))


def psi2_values(basis: Basis, m: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """m |Au|^2 + m^2 |A^{1/2}v|^2 + m <A^{1/2}u, A^{1/2}v> + |A^{1/2}u|^2 / 2."""
    return (m * basis.norm_squared(u, 2) + m * m * basis.norm_squared(v, 1)
            + m * basis.inner(u, v, 1) + 0.5 * basis.norm_squared(u, 1))


def v_m_values(ctx: FunctionalContext, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """m |u|_{H^1}^2 + m^2 |v|^2 + m |u|_{L^{lambda+1}}^{lambda+1} + |u|^2."""
    basis, m = ctx.basis, ctx.mass
    total = basis.norm_squared(u)
    if m > 0:
        total = total + m * basis.norm_squared(u, 1) + m * m * basis.norm_squared(v)
        total = total + m * lp_norm_power(basis, u, ctx.growth + 1.0)
    return total


def potential_l1_values(ctx: FunctionalContext, u: np.ndarray) -> np.ndarray:
    if ctx.potential is None:
        return np.zeros(np.shape(u)[:-1])
    return l1_potential_batch(ctx.basis, u, ctx.potential)


def energy_values(ctx: FunctionalContext, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Psi_1 + 2 m |Phi_1(u)|_{L^1}."""
    total = psi1_values(ctx.basis, ctx.mass, u, v)
    if ctx.mass > 0:
        total = total + 2.0 * ctx.mass * potential_l1_values(ctx, u)
    return total


# ----------------------------------------------------------------------
# State versions
# ----------------------------------------------------------------------

def psi1(state: PhaseState, ctx: FunctionalContext) -> float:
    return float(psi1_values(ctx.basis, ctx.mass, state.u.coeffs, state.velocity()))


def psi2(state: PhaseState, ctx: FunctionalContext) -> float:
    return float(psi2_values(ctx.basis, ctx.mass, state.u.coeffs, state.velocity()))


def v_m(state: PhaseState, ctx: FunctionalContext) -> float:
    return float(v_m_values(ctx, state.u.coeffs, state.velocity()))


def energy(state: PhaseState, ctx: FunctionalContext) -> float:
    return float(energy_values(ctx, state.u.coeffs, state.velocity()))


def functional_table(ctx: FunctionalContext, times: np.ndarray, u: np.ndarray,
                     v: Optional[np.ndarray]) -> pd.DataFrame:
    """Per-record functionals in the trajectory CSV layout."""
    basis = ctx.basis
    v = np.zeros_like(u) if v is None else v
    return pd.DataFrame({
        "t": np.asarray(times, dtype=float),
        "u_H": basis.norm(u),
        "u_H1": basis.norm(u, 1),
        "u_H2": basis.norm(u, 2),
        "v_H": basis.norm(v),
        "psi1": psi1_values(basis, ctx.mass, u, v),
        "psi2": psi2_values(basis, ctx.mass, u, v),
        "V_m": v_m_values(ctx, u, v),
        "Phi1_L1": potential_l1_values(ctx, u),
        "u_Linf": basis.linf(u),
    }, columns=TRAJECTORY_COLUMNS)


# ----------------------------------------------------------------------
# Audits
# ----------------------------------------------------------------------

def psi1_sharp_lower_constant(basis: Basis, m: float) -> float:
    """Largest kappa with Psi_1 >= kappa (m |u|_{H^1}^2 + m^2 |v|^2 + |u|^2), mode by mode."""
    if m == 0:
        return 0.5
    alpha = basis.eigenvalues
    a = (m * alpha + 0.5) / (m * alpha + 1.0)
    b = 0.5 / np.sqrt(m * alpha + 1.0)
    smallest = ((a + 1.0) - np.sqrt((a - 1.0) ** 2 + 4.0 * b * b)) / 2.0
    return float(np.min(smallest))


def random_states(basis: Basis, count: int, rng: np.random.Generator, scale: float = 1.0):
    """Gaussian coefficient pairs with spectrally decaying amplitude."""
    decay = 1.0 / np.sqrt(basis.eigenvalues)
    u = scale * rng.standard_normal((count, basis.size)) * decay
    v = scale * rng.standard_normal((count, basis.size)) * decay
    return u, v


@dataclass
class NonnegativityAudit:
    """Random-state audit of the functionals over a mass list."""
    masses: Sequence[float]
    min_values: Dict[str, float]
    sharp_constants: Dict[float, float]
    quarter_bound_violations: Dict[float, int]
    m_star: float


def nonnegativity_audit(ctx: FunctionalContext, masses: Sequence[float], count: int = 10000,
                        seed: int = 0) -> NonnegativityAudit:
    """Check Psi_1, Psi_2, V_m and the energy are nonnegative; record the sharp Psi_1 constant per mass."""
    rng = np.random.default_rng(seed)
    u, v = random_states(ctx.basis, count, rng, scale=3.0)

    minima = {"psi1": np.inf, "psi2": np.inf, "V_m": np.inf, "energy": np.inf}
    sharp: Dict[float, float] = {}
    quarter: Dict[float, int] = {}
    m_star = 0.0
    for m in sorted(masses):
        local = ctx.at_mass(m)
        p1 = psi1_values(ctx.basis, m, u, v)
        values = {
            "psi1": p1,
            "psi2": psi2_values(ctx.basis, m, u, v),
            "V_m": v_m_values(local, u, v),
            "energy": energy_values(local, u, v),
        }
        for name, arr in values.items():
            minima[name] = min(minima[name], float(np.min(arr)))

        reference = m * ctx.basis.norm_squared(u, 1) + m * m * ctx.basis.norm_squared(v) + ctx.basis.norm_squared(u)
        sharp[m] = psi1_sharp_lower_constant(ctx.basis, m)
        quarter[m] = int(np.sum(p1 < 0.25 * reference - 1e-12 * reference))
        if all(float(np.min(arr)) >= 0 for arr in values.values()):
            m_star = max(m_star, m)

    return NonnegativityAudit(masses=list(masses), min_values=minima, sharp_constants=sharp,
                              quarter_bound_violations=quarter, m_star=m_star)


def equivalence_constants(ctx: FunctionalContext, count: int = 10000, seed: int = 0,
                          scales: Sequence[float] = (0.1, 1.0, 10.0)):
    """Fitted (c, C) with c V_m <= energy <= C (V_m + 1) over random states; returns (c, C, violations)."""
    rng = np.random.default_rng(seed)
    per_scale = max(count // len(scales), 1)
    us, vs = [], []
    for scale in scales:
        u, v = random_states(ctx.basis, per_scale, rng, scale=scale)
        us.append(u)
        vs.append(v)
    u, v = np.concatenate(us), np.concatenate(vs)

    e = energy_values(ctx, u, v)
    vm = v_m_values(ctx, u, v)
    positive = vm > 0
    c = float(np.min(e[positive] / vm[positive])) * (1.0 - 1e-12)
    C = float(np.max(e / (vm + 1.0))) * (1.0 + 1e-12)
    violations = int(np.sum(c * vm > e) + np.sum(e > C * (vm + 1.0)))
    return c, C, violations
