"""Closed-form generator of the energy functionals and its short-time Monte Carlo check."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from smallmass.core.dynamics import Nonlinearity, System
from smallmass.core.functionals import FunctionalContext, energy_values, psi2_values
from smallmass.core.noise_model import EnsembleNoise, QSpec, trace_moment
from smallmass.core.nonlinearity import TruncatedPhi
from smallmass.core.propagators import build_propagators
from smallmass.core.spectral_domain import PhaseState
from smallmass.utils.calculations import MeanEstimate, calculate_mean_estimate
from smallmass.utils.validators import ValidationError, validate_mass

logger = logging.getLogger(__name__)

FUNCTIONALS = ("energy", "psi2")


def _force(state: PhaseState, nonlinearity: Optional[Nonlinearity]) -> np.ndarray:
    basis = state.basis
    if nonlinearity is None or nonlinearity.is_zero:
        return np.zeros(basis.size)
    grid = basis.synthesize(state.u.coeffs, padded=True)
    return basis.analyze(nonlinearity.eval(grid), padded=True)


def _check_tag(tag: str) -> None:
    if tag not in FUNCTIONALS:
        raise ValidationError("unsupported-functional", f"generator known for {FUNCTIONALS}, got {tag!r}")


def generator_apply(tag: str, state: PhaseState, m: float, phi: Optional[Nonlinearity], q: QSpec) -> float:
    """L^m g at ``state`` for g = energy (Psi_1 + 2m |Phi_1|_{L^1}) or Psi_2.

    For m = 0 the heat generator acts on the m = 0 functionals, 1/2 |u|^2 and 1/2 |A^{1/2}u|^2.
    """
    _check_tag(tag)
    validate_mass(m)
    basis = state.basis
    if not (np.all(np.isfinite(state.u.coeffs)) and np.all(np.isfinite(state.velocity()))):
        raise ValidationError("out-of-range", "generator needs a finite state")

    u, v = state.u.coeffs, state.velocity()
    f = _force(state, phi)
    noise = q.values(basis)
    alpha = basis.eigenvalues

    if tag == "energy":
        trace = trace_moment(noise, alpha, 0)
        if m == 0:
            return float(-basis.norm_squared(u, 1) + basis.inner(u, f) + 0.5 * trace)
        return float(-basis.norm_squared(u, 1) - m * basis.norm_squared(v) + basis.inner(f, u) + trace)

    trace = trace_moment(noise, alpha, 1)
    if m == 0:
        return float(-basis.norm_squared(u, 2) + basis.inner(u, f, 1) + 0.5 * trace)
    return float(
        -basis.norm_squared(u, 2) - m * basis.norm_squared(v, 1) + trace
        + 2.0 * m * basis.inner(f, v, 1) + basis.inner(f, u, 1)
    )


def functional_values(tag: str, ctx: FunctionalContext, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    _check_tag(tag)
    if tag == "energy":
        return energy_values(ctx, u, v)
    return psi2_values(ctx.basis, ctx.mass, u, v)


def functional_gradient(tag: str, ctx: FunctionalContext, u: np.ndarray, v: np.ndarray,
                        f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(d/du, d/dv) of the functional; ``f`` is the projected phi(u), the negative gradient of Phi_1."""
    _check_tag(tag)
    m, alpha = ctx.mass, ctx.basis.eigenvalues
    if tag == "energy":
        if m == 0:
            return u, np.zeros_like(v)
        return 2.0 * m * alpha * u + m * v + u - 2.0 * m * f, 2.0 * m * m * v + m * u
    if m == 0:
        return alpha * u, np.zeros_like(v)
    return (2.0 * m * alpha ** 2 * u + m * alpha * v + alpha * u,
            2.0 * m * m * alpha * v + m * alpha * u)


@dataclass
class GeneratorCheck:
    """Monte Carlo estimate of (E g(X_h) - g(x)) / h against the closed form."""
    tag: str
    closed_form: float
    estimate: MeanEstimate
    relative_error: float
    paths: int


def generator_check(tag: str, state: PhaseState, m: float, phi: Optional[Nonlinearity], q: QSpec,
                    step: float = 1e-3, paths: int = 100000, seed: int = 0,
                    control_variate: bool = True, chunk: int = 10000) -> GeneratorCheck:
    """Short-time Ito check of ``generator_apply`` over one exact step from ``state``.

    With ``control_variate`` the zero-mean term <grad g(x), xi> is subtracted path by path.
    """
    _check_tag(tag)
    basis = state.basis
    spec = phi.phi if isinstance(phi, TruncatedPhi) else phi
    ctx = FunctionalContext(mass=m, phi=spec, basis=basis)
    table = build_propagators(basis, q, m, step)
    system = System(basis, table, nonlinearity=phi)

    u0, v0 = state.u.coeffs, state.velocity() if m > 0 else np.zeros(basis.size)
    start = float(functional_values(tag, ctx, u0, v0))
    grad_u, grad_v = functional_gradient(tag, ctx, u0, v0, _force(state, phi))

    quotients = []
    for first in range(0, paths, chunk):
        rows = list(range(first, min(first + chunk, paths)))
        normals = EnsembleNoise(seed, rows, basis.size).normals(0)
        xi = system.noise(normals, None)
        states = [(np.tile(u0, (len(rows), 1)), np.tile(v0, (len(rows), 1)))]
        u1, v1, _ = system.advance(states, 0, xi)
        values = functional_values(tag, ctx, u1, v1) - start
        if control_variate:
            values = values - xi[0] @ grad_u
            if m > 0:
                values = values - xi[1] @ grad_v
        quotients.append(values / step)

    estimate = calculate_mean_estimate(np.concatenate(quotients))
    closed = generator_apply(tag, state, m, phi, q)
    relative = abs(estimate.mean - closed) / max(abs(closed), 1e-300)
    logger.info(f"Generator check {tag}: closed form {closed:.6g}, estimate {estimate.mean:.6g} +- {estimate.half_width:.2g}")
    return GeneratorCheck(tag=tag, closed_form=closed, estimate=estimate, relative_error=relative, paths=paths)
