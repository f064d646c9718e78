"""Tangent process and feedback-controlled linearization along recorded or co-simulated base paths."""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from smallmass.core.dynamics import (
    NOISELESS, System, SimConfig, Trajectory, integrate, make_system, shift_parameters, simulate,
)
from smallmass.core.functionals import psi1_values
from smallmass.core.noise_model import EnsembleNoise
from smallmass.core.propagators import build_propagators
from smallmass.core.spectral_domain import PhaseState
from smallmass.utils.calculations import calculate_log_linear_rate
from smallmass.utils.validators import ValidationError

logger = logging.getLogger(__name__)


class TangentSystem(System):
    """Exponential-Euler step linearized along the ``partner`` system.

    With ``feedback = (n_bar, alpha)`` the drift -alpha P_n_bar rho_1 is added to the force
    and the control costs are accumulated per row.
    """

    def __init__(self, config: SimConfig, partner: int = 0, feedback: Optional[Tuple[int, float]] = None,
                 linear: bool = False):
        table = build_propagators(config.basis, NOISELESS, config.mass, config.step)
        super().__init__(config.basis, table, nonlinearity=None if linear else config.nonlinearity)
        self.partner = partner
        self.feedback = feedback
        self.feedback_mask = None
        self.inverse_weights = None
        self.cost_inverse = None
        self.cost_q = None
        if feedback is not None:
            n_bar, _ = feedback
            self.feedback_mask = config.basis.projector(n_bar)
            q = config.q.values(config.basis)
            self.inverse_weights = np.zeros_like(q)
            self.inverse_weights[:n_bar] = 1.0 / q[:n_bar] ** 2

    def noise(self, normals, increments):
        return None

    def kick(self, base_u: np.ndarray, rho_u: np.ndarray) -> Optional[np.ndarray]:
        """P[phi'(u) rho_1] on the padded grid, plus the feedback drift."""
        total = None
        if self.nonlinearity is not None:
            grid_base = self.basis.synthesize(base_u, padded=True)
            grid_rho = self.basis.synthesize(rho_u, padded=True)
            total = self.basis.analyze(self.nonlinearity.eval_deriv(grid_base) * grid_rho, padded=True)
        if self.feedback is not None:
            _, alpha = self.feedback
            drift = -alpha * self.feedback_mask * rho_u
            total = drift if total is None else total + drift
        return total

    def accumulate_cost(self, rho_u: np.ndarray) -> None:
        _, alpha = self.feedback
        h = self.table.step
        low = self.feedback_mask * rho_u
        inverse = h * alpha * alpha * np.sum(self.inverse_weights * low * low, axis=-1)
        direct = h * alpha * alpha * np.sum(low * low, axis=-1)
        self.cost_inverse = inverse if self.cost_inverse is None else self.cost_inverse + inverse
        self.cost_q = direct if self.cost_q is None else self.cost_q + direct

    def advance(self, states, index, xi):
        rho_u, rho_v = states[index]
        base_u = states[self.partner][0]
        if self.feedback is not None:
            self.accumulate_cost(rho_u)

        u_next, v_next = self.table.apply_linear(rho_u, rho_v)
        total = self.kick(base_u, rho_u)
        if total is not None:
            u_next = u_next + self.table.gains[0] * total
            v_next = v_next + self.table.gains[1] * total
        return u_next, v_next, None


def _require_dense(config: SimConfig, base: Trajectory) -> None:
    if config.scheme != "exponential-euler":
        raise ValidationError("out-of-range", "the linearized step follows the exponential-Euler scheme")
    if base.stride != 1 or abs(base.step - config.step) > 1e-15 * config.step:
        raise ValidationError(
            "record-stride-too-coarse",
            f"base path recorded every {base.stride} steps of {base.step:g}; need every step of {config.step:g}",
        )
    if len(base) < config.n_steps + 1:
        raise ValidationError("record-stride-too-coarse", "base path is shorter than the horizon")


def _along_base(config: SimConfig, base: Trajectory, system: TangentSystem,
                direction: PhaseState) -> Tuple[np.ndarray, np.ndarray]:
    """Step the linearization along recorded base states; returns every rho_n."""
    n_steps = config.n_steps
    heat = config.mass == 0
    zeros = np.zeros(config.basis.size)
    rho = (direction.u.coeffs[None].astype(float), (zeros if heat else direction.velocity())[None].astype(float))

    us, vs = [rho[0][0].copy()], [rho[1][0].copy()]
    for n in range(n_steps):
        base_state = (base.u[n][None], zeros[None] if base.v is None else base.v[n][None])
        u_next, v_next, _ = system.advance([base_state, rho], 1, None)
        if not (np.all(np.isfinite(u_next)) and np.all(np.isfinite(v_next))):
            raise ValidationError("out-of-range", f"linearized path became non-finite at step {n + 1}")
        rho = (u_next, v_next)
        us.append(u_next[0].copy())
        vs.append(v_next[0].copy())
    return np.asarray(us), np.asarray(vs)


def simulate_tangent(config: SimConfig, base: Trajectory, direction: PhaseState) -> Trajectory:
    """J xi along a base path recorded at every step; no noise term."""
    _require_dense(config, base)
    system = TangentSystem(config, partner=0)
    u, v = _along_base(config, base, system, direction)
    return Trajectory(
        basis=config.basis, mass=config.mass, step=config.step, stride=1,
        times=config.step * np.arange(u.shape[0]), u=u, v=None if config.mass == 0 else v,
    )


def simulate_control(config: SimConfig, base: Trajectory, direction: PhaseState,
                     alpha_shift: Optional[float] = None) -> Trajectory:
    """rho = J xi - A zeta with feedback zeta = alpha_n_bar Q^{-1} P_n_bar pi_1 rho.

    ``extras`` carries Psi_1(rho) per step and the accumulated control costs
    (Q^{-1}-weighted and Q-weighted).
    """
    _require_dense(config, base)
    n_bar, alpha = shift_parameters(config, alpha_shift)
    system = TangentSystem(config, partner=0, feedback=(n_bar, alpha))
    u, v = _along_base(config, base, system, direction)

    trajectory = Trajectory(
        basis=config.basis, mass=config.mass, step=config.step, stride=1,
        times=config.step * np.arange(u.shape[0]), u=u, v=None if config.mass == 0 else v,
    )
    cost_inverse = 0.0 if system.cost_inverse is None else float(system.cost_inverse[0])
    cost_q = 0.0 if system.cost_q is None else float(system.cost_q[0])
    trajectory.extras.update({
        "n_bar": n_bar,
        "alpha_shift": alpha,
        "psi1": psi1_values(config.basis, config.mass, u, v),
        "cost_inverse": cost_inverse,
        "cost_q": cost_q,
    })
    return trajectory


# ----------------------------------------------------------------------
# Checks
# ----------------------------------------------------------------------

@dataclass
class TangentCheck:
    """Tangent J xi against the shared-noise difference quotient."""
    epsilon: float
    relative_error: float
    tangent_norm: float
    difference_norm: float


def _phase_h1_norm(basis, u: np.ndarray, v: np.ndarray) -> float:
    return float(np.sqrt(basis.norm_squared(u, 1) + basis.norm_squared(v)))


def finite_difference_check(config: SimConfig, direction: PhaseState, epsilon: float = 1e-5) -> TangentCheck:
    """Compare J xi at the horizon with (X(U0 + eps xi) - X(U0)) / eps on one noise path."""
    dense = replace(config, stride=1)
    base = simulate(dense)
    tangent = simulate_tangent(dense, base, direction)

    u0, v0 = dense.initial_arrays()
    heat = dense.mass == 0
    shifted_v = v0 if heat else v0 + epsilon * direction.velocity()
    perturbed = simulate(replace(dense, initial=PhaseState.from_arrays(
        dense.basis, u0 + epsilon * direction.u.coeffs, None if heat else shifted_v)))

    du = (perturbed.u[-1] - base.u[-1]) / epsilon
    dv = np.zeros_like(du) if heat else (perturbed.v[-1] - base.v[-1]) / epsilon
    ju = tangent.u[-1]
    jv = np.zeros_like(ju) if heat else tangent.v[-1]

    basis = config.basis
    tangent_norm = _phase_h1_norm(basis, ju, jv)
    difference_norm = _phase_h1_norm(basis, du, dv)
    error = _phase_h1_norm(basis, ju - du, jv - dv)
    relative = error / tangent_norm if tangent_norm > 0 else error
    logger.info(f"Tangent check: relative H1 error {relative:.3e} at eps={epsilon:g}")
    return TangentCheck(epsilon=epsilon, relative_error=relative, tangent_norm=tangent_norm,
                        difference_norm=difference_norm)


@dataclass
class GronwallAudit:
    """Along-path check of d/dt Psi_1(rho) <= (-c + kappa |u|_{H^1}^2) Psi_1(rho)."""
    rate: float
    tight_constant: float
    kappa: float
    violations: int
    steps: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.violations <= self.tolerance * self.steps


def gronwall_audit(psi: np.ndarray, u_h1_squared: np.ndarray, step: float, kappa: float = 0.0,
                   rate: Optional[float] = None, tolerance: float = 0.05) -> GronwallAudit:
    """Discrete log-growth of Psi_1(rho) per step against the decay bound.

    ``rate`` defaults to half the fitted decay rate. A step is a violation when its
    log-growth exceeds the bound by more than ``tolerance`` of the bound's size.
    ``tight_constant`` is the largest c for which every step satisfies the bound.
    """
    psi = np.asarray(psi, dtype=float)
    positive = psi > 0
    if np.count_nonzero(positive) < 3:
        return GronwallAudit(rate=0.0, tight_constant=np.inf, kappa=kappa, violations=0, steps=0,
                             tolerance=tolerance)

    cut = int(np.argmin(positive)) if not np.all(positive) else psi.size
    psi = psi[:cut]
    growth = np.diff(np.log(psi)) / step
    load = kappa * np.asarray(u_h1_squared, dtype=float)[: growth.size]

    if rate is None:
        fitted, _ = calculate_log_linear_rate(step * np.arange(psi.size), psi)
        rate = 0.5 * fitted

    bound = -rate + load
    violations = int(np.sum(growth > bound + tolerance * (np.abs(bound) + np.abs(growth))))
    tight = float(np.min(load - growth))
    return GronwallAudit(rate=float(rate), tight_constant=tight, kappa=kappa, violations=violations,
                         steps=int(growth.size), tolerance=tolerance)


# ----------------------------------------------------------------------
# Ensemble kernel
# ----------------------------------------------------------------------

def control_batch(trajectories: List[int], config: SimConfig, direction: PhaseState,
                  alpha_shift: Optional[float] = None) -> Dict[str, np.ndarray]:
    """Base paths and their controlled linearizations co-simulated on the streams of ``trajectories``."""
    n_bar, alpha = shift_parameters(config, alpha_shift)
    count = len(trajectories)
    base_system = make_system(config)
    control_system = TangentSystem(config, partner=0, feedback=(n_bar, alpha))

    u0, v0 = config.initial_arrays()
    rho_v = np.zeros(config.basis.size) if config.mass == 0 else direction.velocity()
    initial = [
        (np.tile(u0, (count, 1)), np.tile(v0, (count, 1))),
        (np.tile(direction.u.coeffs, (count, 1)), np.tile(rho_v, (count, 1))),
    ]
    noise = None if config.noise_mode == "off" else EnsembleNoise(config.seed, trajectories, config.basis.size)

    psi_series, load_series = [], []

    def observe(n, states, alive):
        rho_u, rho_v_now = states[1]
        psi_series.append(psi1_values(config.basis, config.mass, rho_u, rho_v_now))
        load_series.append(config.basis.norm_squared(states[0][0], 1))

    run = integrate([base_system, control_system], initial, config.n_steps, noise=noise,
                    observer=observe, stride=config.stride)
    dropped = int(np.sum(~run.alive))
    if dropped:
        logger.warning(f"Control batch dropped {dropped} blown-up trajectories")

    zeros = np.zeros(count)
    return {
        "psi1": np.stack(psi_series, axis=1)[run.alive],
        "u_h1_squared": np.stack(load_series, axis=1)[run.alive],
        "cost_inverse": (zeros if control_system.cost_inverse is None else control_system.cost_inverse)[run.alive],
        "cost_q": (zeros if control_system.cost_q is None else control_system.cost_q)[run.alive],
    }
