"""Time integration of the wave, heat, linear, Langevin and shifted systems by per-mode exponential integrators."""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from smallmass.core.noise_model import EnsembleNoise, NoiseStream, QSpec, check_low_modes, minimal_forced_index, validate_q
from smallmass.core.nonlinearity import CutoffSpec, PhiSpec, TruncatedPhi, truncate
from smallmass.core.propagators import PropagatorTable, build_propagators
from smallmass.core.spectral_domain import Basis, PhaseState
from smallmass.utils.validators import ValidationError, validate_count, validate_mass, validate_step

logger = logging.getLogger(__name__)

SCHEMES = ("exponential-euler", "strang")
NOISE_MODES = ("exact", "increment", "off")

Nonlinearity = Union[PhiSpec, TruncatedPhi]


class BlowUpError(RuntimeError):
    """Non-finite coefficients; carries the step index and the last finite state."""

    def __init__(self, step: int, last_state: Optional[PhaseState] = None, trajectory: Optional[int] = None):
        self.step = step
        self.last_state = last_state
        self.trajectory = trajectory
        super().__init__(f"blow-up at step {step}" + ("" if trajectory is None else f" (trajectory {trajectory})"))


@dataclass
class SimConfig:
    """One simulation run of the wave (mass > 0) or heat (mass = 0) system."""
    basis: Basis
    q: QSpec
    mass: float
    step: float
    horizon: float
    phi: Optional[PhiSpec] = None
    stride: int = 1
    scheme: str = "exponential-euler"
    initial: Optional[PhaseState] = None
    seed: int = 0
    trajectory: int = 0
    cutoff: Optional[float] = None
    stop_radius: Optional[float] = None
    noise_mode: str = "exact"

    def __post_init__(self):
        validate_mass(self.mass)
        validate_step(self.step, self.horizon)
        self.stride = validate_count(self.stride, "record stride", minimum=1)
        if self.scheme not in SCHEMES:
            raise ValidationError("out-of-range", f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.noise_mode not in NOISE_MODES:
            raise ValidationError("out-of-range", f"noise mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.initial is not None and self.initial.basis.size != self.basis.size:
            raise ValidationError("size-mismatch", "initial state does not match the basis")
        # raises when the horizon is not a multiple of the step
        self.n_steps

    @property
    def n_steps(self) -> int:
        steps = int(round(self.horizon / self.step))
        if abs(steps * self.step - self.horizon) > 1e-9 * max(self.horizon, self.step):
            raise ValidationError("out-of-range", f"horizon {self.horizon} is not a multiple of step {self.step}")
        return steps

    @property
    def nonlinearity(self) -> Optional[Nonlinearity]:
        if self.phi is None or self.phi.is_zero:
            return None
        if self.cutoff is not None:
            return truncate(self.phi, CutoffSpec(radius=self.cutoff))
        return self.phi

    def initial_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.initial is None:
            return np.zeros(self.basis.size), np.zeros(self.basis.size)
        return self.initial.u.coeffs.copy(), self.initial.velocity().copy()

    def with_mass(self, mass: float) -> "SimConfig":
        return replace(self, mass=mass)


# ----------------------------------------------------------------------
# Systems stepped in lockstep
# ----------------------------------------------------------------------

class System:
    """One member of a coupled ensemble: a propagator table plus its nonlinear forcing."""

    def __init__(self, basis: Basis, table: PropagatorTable, nonlinearity: Optional[Nonlinearity] = None,
                 scheme: str = "exponential-euler", shift: Optional[Tuple[int, float, int]] = None,
                 track_linf: bool = False, noise_mode: str = "exact"):
        self.basis = basis
        self.noise_mode = noise_mode
        self.table = table
        self.nonlinearity = nonlinearity
        self.scheme = scheme
        self.track_linf = track_linf
        self.half_table = None
        if scheme == "strang":
            # the half step only needs the deterministic transition
            self.half_table = build_propagators(
                basis, NOISELESS, table.mass, table.step / 2.0, eigenvalues=table.eigenvalues
            )
        self.shift_mask = None
        self.shift = shift
        if shift is not None:
            n_bar, _, _ = shift
            self.shift_mask = basis.projector(n_bar)

    @property
    def is_heat(self) -> bool:
        return self.table.is_heat

    def force(self, u: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        """Sine coefficients of phi(u) on the padded grid, and max |u| when tracked."""
        if self.nonlinearity is None and not self.track_linf:
            return None, None

        grid = self.basis.synthesize(u, padded=True)
        linf = None
        if self.track_linf:
            axes = tuple(range(-self.basis.dimension, 0))
            linf = np.max(np.abs(grid), axis=axes)
        if self.nonlinearity is None:
            return None, linf
        return self.basis.analyze(self.nonlinearity.eval(grid), padded=True), linf

    def extra_force(self, states: List[Tuple[np.ndarray, np.ndarray]], index: int) -> Optional[np.ndarray]:
        if self.shift is None:
            return None
        _, alpha_shift, partner = self.shift
        u = states[index][0]
        return -alpha_shift * self.shift_mask * (u - states[partner][0])

    def advance(self, states, index, xi) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        u, v = states[index]
        extra = self.extra_force(states, index)
        table = self.table

        if self.scheme == "strang":
            hu, hv = self.half_table.apply_linear(u, v)
            f, linf = self.force(hu)
            if self.track_linf:
                _, linf = self._linf(u)
            total = _add(f, extra)
            if total is not None:
                hu = hu + table.step * table.kick[0] * total
                hv = hv + table.step * table.kick[1] * total
            u_next, v_next = self.half_table.apply_linear(hu, hv)
        else:
            f, linf = self.force(u)
            total = _add(f, extra)
            u_next, v_next = table.apply_linear(u, v)
            if total is not None:
                u_next = u_next + table.gains[0] * total
                v_next = v_next + table.gains[1] * total

        if xi is not None:
            u_next = u_next + xi[0]
            if not self.is_heat:
                v_next = v_next + xi[1]
        return u_next, v_next, linf

    def noise(self, normals: Optional[np.ndarray], increments: Optional[np.ndarray]):
        if increments is not None:
            return self.table.increment_terms(increments)
        if normals is None:
            return None
        if self.noise_mode == "increment":
            # Brownian increments shared by every coupled system
            return self.table.increment_terms(np.sqrt(self.table.step) * normals[..., 0, :])
        return self.table.noise_terms(normals)

    def _linf(self, u):
        grid = self.basis.synthesize(u, padded=True)
        axes = tuple(range(-self.basis.dimension, 0))
        return None, np.max(np.abs(grid), axis=axes)


NOISELESS = QSpec(coefficients=())


def _add(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None:
        return b
    if b is None:
        return a
    return a + b


@dataclass
class EnsembleRun:
    """Outcome of a coupled batch run."""
    states: List[Tuple[np.ndarray, np.ndarray]]
    alive: np.ndarray
    blowup_step: np.ndarray
    last_finite: List[Tuple[np.ndarray, np.ndarray]]
    stopping_step: np.ndarray
    wall_time: float


Observer = Callable[[int, List[Tuple[np.ndarray, np.ndarray]], np.ndarray], None]


def integrate(systems: Sequence[System], initial: Sequence[Tuple[np.ndarray, np.ndarray]], n_steps: int,
              noise: Optional[EnsembleNoise] = None, increments: Optional[np.ndarray] = None,
              observer: Optional[Observer] = None, stride: int = 1,
              stop_radius: Optional[float] = None) -> EnsembleRun:
    """Advance coupled systems on shared Gaussian draws.

    ``initial`` holds (P, N) arrays per system. ``increments`` (P, n_steps, N) replaces the
    stream by given Brownian increments. Rows that turn non-finite are marked dead, zeroed,
    and their last finite state is kept.
    """
    started = time.time()
    states = [(np.array(u, dtype=float, ndmin=2), np.array(v, dtype=float, ndmin=2)) for u, v in initial]
    batch = states[0][0].shape[0]
    alive = np.ones(batch, dtype=bool)
    blowup_step = np.full(batch, -1)
    last_finite = [(u.copy(), v.copy()) for u, v in states]
    stopping_step = np.full((len(systems), batch), -1)

    if observer is not None:
        observer(0, states, alive)

    for n in range(n_steps):
        normals = noise.normals(n) if noise is not None else None
        fine = increments[:, n] if increments is not None else None

        advanced = []
        for index, system in enumerate(systems):
            xi = system.noise(normals, fine)
            u_next, v_next, linf = system.advance(states, index, xi)
            if stop_radius is not None and linf is not None:
                crossed = (linf > stop_radius) & (stopping_step[index] < 0)
                stopping_step[index, crossed] = n
            advanced.append((u_next, v_next))

        finite = np.ones(batch, dtype=bool)
        for u_next, v_next in advanced:
            finite &= np.all(np.isfinite(u_next), axis=-1) & np.all(np.isfinite(v_next), axis=-1)
        newly_dead = alive & ~finite
        if np.any(newly_dead):
            rows = np.nonzero(newly_dead)[0]
            logger.warning(f"Blow-up at step {n + 1} in {rows.size} trajectories")
            blowup_step[rows] = n + 1
            for (u_old, v_old), (lu, lv) in zip(states, last_finite):
                lu[rows], lv[rows] = u_old[rows], v_old[rows]
            alive &= finite
        if not np.all(finite):
            for u_next, v_next in advanced:
                u_next[~finite] = 0.0
                v_next[~finite] = 0.0
        states = advanced

        if observer is not None and ((n + 1) % stride == 0 or n + 1 == n_steps):
            observer(n + 1, states, alive)

    if stop_radius is not None:
        for index, system in enumerate(systems):
            _, linf = system._linf(states[index][0])
            crossed = (linf > stop_radius) & (stopping_step[index] < 0)
            stopping_step[index, crossed] = n_steps

    for (u, v), (lu, lv) in zip(states, last_finite):
        lu[alive], lv[alive] = u[alive], v[alive]

    return EnsembleRun(states=states, alive=alive, blowup_step=blowup_step, last_finite=last_finite,
                       stopping_step=stopping_step, wall_time=time.time() - started)


def step(state: PhaseState, table: PropagatorTable, phi: Optional[Nonlinearity],
         stream: Optional[NoiseStream], step_index: int) -> PhaseState:
    """One exponential-Euler update of a single state; ``stream=None`` drops the noise."""
    nonlinearity = None if phi is None or phi.is_zero else phi
    system = System(state.basis, table, nonlinearity=nonlinearity)
    u, v = state.u.coeffs[None], state.velocity()[None]
    normals = None if stream is None else stream.normals(step_index)[None]

    u_next, v_next, _ = system.advance([(u, v)], 0, system.noise(normals, None))
    if not (np.all(np.isfinite(u_next)) and np.all(np.isfinite(v_next))):
        raise BlowUpError(step_index + 1, state)
    return PhaseState.from_arrays(state.basis, u_next[0], None if table.is_heat else v_next[0])


# ----------------------------------------------------------------------
# Trajectories
# ----------------------------------------------------------------------

@dataclass
class Trajectory:
    """Recorded states of one run; ``v`` is None for the heat system."""
    basis: Basis
    mass: float
    step: float
    stride: int
    times: np.ndarray
    u: np.ndarray
    v: Optional[np.ndarray]
    stopping_time: Optional[float] = None
    companion: Optional["Trajectory"] = None
    extras: dict = field(default_factory=dict)

    def state(self, index: int) -> PhaseState:
        v = None if self.v is None else self.v[index]
        return PhaseState.from_arrays(self.basis, self.u[index], v)

    def final_state(self) -> PhaseState:
        return self.state(-1)

    def __len__(self) -> int:
        return int(self.times.size)


class _Recorder:
    def __init__(self, index: int, step: float):
        self.index = index
        self.step = step
        self.times: List[float] = []
        self.u: List[np.ndarray] = []
        self.v: List[np.ndarray] = []

    def __call__(self, n, states, alive):
        u, v = states[self.index]
        self.times.append(n * self.step)
        self.u.append(u[0].copy())
        self.v.append(v[0].copy())


class _MultiRecorder:
    def __init__(self, indices: Sequence[int], step: float):
        self.recorders = [_Recorder(i, step) for i in indices]

    def __call__(self, n, states, alive):
        for recorder in self.recorders:
            recorder(n, states, alive)


def _trajectory(config: SimConfig, recorder: _Recorder, run: EnsembleRun, system_index: int,
                heat: bool) -> Trajectory:
    stopping = run.stopping_step[system_index, 0]
    return Trajectory(
        basis=config.basis, mass=config.mass, step=config.step, stride=config.stride,
        times=np.asarray(recorder.times), u=np.asarray(recorder.u),
        v=None if heat else np.asarray(recorder.v),
        stopping_time=None if stopping < 0 else float(stopping * config.step),
    )


def _ensemble_noise(config: SimConfig, trajectories: Sequence[int]) -> Optional[EnsembleNoise]:
    if config.noise_mode == "off":
        return None
    return EnsembleNoise(config.seed, trajectories, config.basis.size)


def _raise_on_blowup(run: EnsembleRun, config: SimConfig) -> None:
    if not run.alive[0]:
        u, v = run.last_finite[0]
        raise BlowUpError(
            int(run.blowup_step[0]),
            PhaseState.from_arrays(config.basis, u[0], v[0]),
            trajectory=config.trajectory,
        )


def make_system(config: SimConfig, eigenvalues: Optional[np.ndarray] = None, linear: bool = False,
                shift: Optional[Tuple[int, float, int]] = None, mass: Optional[float] = None) -> System:
    mass = config.mass if mass is None else mass
    table = build_propagators(config.basis, config.q, mass, config.step, eigenvalues=eigenvalues)
    return System(
        config.basis, table,
        nonlinearity=None if linear else config.nonlinearity,
        scheme=config.scheme, shift=shift,
        track_linf=config.stop_radius is not None,
        noise_mode=config.noise_mode,
    )


def _run_single(config: SimConfig, systems: List[System], initial, record: Sequence[int],
                increments: Optional[np.ndarray] = None) -> Tuple[EnsembleRun, _MultiRecorder]:
    recorder = _MultiRecorder(record, config.step)
    noise = None if increments is not None else _ensemble_noise(config, [config.trajectory])
    run = integrate(
        systems, initial, config.n_steps, noise=noise,
        increments=None if increments is None else np.asarray(increments)[None] if np.ndim(increments) == 2 else increments,
        observer=recorder, stride=config.stride, stop_radius=config.stop_radius,
    )
    _raise_on_blowup(run, config)
    return run, recorder


def simulate(config: SimConfig, increments: Optional[np.ndarray] = None) -> Trajectory:
    """Integrate the wave (mass > 0) or heat (mass = 0) system along one noise path.

    ``increments`` (n_steps, N) drives the noise by given Brownian increments instead of the stream.
    """
    logger.info(f"Simulating m={config.mass:g}, h={config.step:g}, T={config.horizon:g}, scheme={config.scheme}")
    system = make_system(config)
    u0, v0 = config.initial_arrays()
    run, recorder = _run_single(config, [system], [(u0, v0)], [0], increments=increments)
    logger.info(f"Simulation finished in {run.wall_time:.2f}s")
    return _trajectory(config, recorder.recorders[0], run, 0, heat=config.mass == 0)


def simulate_convolution(config: SimConfig) -> Trajectory:
    """Stochastic convolution Gamma^m: phi removed, zero initial data."""
    linear = replace(config, phi=None, initial=None, cutoff=None)
    return simulate(linear)


def simulate_langevin(config: SimConfig) -> Trajectory:
    """eta^m: m dv = -v dt + Q dW, du = v dt, from rest."""
    if config.mass <= 0:
        raise ValidationError("zero-mass", "the Langevin system needs a positive mass")
    langevin = replace(config, phi=None, initial=None, cutoff=None, scheme="exponential-euler")
    system = make_system(langevin, eigenvalues=np.zeros(config.basis.size))
    zeros = np.zeros(config.basis.size)
    run, recorder = _run_single(langevin, [system], [(zeros, zeros)], [0])
    return _trajectory(langevin, recorder.recorders[0], run, 0, heat=False)


def shift_parameters(config: SimConfig, alpha_shift: Optional[float] = None) -> Tuple[int, float]:
    """(n_bar, alpha_n_bar) from the noise and nonlinearity checks, with an optional override."""
    if config.phi is None or config.phi.is_zero:
        # phi = 0 has a_phi = 0, so only the first mode needs forcing
        n_bar = minimal_forced_index(config.basis, 0.0)
        check_low_modes(config.q.values(config.basis), n_bar)
        alpha = float(config.basis.eigenvalues[n_bar - 1])
    else:
        report = validate_q(config.q, config.phi, config.basis)
        n_bar, alpha = report.n_bar, report.alpha_n_bar
    return n_bar, alpha if alpha_shift is None else float(alpha_shift)


def simulate_shifted(config: SimConfig, alpha_shift: Optional[float] = None) -> Trajectory:
    """Shifted system with drift -alpha_n_bar P_n_bar (u - pi_1 Gamma), Gamma co-simulated on the same noise."""
    n_bar, alpha = shift_parameters(config, alpha_shift)
    gamma_system = make_system(config, linear=True)
    shifted_system = make_system(config, shift=(n_bar, alpha, 0))
    zeros = np.zeros(config.basis.size)
    u0, v0 = config.initial_arrays()

    run, recorder = _run_single(config, [gamma_system, shifted_system], [(zeros, zeros), (u0, v0)], [1, 0])
    heat = config.mass == 0
    trajectory = _trajectory(config, recorder.recorders[0], run, 1, heat=heat)
    trajectory.companion = _trajectory(config, recorder.recorders[1], run, 0, heat=heat)
    trajectory.extras.update({"n_bar": n_bar, "alpha_shift": alpha})
    return trajectory


def simulate_coupled(config: SimConfig, masses: Sequence[float]) -> List[Trajectory]:
    """Systems at several masses (0 allowed) on one shared noise path and one u-initial datum."""
    systems = [make_system(config, mass=m) for m in masses]
    u0, v0 = config.initial_arrays()
    initial = [(u0, v0 if m > 0 else np.zeros_like(v0)) for m in masses]
    run, recorder = _run_single(config, systems, initial, list(range(len(masses))))
    return [
        _trajectory(replace(config, mass=m), recorder.recorders[i], run, i, heat=m == 0)
        for i, m in enumerate(masses)
    ]


def brownian_increments(seed: int, trajectories: Sequence[int], n_modes: int, h: float, n_steps: int) -> np.ndarray:
    """Brownian increments (P, n_steps, N) read from the streams."""
    noise = EnsembleNoise(seed, trajectories, n_modes)
    out = np.empty((len(trajectories), n_steps, n_modes))
    for n in range(n_steps):
        out[:, n] = math.sqrt(h) * noise.normals(n)[:, 0, :]
    return out


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments along the step axis."""
    shape = increments.shape
    steps = shape[-2] // factor
    trimmed = increments[..., : steps * factor, :]
    return trimmed.reshape(shape[:-2] + (steps, factor, shape[-1])).sum(axis=-2)
