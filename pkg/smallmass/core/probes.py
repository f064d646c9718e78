"""Monte Carlo probes of moments, contraction, irreducibility, smoothing and the small-mass limits."""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from smallmass.config import settings
from smallmass.core.dynamics import (
    SimConfig, brownian_increments, coarsen_increments, integrate, make_system, shift_parameters,
)
from smallmass.core.ensemble import EnsembleConfig, run_ensemble
from smallmass.core.functionals import (
    FunctionalContext, energy_values, equivalence_constants, nonnegativity_audit, psi2_values,
    random_states, v_m_values,
)
from smallmass.core.generator import FUNCTIONALS, generator_check
from smallmass.core.linearized import control_batch, finite_difference_check, gronwall_audit
from smallmass.core.metrics import (
    EmpiricalMeasure, MetricParams, brute_force_assignment, clipped_norm_observable, dtilde_0_rows,
    dtilde_m_rows, dual_lower_bound, pairwise_cost, triangle_audit, wasserstein,
)
from smallmass.core.noise_model import EnsembleNoise
from smallmass.core.nonlinearity import PhiSpec, check_inequalities
from smallmass.core.propagators import build_propagators, langevin_velocity_variance
from smallmass.core.spectral_domain import Basis, PhaseState, SpectralField
from smallmass.schemas.reports import Frequency, ProbeReport, Statistic
from smallmass.utils.calculations import (
    MeanEstimate, calculate_autocorrelation, calculate_exponential_fit, calculate_log_linear_rate,
    calculate_mean_estimate, calculate_mean_series, calculate_relative_spread, calculate_wilson_interval,
    check_monotone_decreasing, estimate_slope,
)
from smallmass.utils.validators import ValidationError, validate_mass_sweep

logger = logging.getLogger(__name__)

MOMENT_FUNCTIONALS = ("energy", "psi2", "exp-energy", "exp-h")

LINEAR_RATE_TOLERANCE = 0.1
TANGENT_TOLERANCE = 1e-3
AUTOCORRELATION_LIMIT = 0.2
FLOOR_FACTOR = 2.0
PLATEAU_FACTOR = 2.0
SLOPE_RANGE = (0.8, 1.2)
# fine Brownian increments held per convergence batch
CONVERGENCE_BATCH_VALUES = 8_000_000

Observable = Tuple[Callable[[np.ndarray], np.ndarray], Optional[float]]


@dataclass
class ProbeOptions:
    """Probe knobs and declared tolerances."""
    radius: float = 10.0
    ball: float = 1.0
    radii: Tuple[float, ...] = ()
    probe_horizon: Optional[float] = None
    spread: float = settings.UNIFORMITY_SPREAD
    tolerance: float = 0.05
    shrink_factor: float = 0.2
    gap_factor: float = 0.5
    expect: str = "shrink"
    functional: str = "energy"
    order: int = 1
    moment_beta: float = 0.0
    direction_mode: int = 1
    kappa: float = 0.0
    epsilon: float = 1e-5
    generator_states: int = 5
    generator_paths: int = 100000
    generator_step: float = 1e-3
    levels: int = 4
    sample_size: int = 256
    audit_samples: int = 10000
    observables: Tuple[str, ...] = ("clipped-norm",)


@dataclass
class ProbeResult:
    """A report plus the plotted series and the sample sets behind it."""
    report: ProbeReport
    series: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    measures: Dict[str, EmpiricalMeasure] = field(default_factory=dict)


# ----------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------

def _statistic(estimate: MeanEstimate) -> Statistic:
    return Statistic(mean=estimate.mean, half_width=estimate.half_width, count=estimate.count)


def _frequency(successes: int, trials: int) -> Frequency:
    value, lower, upper = calculate_wilson_interval(int(successes), int(trials))
    return Frequency(value=value, lower=lower, upper=upper, successes=int(successes), trials=int(trials))


def record_steps(n_steps: int, stride: int) -> np.ndarray:
    """Step indices at which ``integrate`` calls its observer."""
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return np.asarray(steps)


def kept_times(config: SimConfig, keep_from: int = 0, keep_every: int = 1) -> np.ndarray:
    return record_steps(config.n_steps, config.stride)[keep_from::keep_every] * config.step


def linear_coefficient(phi: Optional[PhiSpec]) -> Optional[float]:
    """c when phi(x) = c x (0 for phi = 0), otherwise None."""
    if phi is None or phi.is_zero:
        return 0.0
    if len(phi.terms) == 1 and phi.terms[0][1] == 1.0:
        return float(phi.terms[0][0])
    return None


def mode_decay_rate(alpha: np.ndarray, m: float) -> np.ndarray:
    """Decay rate of the slowest solution of m w'' + w' + alpha w = 0, per mode (m = 0: alpha)."""
    alpha = np.asarray(alpha, dtype=float)
    if m == 0:
        return alpha.copy()
    discriminant = 1.0 - 4.0 * m * alpha
    rate = np.full_like(alpha, 1.0 / (2.0 * m))
    real = discriminant > 0
    rate[real] = 2.0 * alpha[real] / (1.0 + np.sqrt(discriminant[real]))
    return rate


def envelope(series: np.ndarray) -> np.ndarray:
    """max over s >= t; turns a decaying oscillation into a monotone profile."""
    return np.maximum.accumulate(np.asarray(series, dtype=float)[::-1])[::-1]


def unit_direction(basis: Basis, mode: int) -> PhaseState:
    if mode < 1 or mode > basis.size:
        raise ValidationError("out-of-range", f"direction mode {mode} outside [1, {basis.size}]")
    return PhaseState(u=SpectralField.mode(basis, mode - 1), v=SpectralField.zeros(basis))


def _tail_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Log-linear decay rate of the envelope over the second half of the grid."""
    half = len(times) // 2
    rate, _ = calculate_log_linear_rate(times[half:], envelope(values)[half:])
    return rate


def _uniformity(report: ProbeReport, rates: Dict[float, float], spread: float, name: str) -> None:
    for m, rate in rates.items():
        report.add_criterion(f"{name}-positive[m={m:g}]", math.isfinite(rate) and rate > 0, f"rate {rate:.6g}")
    if len(rates) > 1:
        value = calculate_relative_spread(list(rates.values()))
        report.fitted[f"{name}_spread"] = value
        report.add_criterion(f"{name}-uniform", value <= spread, f"spread {value:.3g} vs {spread:g}")


def _decreasing_masses(masses: Sequence[float]) -> List[float]:
    return sorted({float(m) for m in masses}, reverse=True)


# ----------------------------------------------------------------------
# Ensemble kernels
# ----------------------------------------------------------------------

def path_batch(trajectories: List[int], config: SimConfig, members: Sequence[Tuple[float, int]],
               initials: Sequence[Tuple[np.ndarray, np.ndarray]], offset: int = 0, linear: bool = False,
               langevin: bool = False, keep_from: int = 0, keep_every: int = 1) -> Dict[str, np.ndarray]:
    """Coupled members (mass, initial slot) on the streams ``offset + trajectories``.

    Initial arrays are (N,) shared or (count, N) indexed by trajectory. Returns kept records
    ``u``, ``v`` of shape (P, members, records, N), ``alive`` (P,) and ``stopping`` (P, members) in steps.
    """
    basis = config.basis
    rows = np.asarray(trajectories, dtype=int)
    eigenvalues = np.zeros(basis.size) if langevin else None
    systems = [
        make_system(config, eigenvalues=eigenvalues, linear=linear or langevin, mass=m) for m, _ in members
    ]

    initial = []
    for m, slot in members:
        u0, v0 = (np.asarray(a, dtype=float) for a in initials[slot])
        u = np.tile(u0, (rows.size, 1)) if u0.ndim == 1 else u0[rows].copy()
        v = np.tile(v0, (rows.size, 1)) if v0.ndim == 1 else v0[rows].copy()
        initial.append((u, np.zeros_like(u) if m == 0 else v))

    noise = None if config.noise_mode == "off" else EnsembleNoise(config.seed, offset + rows, basis.size)
    kept_u: List[List[np.ndarray]] = [[] for _ in members]
    kept_v: List[List[np.ndarray]] = [[] for _ in members]
    counter = [0]

    def observe(n, states, alive):
        index = counter[0]
        counter[0] += 1
        if index < keep_from or (index - keep_from) % keep_every:
            return
        for i, (u, v) in enumerate(states):
            kept_u[i].append(u.copy())
            kept_v[i].append(v.copy())

    run = integrate(systems, initial, config.n_steps, noise=noise, observer=observe,
                    stride=config.stride, stop_radius=config.stop_radius)

    def stack(kept):
        if not kept[0]:
            return np.zeros((rows.size, len(members), 0, basis.size))
        return np.stack([np.stack(series, axis=1) for series in kept], axis=1)

    return {"u": stack(kept_u), "v": stack(kept_v), "alive": run.alive, "stopping": run.stopping_step.T.copy()}


def running_sup_batch(trajectories: List[int], config: SimConfig, checkpoints: Sequence[int]) -> Dict[str, np.ndarray]:
    """Running sup of |Gamma_1|_{H^2}^2 + m^2 |Gamma_2|_{H^1}^2 over every step, read at ``checkpoints``."""
    basis, m = config.basis, config.mass
    count = len(trajectories)
    system = make_system(config, linear=True)
    zeros = np.zeros((count, basis.size))
    noise = None if config.noise_mode == "off" else EnsembleNoise(config.seed, trajectories, basis.size)

    running = np.zeros(count)
    sups = np.zeros((count, len(checkpoints)))
    where = {int(step): j for j, step in enumerate(checkpoints)}

    def observe(n, states, alive):
        u, v = states[0]
        value = basis.norm_squared(u, 2)
        if m > 0:
            value = value + m * m * basis.norm_squared(v, 1)
        np.maximum(running, value, out=running)
        if n in where:
            sups[:, where[n]] = running

    run = integrate([system], [(zeros, zeros.copy())], config.n_steps, noise=noise, observer=observe, stride=1)
    return {"sup": sups, "alive": run.alive}


def convergence_batch(trajectories: List[int], config: SimConfig, levels: int,
                      masses: Sequence[float]) -> Dict[str, np.ndarray]:
    """Endpoint H-errors of ``levels`` dyadic steps against the next finer level on one Brownian path."""
    basis = config.basis
    count = len(trajectories)
    fine = 2 ** levels
    increments = brownian_increments(config.seed, trajectories, basis.size, config.step / fine, config.n_steps * fine)

    errors = np.zeros((count, len(masses), levels))
    for i, m in enumerate(masses):
        endpoints = []
        for level in range(levels + 1):
            level_config = replace(config, mass=m, step=config.step / 2 ** level, stride=1, stop_radius=None)
            system = make_system(level_config)
            u0, v0 = level_config.initial_arrays()
            initial = [(np.tile(u0, (count, 1)), np.tile(v0 if m > 0 else np.zeros_like(v0), (count, 1)))]
            run = integrate([system], initial, level_config.n_steps,
                            increments=coarsen_increments(increments, 2 ** (levels - level)))
            endpoints.append(run.states[0][0])
        for level in range(levels):
            errors[:, i, level] = basis.norm(endpoints[level] - endpoints[-1])
    return {"errors": errors}


def _ensemble(cfg: EnsembleConfig, config: SimConfig, members, initials, count: Optional[int] = None,
              **kwargs) -> Dict[str, np.ndarray]:
    count = cfg.trajectories if count is None else count
    out = run_ensemble(path_batch, count, workers=cfg.workers, config=config, members=members,
                       initials=initials, **kwargs)
    dropped = int(np.sum(~out["alive"]))
    if dropped == count:
        raise ValidationError("out-of-range", "every trajectory blew up")
    if dropped:
        logger.warning(f"Dropped {dropped} of {count} trajectories after blow-up")
    return out


# ----------------------------------------------------------------------
# Invariant samples
# ----------------------------------------------------------------------

def invariant_sample(cfg: EnsembleConfig, mass: Optional[float] = None,
                     offset: int = 0) -> Tuple[EmpiricalMeasure, EmpiricalMeasure, Dict[str, float]]:
    """Time-averaged sample of the invariant law: records after burn-in at the thinning stride, pooled.

    Pooling is trajectory-major. Returns the phase sample, its u-marginal and diagnostics
    (dropped trajectories, lag-one autocorrelation of |u|^2 at the kept stride).
    """
    mass = cfg.template.mass if mass is None else float(mass)
    config = cfg.template.with_mass(mass)
    basis = config.basis

    out = _ensemble(cfg, config, [(mass, 0)], [config.initial_arrays()], offset=offset,
                    keep_from=cfg.burn_in_records, keep_every=cfg.thinning)
    alive = out["alive"]
    u, v = out["u"][alive, 0], out["v"][alive, 0]
    if u.shape[1] == 0:
        raise ValidationError("out-of-range", "no records remain after burn-in")

    correlations = [calculate_autocorrelation(row) for row in basis.norm_squared(u)]
    correlations = [c for c in correlations if math.isfinite(c)]
    pooled_u = u.reshape(-1, basis.size)
    measure = EmpiricalMeasure(basis=basis, u=pooled_u, v=None if mass == 0 else v.reshape(-1, basis.size))

    info = {
        "dropped": int(np.sum(~alive)),
        "samples": len(measure),
        "per_trajectory": int(u.shape[1]),
        "autocorrelation": float(np.mean(correlations)) if correlations else float("nan"),
    }
    logger.info(f"Invariant sample at m={mass:g}: {info['samples']} states, lag-1 autocorrelation {info['autocorrelation']:.3f}")
    return measure, measure.marginal(), info


def subsample(measure: EmpiricalMeasure, size: int) -> EmpiricalMeasure:
    """``size`` evenly spaced samples."""
    if len(measure) < size:
        raise ValidationError("size-mismatch", f"only {len(measure)} samples for a measure of size {size}")
    index = np.round(np.linspace(0, len(measure) - 1, size)).astype(int)
    v = None if measure.v is None else measure.v[index]
    return EmpiricalMeasure(basis=measure.basis, u=measure.u[index], v=v, kind=measure.kind)


def invariant_sample_report(cfg: EnsembleConfig, tolerance: float = 0.05, checked_modes: int = 4) -> ProbeResult:
    """Pooled invariant samples per mass, with the Gaussian variance oracle when phi is linear."""
    report = ProbeReport(experiment="invariant-sample", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = cfg.template
    basis = template.basis
    slope = linear_coefficient(template.phi)
    modes = min(checked_modes, basis.size)
    q = template.q.values(basis)

    for m in cfg.masses:
        measure, marginal, info = invariant_sample(cfg, m)
        entry = report.entry(m)
        entry.values.update(info)
        result.measures[f"m={m:g}"] = measure

        variances = []
        for k in range(modes):
            centered = marginal.u[:, k] - np.mean(marginal.u[:, k])
            variances.append(calculate_mean_estimate(centered * centered))
        for k, estimate in enumerate(variances):
            entry.statistics[f"var_u{k + 1}"] = _statistic(estimate)

        ac = info["autocorrelation"]
        report.add_criterion(f"thinning[m={m:g}]", math.isfinite(ac) and ac < AUTOCORRELATION_LIMIT,
                             f"autocorrelation {ac:.3g} vs {AUTOCORRELATION_LIMIT}")

        if slope is not None and template.cutoff is None:
            oracle = q[:modes] ** 2 / (2.0 * (basis.eigenvalues[:modes] - slope))
            for k, estimate in enumerate(variances):
                gap = abs(estimate.mean - oracle[k])
                report.add_criterion(
                    f"stationary-variance[m={m:g},k={k + 1}]",
                    gap <= estimate.half_width + tolerance * oracle[k],
                    f"{estimate.mean:.6g} +- {estimate.half_width:.2g} vs {oracle[k]:.6g}",
                )
            entry.values["oracle_variance"] = [float(x) for x in oracle]

        result.series[f"variance_m={m:g}"] = {
            "mode": np.arange(1, modes + 1),
            "variance": np.array([e.mean for e in variances]),
            "half_width": np.array([e.half_width for e in variances]),
        }
    return result


# ----------------------------------------------------------------------
# Moments
# ----------------------------------------------------------------------

def _moment_values(tag: str, ctx: FunctionalContext, u: np.ndarray, v: np.ndarray, order: int,
                   beta: float) -> Tuple[np.ndarray, bool]:
    """Per-path functional values; exponential tags come back as exponents."""
    if tag == "energy":
        return energy_values(ctx, u, v) ** order, False
    if tag == "psi2":
        return psi2_values(ctx.basis, ctx.mass, u, v) ** order, False
    if tag == "exp-energy":
        return beta * energy_values(ctx, u, v), True
    return beta * ctx.basis.norm_squared(u), True


def moment_bound_report(cfg: EnsembleConfig, tag: str = "energy", order: int = 1, beta: float = 0.0,
                        radius: float = 10.0) -> ProbeResult:
    """Ensemble means of a functional from rest and from large data, fitted to C e^{-ct} + B.

    The rest run gives the plateau (mean over the final quarter of the grid), the run from
    u = radius e_1 the decay rate. ``exp-h`` is E e^{beta |u|^2}, the heat-system diagnostic.
    """
    if tag not in MOMENT_FUNCTIONALS:
        raise ValidationError("unsupported-functional", f"moments known for {MOMENT_FUNCTIONALS}, got {tag!r}")
    exponential = tag.startswith("exp")
    if exponential and not beta > 0:
        raise ValidationError("out-of-range", "exponential moments need beta > 0")

    report = ProbeReport(experiment="moments", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = cfg.template
    basis = template.basis
    times = kept_times(template)
    quarter = max(len(times) // 4, 1)

    plateaus: Dict[float, MeanEstimate] = {}
    rates: Dict[float, float] = {}
    for m in cfg.masses:
        config = template.with_mass(m)
        ctx = FunctionalContext(mass=m, phi=template.phi, basis=basis)
        excited = SpectralField.mode(basis, 0, radius).coeffs
        rest = (np.zeros(basis.size), np.zeros(basis.size))
        out = _ensemble(cfg, config, [(m, 0), (m, 1)], [rest, (excited, np.zeros(basis.size))])
        alive = out["alive"]
        entry = report.entry(m)
        columns = {"t": times}

        for label, index in (("rest", 0), ("excited", 1)):
            values, in_log = _moment_values(tag, ctx, out["u"][alive, index], out["v"][alive, index], order, beta)
            if in_log:
                overflow = int(np.sum(values > settings.LOG_OVERFLOW_CAP))
                values = np.exp(np.minimum(values, settings.LOG_OVERFLOW_CAP))
                if overflow:
                    entry.values[f"{label}_overflow"] = overflow
            mean, half_width = calculate_mean_series(values)
            columns[f"{label}_mean"], columns[f"{label}_half_width"] = mean, half_width

            if label == "rest":
                plateau = calculate_mean_estimate(values[:, -quarter:].mean(axis=1))
                plateaus[m] = plateau
                entry.statistics["plateau"] = _statistic(plateau)
            else:
                fit = calculate_exponential_fit(times, mean, with_offset=True)
                rates[m] = fit.rate
                entry.fitted.update({"rate": fit.rate, "amplitude": fit.amplitude, "offset": fit.offset,
                                     "residual": fit.residual})
                entry.statistics["final"] = Statistic(mean=float(mean[-1]), half_width=float(half_width[-1]),
                                                      count=int(values.shape[0]))

            if exponential:
                divergent = bool(entry.values.get(f"{label}_overflow")) or not (
                    np.all(np.isfinite(half_width)) and np.all(half_width <= np.abs(mean))
                )
                report.add_criterion(f"exponential-moment-finite[m={m:g},{label}]", not divergent,
                                     "divergent-exponential-moment" if divergent else "finite")

        result.series[f"moments_m={m:g}"] = columns
        logger.info(f"Moments at m={m:g}: plateau {plateaus[m].mean:.6g}, rate {rates[m]:.4g}")

    for m, rate in rates.items():
        report.add_criterion(f"decay-rate-positive[m={m:g}]", math.isfinite(rate) and rate > 0, f"rate {rate:.6g}")
    if len(rates) > 1:
        report.fitted["rate_spread"] = calculate_relative_spread(list(rates.values()))
    if len(plateaus) > 1:
        highest = max(p.lower for p in plateaus.values())
        lowest = min(p.upper for p in plateaus.values())
        report.add_criterion("plateau-uniform", highest <= PLATEAU_FACTOR * lowest,
                             f"max lower {highest:.6g} vs {PLATEAU_FACTOR:g} x min upper {lowest:.6g}")
    return result


# ----------------------------------------------------------------------
# Contraction
# ----------------------------------------------------------------------

def _pair_arrays(pair: Tuple[PhaseState, PhaseState]):
    return [(state.u.coeffs, state.velocity()) for state in pair]


def contraction_estimate(cfg: EnsembleConfig, pair: Optional[Tuple[PhaseState, PhaseState]] = None,
                         params: Optional[MetricParams] = None, radius: float = 10.0,
                         spread: float = settings.UNIFORMITY_SPREAD) -> ProbeResult:
    """Synchronous coupling of two initial states; E dtilde^m and E |u_1 - u_2|_H over time.

    Rates are log-linear fits of the envelope over the second half of the grid. Distances
    use the straight-path upper estimate of the path metric.
    """
    report = ProbeReport(experiment="contraction", config_hash=cfg.config_hash)
    report.notes.append("dtilde uses the straight-path upper estimate of rho")
    result = ProbeResult(report=report)
    template = cfg.template
    basis = template.basis
    params = params or cfg.metric or MetricParams(N=1.0, beta=0.0)
    if pair is None:
        start = template.initial or PhaseState.zeros(basis)
        pair = (start, PhaseState(u=start.u + SpectralField.mode(basis, 0, radius), v=start.v))
    initials = _pair_arrays(pair)
    difference = np.abs(initials[0][0] - initials[1][0]) + np.abs(initials[0][1] - initials[1][1])
    times = kept_times(template)
    slope = linear_coefficient(template.phi)

    rates: Dict[float, float] = {}
    for m in cfg.masses:
        config = template.with_mass(m)
        local = replace(params, mass=m)
        out = _ensemble(cfg, config, [(m, 0), (m, 1)], initials)
        alive = out["alive"]
        u1, v1 = out["u"][alive, 0], out["v"][alive, 0]
        u2, v2 = out["u"][alive, 1], out["v"][alive, 1]

        distance = np.empty(u1.shape[:2])
        for r in range(u1.shape[1]):
            if m == 0:
                distance[:, r] = dtilde_0_rows(basis, local, u1[:, r], u2[:, r])
            else:
                distance[:, r] = dtilde_m_rows(basis, local, u1[:, r], v1[:, r], u2[:, r], v2[:, r])
        h_distance = basis.norm(u1 - u2)

        mean, half_width = calculate_mean_series(distance)
        h_mean, h_half_width = calculate_mean_series(h_distance)
        entry = report.entry(m)
        entry.statistics["dtilde_final"] = Statistic(mean=float(mean[-1]), half_width=float(half_width[-1]),
                                                     count=int(distance.shape[0]))
        result.series[f"contraction_m={m:g}"] = {
            "t": times, "dtilde_mean": mean, "dtilde_half_width": half_width,
            "h_mean": h_mean, "h_half_width": h_half_width,
        }

        if not np.any(difference):
            report.add_criterion(f"identical-initials[m={m:g}]", float(np.max(distance)) == 0.0,
                                 f"max distance {float(np.max(distance)):.3g}")
            continue

        rate = _tail_rate(times, mean)
        rate_h = _tail_rate(times, h_mean)
        rates[m] = rate
        entry.fitted.update({"rate": rate, "rate_h": rate_h})

        if slope is not None and template.cutoff is None:
            excited = np.nonzero(difference)[0]
            prediction = float(np.min(mode_decay_rate(basis.eigenvalues[excited] - slope, m)))
            entry.fitted["linear_prediction"] = prediction
            report.add_criterion(
                f"linear-rate[m={m:g}]", abs(rate_h - prediction) <= LINEAR_RATE_TOLERANCE * prediction,
                f"fitted {rate_h:.6g} vs predicted {prediction:.6g}",
            )
        logger.info(f"Contraction at m={m:g}: rate {rate:.4g}, H-rate {rate_h:.4g}")

    if rates:
        _uniformity(report, rates, spread, "contraction-rate")
    return result


# ----------------------------------------------------------------------
# Irreducibility and small balls
# ----------------------------------------------------------------------

def sample_initial_ball(ctx: FunctionalContext, count: int, radius: float, n_bar: int,
                        rng: np.random.Generator, max_rounds: int = 1000) -> Tuple[np.ndarray, np.ndarray]:
    """Rejection samples of V_m < radius, Gaussian directions in the first n_bar modes."""
    basis, m = ctx.basis, ctx.mass
    accepted_u, accepted_v = [], []
    total = 0
    for _ in range(max_rounds):
        z = rng.standard_normal((count, 2 * n_bar))
        if m == 0:
            z[:, n_bar:] = 0.0
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        z *= np.sqrt(radius) * rng.uniform(0.0, 1.0, (count, 1))
        u = np.zeros((count, basis.size))
        v = np.zeros((count, basis.size))
        u[:, :n_bar], v[:, :n_bar] = z[:, :n_bar], z[:, n_bar:]
        keep = v_m_values(ctx, u, v) < radius
        accepted_u.append(u[keep])
        accepted_v.append(v[keep])
        total += int(np.sum(keep))
        if total >= count:
            return np.concatenate(accepted_u)[:count], np.concatenate(accepted_v)[:count]
    raise ValidationError("out-of-range", f"rejection sampling of V_m < {radius:g} accepted only {total} states")


def _probe_config(template: SimConfig, mass: float, horizon: Optional[float]) -> SimConfig:
    config = template.with_mass(mass)
    if horizon is not None:
        config = replace(config, horizon=horizon)
    return config


def irreducibility_probe(cfg: EnsembleConfig, R: float, r: float, t: Optional[float] = None) -> ProbeResult:
    """Frequency of V_m(t) < r from initial states in {V_m < R}, with Wilson bounds."""
    report = ProbeReport(experiment="irreducibility", config_hash=cfg.config_hash)
    report.notes.append("initial states: Gaussian directions in the first n_bar modes, rejection-sampled into {V_m < R}")
    result = ProbeResult(report=report)
    template = cfg.template

    rows = []
    for i, m in enumerate(cfg.masses):
        config = _probe_config(template, m, t)
        n_bar, _ = shift_parameters(config)
        ctx = FunctionalContext(mass=m, phi=template.phi, basis=config.basis)
        rng = np.random.default_rng([config.seed, i])
        u0, v0 = sample_initial_ball(ctx, cfg.trajectories, R, n_bar, rng)

        last = len(record_steps(config.n_steps, config.stride)) - 1
        out = _ensemble(cfg, config, [(m, 0)], [(u0, v0)], keep_from=last)
        alive = out["alive"]
        final_v = v_m_values(ctx, out["u"][alive, 0, -1], out["v"][alive, 0, -1])
        hits = int(np.sum(final_v < r))

        frequency = _frequency(hits, int(np.sum(alive)))
        report.entry(m).frequencies["hit"] = frequency
        report.entry(m).values.update({"n_bar": n_bar, "horizon": config.horizon})
        report.add_criterion(f"irreducible[m={m:g}]", frequency.lower > 0,
                             f"Wilson lower bound {frequency.lower:.4g}")
        rows.append((m, frequency.value, frequency.lower, frequency.upper))

    result.series["irreducibility"] = {name: np.array([row[j] for row in rows])
                                       for j, name in enumerate(("mass", "frequency", "lower", "upper"))}
    return result


def small_ball_probe(cfg: EnsembleConfig, r: float, T: Optional[float] = None,
                     radii: Sequence[float] = ()) -> ProbeResult:
    """P(sup_{[0, T']} |Gamma_1|_{H^2}^2 + m^2 |Gamma_2|_{H^1}^2 < r') over a grid of r' and T' <= T."""
    report = ProbeReport(experiment="small-ball", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = replace(cfg.template, phi=None, initial=None, cutoff=None, stop_radius=None)
    horizon = template.horizon if T is None else T
    radii = sorted(set(radii) | {r / 4.0, r / 2.0, r, 2.0 * r, 4.0 * r})

    for m in cfg.masses:
        config = replace(template.with_mass(m), horizon=horizon)
        checkpoints = sorted({max(1, int(round(f * config.n_steps))) for f in (0.25, 0.5, 1.0)})
        out = run_ensemble(running_sup_batch, cfg.trajectories, workers=cfg.workers, config=config,
                           checkpoints=checkpoints)
        sups = out["sup"][out["alive"]]
        trials = sups.shape[0]
        entry = report.entry(m)

        table = np.zeros((len(radii), len(checkpoints)))
        for i, radius in enumerate(radii):
            for j, step in enumerate(checkpoints):
                hits = int(np.sum(sups[:, j] < radius))
                table[i, j] = hits / trials
                entry.frequencies[f"r={radius:g},T={step * config.step:g}"] = _frequency(hits, trials)

        target = entry.frequencies[f"r={r:g},T={checkpoints[-1] * config.step:g}"]
        report.add_criterion(f"small-ball-positive[m={m:g}]", target.lower > 0,
                             f"Wilson lower bound {target.lower:.4g} at r={r:g}")
        report.add_criterion(f"monotone-in-radius[m={m:g}]", bool(np.all(np.diff(table, axis=0) >= 0)))
        report.add_criterion(f"monotone-in-horizon[m={m:g}]", bool(np.all(np.diff(table, axis=1) <= 0)))

        columns = {"radius": np.asarray(radii)}
        for j, step in enumerate(checkpoints):
            columns[f"T={step * config.step:g}"] = table[:, j]
        result.series[f"small_ball_m={m:g}"] = columns
    return result


# ----------------------------------------------------------------------
# Asymptotic smoothing
# ----------------------------------------------------------------------

def asf_decay(cfg: EnsembleConfig, direction: Optional[PhaseState] = None, alpha_shift: Optional[float] = None,
              spread: float = settings.UNIFORMITY_SPREAD, kappa: float = 0.0,
              audited_paths: int = 16) -> ProbeResult:
    """E Psi_1(rho) of the feedback-controlled linearization and its control costs, per mass."""
    report = ProbeReport(experiment="asf", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = cfg.template
    basis = template.basis
    direction = direction or unit_direction(basis, 1)
    times = kept_times(template)
    slope = linear_coefficient(template.phi)
    zero_direction = not (np.any(direction.u.coeffs) or np.any(direction.velocity()))

    rates: Dict[float, float] = {}
    for m in cfg.masses:
        config = template.with_mass(m)
        n_bar, alpha = shift_parameters(config, alpha_shift)
        out = run_ensemble(control_batch, cfg.trajectories, workers=cfg.workers, config=config,
                           direction=direction, alpha_shift=alpha_shift)
        psi = out["psi1"]
        mean, half_width = calculate_mean_series(psi)
        entry = report.entry(m)
        entry.values.update({"n_bar": n_bar, "alpha_shift": alpha})
        result.series[f"asf_m={m:g}"] = {"t": times, "psi1_mean": mean, "psi1_half_width": half_width}

        for cost in ("cost_inverse", "cost_q"):
            estimate = calculate_mean_estimate(out[cost])
            entry.statistics[cost] = _statistic(estimate)
            report.add_criterion(f"{cost}-finite[m={m:g}]",
                                 math.isfinite(estimate.mean) and math.isfinite(estimate.half_width),
                                 f"{estimate.mean:.6g} +- {estimate.half_width:.2g}")

        if zero_direction:
            report.add_criterion(f"zero-direction[m={m:g}]", float(np.max(np.abs(psi))) == 0.0)
            continue

        rate, _ = calculate_log_linear_rate(times[1:], envelope(mean)[1:])
        rates[m] = rate
        entry.fitted["rate"] = rate

        audits = [
            gronwall_audit(psi[i], out["u_h1_squared"][i], config.step * config.stride, kappa=kappa)
            for i in range(min(audited_paths, psi.shape[0]))
        ]
        entry.values["gronwall_pass_fraction"] = float(np.mean([a.passed for a in audits]))
        entry.values["gronwall_tight_constant"] = float(min(a.tight_constant for a in audits))

        if slope is not None and template.cutoff is None:
            excited = np.nonzero(direction.u.coeffs)[0]
            shifted = basis.eigenvalues[excited] - slope + alpha * (excited < n_bar)
            prediction = 2.0 * float(np.min(mode_decay_rate(shifted, m)))
            entry.fitted["linear_prediction"] = prediction
            report.add_criterion(f"linear-rate[m={m:g}]", abs(rate - prediction) <= LINEAR_RATE_TOLERANCE * prediction,
                                 f"fitted {rate:.6g} vs predicted {prediction:.6g}")
        logger.info(f"ASF decay at m={m:g}: rate {rate:.4g}")

    if rates:
        _uniformity(report, rates, spread, "asf-rate")
    return result


# ----------------------------------------------------------------------
# Small-mass limits
# ----------------------------------------------------------------------

def _coupled_template(cfg: EnsembleConfig, horizon: Optional[float]) -> SimConfig:
    """Template for pathwise mass comparisons: every member sees the same Brownian increments."""
    template = cfg.template
    if template.noise_mode == "exact":
        template = replace(template, noise_mode="increment")
    if horizon is not None:
        template = replace(template, horizon=horizon)
    return template


def linear_gap_moment(config: SimConfig, coefficient: float) -> np.ndarray:
    """E |u^m - u^0|_H^2 at every record for phi(x) = c x under increment-driven noise.

    Exact second moments of the per-mode recursion of (u^m, v^m, u^0).
    """
    basis = config.basis
    wave = build_propagators(basis, config.q, config.mass, config.step)
    heat = build_propagators(basis, config.q, 0.0, config.step)
    n = basis.size

    F = np.zeros((n, 3, 3))
    F[:, 0, 0] = wave.transition[0, 0] + coefficient * wave.gains[0]
    F[:, 0, 1] = wave.transition[0, 1]
    F[:, 1, 0] = wave.transition[1, 0] + coefficient * wave.gains[1]
    F[:, 1, 1] = wave.transition[1, 1]
    F[:, 2, 2] = heat.transition[0, 0] + coefficient * heat.gains[0]
    g = np.stack([wave.brownian_gain[0], wave.brownian_gain[1], heat.brownian_gain[0]], axis=-1)
    source = config.step * g[:, :, None] * g[:, None, :]

    u0, v0 = config.initial_arrays()
    mean = np.stack([u0, v0, u0], axis=-1)
    cov = np.zeros((n, 3, 3))
    d = np.array([1.0, 0.0, -1.0])
    wanted = set(record_steps(config.n_steps, config.stride).tolist())

    moments = []
    for step in range(config.n_steps + 1):
        if step in wanted:
            moments.append(float(np.sum(np.einsum("i,kij,j->k", d, cov, d) + (mean @ d) ** 2)))
        if step == config.n_steps:
            break
        mean = np.einsum("kij,kj->ki", F, mean)
        cov = F @ cov @ np.transpose(F, (0, 2, 1)) + source
    return np.asarray(moments)


def _stopped_by(stopping: np.ndarray, step: int) -> np.ndarray:
    return (stopping >= 0) & (stopping <= step)


def small_mass_gap(cfg: EnsembleConfig, masses: Optional[Sequence[float]] = None, T: Optional[float] = None,
                   shrink_factor: float = 0.2, tolerance: float = 0.05) -> ProbeResult:
    """g(m) = sup_t E |u^m(t) - u^0(t)|_H on shared Brownian paths and shared u-initial data.

    With a stopping radius the gap at the maximizing time is split over {tau^m and tau^0 > t}
    and its complement.
    """
    masses = _decreasing_masses(validate_mass_sweep(cfg.masses if masses is None else masses))
    report = ProbeReport(experiment="mass-gap", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = _coupled_template(cfg, T)
    radius = template.stop_radius or template.cutoff
    template = replace(template, stop_radius=radius)
    if template.noise_mode == "increment":
        report.notes.append("noise driven by shared Brownian increments (increment mode)")
    basis = template.basis
    times = kept_times(template)
    steps = record_steps(template.n_steps, template.stride)
    slope = linear_coefficient(template.phi)

    gaps: List[MeanEstimate] = []
    for m in masses:
        config = template.with_mass(m)
        out = _ensemble(cfg, config, [(m, 0), (0.0, 0)], [config.initial_arrays()])
        alive = out["alive"]
        gap = basis.norm(out["u"][alive, 0] - out["u"][alive, 1])
        mean, half_width = calculate_mean_series(gap)
        k = int(np.argmax(mean))
        estimate = MeanEstimate(mean=float(mean[k]), half_width=float(half_width[k]), count=int(gap.shape[0]))
        gaps.append(estimate)

        entry = report.entry(m)
        entry.statistics["g"] = _statistic(estimate)
        entry.values["argmax_t"] = float(times[k])
        result.series[f"mass_gap_m={m:g}"] = {"t": times, "gap_mean": mean, "gap_half_width": half_width}

        if radius is not None:
            stopping = out["stopping"][alive]
            stopped = _stopped_by(stopping[:, 0], steps[k]) | _stopped_by(stopping[:, 1], steps[k])
            entry.statistics["g_unstopped"] = _statistic(calculate_mean_estimate(gap[:, k] * ~stopped))
            entry.statistics["g_stopped"] = _statistic(calculate_mean_estimate(gap[:, k] * stopped))
            ever = _stopped_by(stopping[:, 0], steps[-1]) | _stopped_by(stopping[:, 1], steps[-1])
            entry.frequencies["stopped_by_T"] = _frequency(int(np.sum(ever)), int(ever.size))

        if slope is not None and m > 0 and template.cutoff is None and template.noise_mode == "increment":
            oracle = float(linear_gap_moment(config, slope)[-1])
            second = calculate_mean_estimate(gap[:, -1] ** 2)
            entry.values["oracle_second_moment"] = oracle
            entry.statistics["second_moment"] = _statistic(second)
            report.add_criterion(f"linear-oracle[m={m:g}]",
                                 abs(second.mean - oracle) <= second.half_width + tolerance * oracle,
                                 f"{second.mean:.6g} +- {second.half_width:.2g} vs {oracle:.6g}")
        logger.info(f"Mass gap at m={m:g}: g = {estimate.mean:.6g} +- {estimate.half_width:.2g}")

    ok, inversions = check_monotone_decreasing([g.mean for g in gaps], [g.half_width for g in gaps])
    report.fitted["inversions"] = float(inversions)
    report.add_criterion("gap-decreasing", ok, f"{inversions} inversion(s)")
    report.add_criterion("gap-shrinks", gaps[-1].upper < shrink_factor * gaps[0].lower or gaps[-1].mean == 0.0,
                         f"g(m={masses[-1]:g}) upper {gaps[-1].upper:.6g} vs {shrink_factor:g} x g(m={masses[0]:g}) lower {gaps[0].lower:.6g}")
    result.series["mass_gap"] = {
        "mass": np.asarray(masses), "g": np.array([g.mean for g in gaps]),
        "half_width": np.array([g.half_width for g in gaps]),
    }
    return result


def _marginal_sample(cfg: EnsembleConfig, mass: float, offset: int, size: int) -> EmpiricalMeasure:
    _, marginal, _ = invariant_sample(cfg, mass, offset=offset)
    return subsample(marginal, size)


def invariant_gap(cfg: EnsembleConfig, masses: Optional[Sequence[float]] = None, sample_size: int = 256,
                  expect: str = "shrink", gap_factor: float = 0.5) -> ProbeResult:
    """W_{dtilde_0}(pi_1 nu^m, nu^0) per mass, each sample on its own block of streams.

    The noise floor is the same distance between two independent nu^0 samples.
    """
    masses = _decreasing_masses(validate_mass_sweep(cfg.masses if masses is None else masses, minimum=1))
    if expect not in ("shrink", "coincide"):
        raise ValidationError("out-of-range", f"expect must be 'shrink' or 'coincide', got {expect!r}")
    report = ProbeReport(experiment="invariant-gap", config_hash=cfg.config_hash)
    report.notes.append("distances between empirical measures of equal size, ground dtilde_0")
    result = ProbeResult(report=report)
    params = cfg.metric or MetricParams(N=1.0, beta=0.0)
    block = cfg.trajectories

    baseline = _marginal_sample(cfg, 0.0, 0, sample_size)
    floor = wasserstein(_marginal_sample(cfg, 0.0, block, sample_size), baseline, "dtilde_0", params)
    report.fitted["noise_floor"] = floor
    result.measures["baseline"] = baseline

    gaps = []
    for i, m in enumerate(masses):
        sample = _marginal_sample(cfg, m, (i + 2) * block, sample_size)
        gap = wasserstein(sample, baseline, "dtilde_0", params)
        gaps.append(gap)
        entry = report.entry(m)
        entry.values.update({"gap": gap, "noise_floor": floor, "ratio": gap / floor if floor > 0 else math.inf})
        result.measures[f"m={m:g}"] = sample
        if expect == "coincide":
            report.add_criterion(f"coincides[m={m:g}]", gap <= FLOOR_FACTOR * floor,
                                 f"gap {gap:.6g} vs {FLOOR_FACTOR:g} x floor {floor:.6g}")
        logger.info(f"Invariant gap at m={m:g}: {gap:.6g} (floor {floor:.6g})")

    if expect == "shrink":
        if len(masses) < 2:
            raise ValidationError("needs-sweep", "a shrinking gap needs at least 2 masses")
        ok, inversions = check_monotone_decreasing(gaps, [floor] * len(gaps))
        report.add_criterion("gap-decreasing", ok, f"{inversions} inversion(s)")
        report.add_criterion("gap-shrinks", gaps[-1] < gap_factor * gaps[0],
                             f"gap(m={masses[-1]:g}) {gaps[-1]:.6g} vs {gap_factor:g} x gap(m={masses[0]:g}) {gaps[0]:.6g}")

    result.series["invariant_gap"] = {
        "mass": np.asarray(masses), "gap": np.asarray(gaps), "noise_floor": np.full(len(gaps), floor),
    }
    return result


def observable_registry(basis: Basis, params: MetricParams, names: Sequence[str],
                        extra: Optional[Dict[str, Observable]] = None) -> Dict[str, Observable]:
    """Named observables with their Lipschitz constants under dtilde_0."""
    known: Dict[str, Observable] = {
        "constant": (lambda u: np.ones(np.shape(u)[:-1]), 0.0),
        "clipped-norm": (clipped_norm_observable(basis, params.N), 1.0),
    }
    known.update(extra or {})
    registry = {}
    for name in names:
        if name not in known:
            raise ValidationError("uncertified-observable", f"no certified observable named {name!r}")
        registry[name] = known[name]
    return registry


def observable_gap(cfg: EnsembleConfig, registry: Dict[str, Observable], T_max: Optional[float] = None,
                   sample_size: int = 256) -> ProbeResult:
    """sup_t |E f(u^m(t)) - E f(u^0(t))| on shared paths, with a dual-bound audit at the horizon."""
    for name, (_, lipschitz) in registry.items():
        if lipschitz is None:
            raise ValidationError("uncertified-observable", f"observable {name!r} has no Lipschitz constant")
    masses = _decreasing_masses(validate_mass_sweep(cfg.masses))
    report = ProbeReport(experiment="observable-gap", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = _coupled_template(cfg, T_max)
    basis = template.basis
    params = cfg.metric or MetricParams(N=1.0, beta=0.0)
    times = kept_times(template)

    gaps: Dict[str, List[MeanEstimate]] = {name: [] for name in registry}
    for m in masses:
        config = template.with_mass(m)
        out = _ensemble(cfg, config, [(m, 0), (0.0, 0)], [config.initial_arrays()])
        alive = out["alive"]
        u_m, u_0 = out["u"][alive, 0], out["u"][alive, 1]
        entry = report.entry(m)
        columns = {"t": times}

        for name, (f, lipschitz) in registry.items():
            mean, half_width = calculate_mean_series(f(u_m) - f(u_0))
            k = int(np.argmax(np.abs(mean)))
            estimate = MeanEstimate(mean=float(abs(mean[k])), half_width=float(half_width[k]), count=int(u_m.shape[0]))
            gaps[name].append(estimate)
            entry.statistics[name] = _statistic(estimate)
            columns[f"{name}_gap"], columns[f"{name}_half_width"] = np.abs(mean), half_width

            if lipschitz > 0:
                size = min(u_m.shape[0], sample_size)
                A = EmpiricalMeasure(basis=basis, u=u_m[:size, -1])
                B = EmpiricalMeasure(basis=basis, u=u_0[:size, -1])
                distance = wasserstein(A, B, "dtilde_0", params)
                bound = dual_lower_bound(f, lipschitz, A, B)
                entry.values[f"{name}_wasserstein"] = distance
                entry.values[f"{name}_dual_bound"] = bound
                report.add_criterion(f"dual-bound[{name},m={m:g}]", bound <= distance * (1.0 + 1e-9) + 1e-12,
                                     f"{bound:.6g} vs W {distance:.6g}")
        result.series[f"observable_gap_m={m:g}"] = columns

    for name, estimates in gaps.items():
        ok, inversions = check_monotone_decreasing([e.mean for e in estimates], [e.half_width for e in estimates])
        report.add_criterion(f"gap-decreasing[{name}]", ok, f"{inversions} inversion(s)")
    return result


# ----------------------------------------------------------------------
# Numerical checks
# ----------------------------------------------------------------------

def tangent_check(cfg: EnsembleConfig, direction: Optional[PhaseState] = None, epsilon: float = 1e-5) -> ProbeResult:
    report = ProbeReport(experiment="tangent-check", config_hash=cfg.config_hash)
    direction = direction or unit_direction(cfg.template.basis, 1)
    for m in cfg.masses:
        check = finite_difference_check(cfg.template.with_mass(m), direction, epsilon)
        entry = report.entry(m)
        entry.values.update({"relative_error": check.relative_error, "tangent_norm": check.tangent_norm,
                             "difference_norm": check.difference_norm, "epsilon": epsilon})
        report.add_criterion(f"tangent[m={m:g}]", check.relative_error <= TANGENT_TOLERANCE,
                             f"relative H1 error {check.relative_error:.3e}")
    return ProbeResult(report=report)


def generator_probe(cfg: EnsembleConfig, tag: str = "energy", states: int = 5, paths: int = 100000,
                    step: float = 1e-3, tolerance: float = 0.05) -> ProbeResult:
    """Short-time Monte Carlo check of the closed-form generator at random states."""
    report = ProbeReport(experiment="generator-check", config_hash=cfg.config_hash)
    template = cfg.template
    basis = template.basis
    rng = np.random.default_rng([template.seed, 7])
    u, v = random_states(basis, states, rng)

    for m in cfg.masses:
        entry = report.entry(m)
        for i in range(states):
            state = PhaseState.from_arrays(basis, u[i], v[i] if m > 0 else None)
            check = generator_check(tag, state, m, template.nonlinearity, template.q, step=step, paths=paths,
                                    seed=template.seed + i)
            entry.statistics[f"state_{i}"] = _statistic(check.estimate)
            entry.values[f"closed_form_{i}"] = check.closed_form
            gap = abs(check.estimate.mean - check.closed_form)
            report.add_criterion(f"generator[{tag},m={m:g},state={i}]",
                                 gap <= check.estimate.half_width + tolerance * abs(check.closed_form),
                                 f"relative error {check.relative_error:.3%}")
    return ProbeResult(report=report)


def _iterated_covariance(config: SimConfig) -> np.ndarray:
    """Covariance of the exact linear recursion from rest after n_steps, per mode (2, 2, N)."""
    table = build_propagators(config.basis, config.q, config.mass, config.step)
    E = np.moveaxis(table.transition, -1, 0)
    S = np.moveaxis(table.sigma, -1, 0)
    cov = np.zeros_like(S)
    for _ in range(config.n_steps):
        cov = E @ cov @ np.transpose(E, (0, 2, 1)) + S
    return np.moveaxis(cov, 0, -1)


def _pooled_criterion(report: ProbeReport, name: str, samples: np.ndarray, oracle: float, tolerance: float):
    estimate = calculate_mean_estimate(samples)
    report.add_criterion(name, abs(estimate.mean - oracle) <= estimate.half_width + tolerance * oracle,
                         f"{estimate.mean:.6g} +- {estimate.half_width:.2g} vs {oracle:.6g}")
    return estimate


def linear_check(cfg: EnsembleConfig, tolerance: float = 0.05) -> ProbeResult:
    """Convolution and Langevin second moments at the horizon against their closed forms."""
    report = ProbeReport(experiment="linear-check", config_hash=cfg.config_hash)
    template = replace(cfg.template, phi=None, initial=None, cutoff=None, stop_radius=None, noise_mode="exact")
    basis = template.basis
    q = template.q.values(basis)
    last = len(record_steps(template.n_steps, template.stride)) - 1

    for m in cfg.masses:
        config = template.with_mass(m)
        entry = report.entry(m)
        cov = _iterated_covariance(config)
        out = _ensemble(cfg, config, [(m, 0)], [config.initial_arrays()], keep_from=last)
        u = out["u"][out["alive"], 0, -1]
        entry.statistics["convolution_u"] = _statistic(_pooled_criterion(
            report, f"convolution-u[m={m:g}]", basis.norm_squared(u), float(np.sum(cov[0, 0])), tolerance))
        if m == 0:
            continue

        v = out["v"][out["alive"], 0, -1]
        entry.statistics["convolution_v"] = _statistic(_pooled_criterion(
            report, f"convolution-v[m={m:g}]", basis.norm_squared(v), float(np.sum(cov[1, 1])), tolerance))

        langevin = _ensemble(cfg, config, [(m, 0)], [config.initial_arrays()], keep_from=last, langevin=True)
        eta = langevin["v"][langevin["alive"], 0, -1]
        oracle = float(np.sum(langevin_velocity_variance(q, m, config.horizon)))
        entry.statistics["langevin_v"] = _statistic(_pooled_criterion(
            report, f"langevin-v[m={m:g}]", basis.norm_squared(eta), oracle, tolerance))
    return ProbeResult(report=report)


def convergence_probe(cfg: EnsembleConfig, levels: int = 4) -> ProbeResult:
    """Strong endpoint error against step on one fine Brownian path per trajectory."""
    report = ProbeReport(experiment="convergence", config_hash=cfg.config_hash)
    result = ProbeResult(report=report)
    template = replace(cfg.template, stop_radius=None)
    masses = list(cfg.masses)
    fine_values = template.n_steps * 2 ** levels * template.basis.size
    batch_size = max(1, min(settings.TRAJECTORY_BATCH, CONVERGENCE_BATCH_VALUES // max(fine_values, 1)))
    out = run_ensemble(convergence_batch, cfg.trajectories, workers=cfg.workers, batch_size=batch_size,
                       config=template, levels=levels, masses=masses)
    steps = template.step / 2.0 ** np.arange(levels)

    for i, m in enumerate(masses):
        errors = out["errors"][:, i]
        finite = np.all(np.isfinite(errors), axis=1)
        means = errors[finite].mean(axis=0)
        slope = estimate_slope(steps, means)
        entry = report.entry(m)
        entry.fitted["order"] = float("nan") if slope is None else slope
        for level in range(levels):
            entry.statistics[f"error_h={steps[level]:g}"] = _statistic(calculate_mean_estimate(errors[finite, level]))
        low, high = SLOPE_RANGE
        report.add_criterion(f"strong-order[m={m:g}]", slope is not None and low <= slope <= high,
                             "no slope" if slope is None else f"slope {slope:.3f}")
        result.series[f"convergence_m={m:g}"] = {"step": steps, "error": means}
    return result


def metric_audit(cfg: EnsembleConfig, pairs: int = 10000, trials: int = 100, triples: int = 100,
                 size: int = 64) -> ProbeResult:
    """Dominance of dtilde^m over dtilde_0, nonlinearity inequalities, assignment exactness, triangle constant."""
    report = ProbeReport(experiment="metric-audit", config_hash=cfg.config_hash)
    template = cfg.template
    basis = template.basis
    params = cfg.metric or MetricParams(N=1.0, beta=0.0)
    rng = np.random.default_rng([template.seed, 11])

    u1, v1 = random_states(basis, pairs, rng)
    u2, v2 = random_states(basis, pairs, rng)
    lower = dtilde_0_rows(basis, params, u1, u2)
    for m in cfg.masses:
        if m == 0:
            continue
        local = replace(params, mass=m, phi=template.phi)
        upper = dtilde_m_rows(basis, local, u1, v1, u2, v2)
        violations = int(np.sum(upper < lower * (1.0 - 1e-12)))
        report.entry(m).values["dominance_violations"] = violations
        report.add_criterion(f"dominance[m={m:g}]", violations == 0, f"{violations} of {pairs} pairs")

    if template.phi is not None and not template.phi.is_zero:
        samples = rng.uniform(-10.0, 10.0, (pairs, 2))
        inequalities = check_inequalities(template.phi, samples)
        report.fitted["epsilon"] = inequalities.epsilon
        report.add_criterion("nonlinearity-inequalities", inequalities.passed, str(inequalities.violations))

    mismatches = 0
    for _ in range(trials):
        n = int(rng.integers(1, 7))
        A = EmpiricalMeasure(basis=basis, u=random_states(basis, n, rng)[0])
        B = EmpiricalMeasure(basis=basis, u=random_states(basis, n, rng)[0])
        exact = wasserstein(A, B, "dtilde_0", params)
        brute = brute_force_assignment(pairwise_cost(A, B, "dtilde_0", params))
        mismatches += int(abs(exact - brute) > 1e-12 * max(1.0, brute))
    report.add_criterion("assignment-exact", mismatches == 0, f"{mismatches} of {trials} instances")

    triangle = triangle_audit(params, basis, triples=triples, size=size, seed=template.seed)
    report.fitted["triangle_constant"] = triangle.constant
    report.add_criterion("triangle-constant-finite", math.isfinite(triangle.constant),
                         f"C = {triangle.constant:.6g}, {triangle.violations} violations")
    return ProbeResult(report=report)


def functional_audit(cfg: EnsembleConfig, count: int = 10000) -> ProbeResult:
    """Nonnegativity of the functionals and the energy / V_m equivalence constants on random states."""
    report = ProbeReport(experiment="functional-audit", config_hash=cfg.config_hash)
    template = cfg.template
    ctx = FunctionalContext(mass=template.mass, phi=template.phi, basis=template.basis)
    audit = nonnegativity_audit(ctx, cfg.masses, count=count, seed=template.seed)

    for name, value in audit.min_values.items():
        report.fitted[f"min_{name}"] = value
        report.add_criterion(f"nonnegative[{name}]", value >= 0.0, f"min {value:.6g}")
    for m in cfg.masses:
        entry = report.entry(m)
        entry.fitted["psi1_sharp_constant"] = audit.sharp_constants[m]
        entry.values["quarter_bound_violations"] = audit.quarter_bound_violations[m]
        c, C, violations = equivalence_constants(ctx.at_mass(m), count=count, seed=template.seed)
        entry.fitted.update({"equivalence_lower": c, "equivalence_upper": C})
        report.add_criterion(f"equivalence[m={m:g}]", c > 0 and math.isfinite(C) and violations == 0,
                             f"c = {c:.4g}, C = {C:.4g}")
    report.fitted["m_star"] = audit.m_star
    return ProbeResult(report=report)


# ----------------------------------------------------------------------
# Dispatch
# ----------------------------------------------------------------------

def _generator_tag(functional: str) -> str:
    return functional if functional in FUNCTIONALS else "energy"


PROBES: Dict[str, Callable[[EnsembleConfig, ProbeOptions], ProbeResult]] = {
    "moments": lambda cfg, o: moment_bound_report(cfg, o.functional, o.order, o.moment_beta, o.radius),
    "contraction": lambda cfg, o: contraction_estimate(cfg, radius=o.radius, spread=o.spread),
    "irreducibility": lambda cfg, o: irreducibility_probe(cfg, o.radius, o.ball, o.probe_horizon),
    "small-ball": lambda cfg, o: small_ball_probe(cfg, o.ball, o.probe_horizon, o.radii),
    "asf": lambda cfg, o: asf_decay(cfg, unit_direction(cfg.template.basis, o.direction_mode),
                                    spread=o.spread, kappa=o.kappa),
    "mass-gap": lambda cfg, o: small_mass_gap(cfg, T=o.probe_horizon, shrink_factor=o.shrink_factor,
                                              tolerance=o.tolerance),
    "invariant-gap": lambda cfg, o: invariant_gap(cfg, sample_size=o.sample_size, expect=o.expect,
                                                  gap_factor=o.gap_factor),
    "observable-gap": lambda cfg, o: observable_gap(
        cfg, observable_registry(cfg.template.basis, cfg.metric or MetricParams(N=1.0, beta=0.0),
                                 o.observables, cfg.observables),
        o.probe_horizon, o.sample_size),
    "invariant-sample": lambda cfg, o: invariant_sample_report(cfg, o.tolerance),
    "tangent-check": lambda cfg, o: tangent_check(cfg, unit_direction(cfg.template.basis, o.direction_mode),
                                                  o.epsilon),
    "generator-check": lambda cfg, o: generator_probe(cfg, _generator_tag(o.functional), o.generator_states,
                                                      o.generator_paths, o.generator_step, o.tolerance),
    "linear-check": lambda cfg, o: linear_check(cfg, o.tolerance),
    "convergence": lambda cfg, o: convergence_probe(cfg, o.levels),
    "metric-audit": lambda cfg, o: metric_audit(cfg, pairs=o.audit_samples),
    "functional-audit": lambda cfg, o: functional_audit(cfg, count=o.audit_samples),
}

SWEEP_PROBES = ("mass-gap", "observable-gap")


def run_probe(name: str, cfg: EnsembleConfig, options: Optional[ProbeOptions] = None) -> ProbeResult:
    """Run a named probe; ``report.passed`` is true iff every declared criterion holds."""
    if name not in PROBES:
        raise ValidationError("unknown-probe", f"unknown probe {name!r}; known: {', '.join(PROBES)}")
    if name in SWEEP_PROBES:
        validate_mass_sweep(cfg.masses)

    started = time.time()
    logger.info(f"Running probe {name} over masses {list(cfg.masses)}")
    result = PROBES[name](cfg, options or ProbeOptions())
    result.report.wall_time = time.time() - started

    if not result.report.passed:
        logger.warning(f"Probe {name} failed: {', '.join(result.report.failing)}")
    return result
