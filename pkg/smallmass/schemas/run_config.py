"""Pydantic schemas for the sectioned run-configuration file, and their conversion to simulation objects."""

import configparser
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator

from smallmass.config import settings
from smallmass.core.dynamics import NOISE_MODES, SCHEMES, SimConfig
from smallmass.core.ensemble import EnsembleConfig
from smallmass.core.metrics import MetricParams
from smallmass.core.noise_model import QSpec
from smallmass.core.nonlinearity import PhiSpec
from smallmass.core.probes import ProbeOptions
from smallmass.core.spectral_domain import Basis, DomainSpec, PhaseState, SpectralField, build_basis
from smallmass.utils.persistence import config_hash
from smallmass.utils.validators import ValidationError, validate_axis_values

SECTIONS = ("domain", "phi", "noise", "sim", "metric", "probe", "run")


def _split_list(value):
    """Comma-separated text to a list; other values pass through."""
    if isinstance(value, str):
        items = [item.strip() for item in value.split(",")]
        return [item for item in items if item]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSection(_Section):
    """[domain]: box edge lengths and modes per axis (scalars broadcast)."""

    dimension: int = Field(default=1, ge=1, le=3, description="Spatial dimension d")
    lengths: List[float] = Field(default_factory=lambda: [3.141592653589793], description="Edge lengths L_i")
    modes: List[int] = Field(default_factory=lambda: [16], description="Retained modes n_i per axis")

    @field_validator("lengths", "modes", mode="before")
    @classmethod
    def split_axes(cls, v):
        return _split_list(v)


class PhiSection(_Section):
    """[phi]: signed-power terms "c:p, c:p" and an optional truncation radius."""

    terms: List[Tuple[float, float]] = Field(default_factory=list, description="(coefficient, power) pairs")
    cutoff: Optional[float] = Field(None, gt=0, description="Truncation radius R of phi theta_R")

    @field_validator("terms", mode="before")
    @classmethod
    def parse_terms(cls, v):
        if not isinstance(v, str):
            return v
        pairs = []
        for item in _split_list(v):
            coefficient, sep, power = item.partition(":")
            if not sep:
                raise ValueError(f"term {item!r} is not of the form c:p")
            pairs.append((float(coefficient), float(power)))
        return pairs


class NoiseSection(_Section):
    """[noise]: explicit coefficients, or sigma and gamma for q_k = sigma (1 + alpha_k)^(-gamma)."""

    coefficients: Optional[List[float]] = Field(None, description="q_k in sorted mode order")
    sigma: Optional[float] = Field(None, ge=0)
    gamma: Optional[float] = None

    @field_validator("coefficients", mode="before")
    @classmethod
    def split_coefficients(cls, v):
        return _split_list(v)


class SimSection(_Section):
    """[sim]: one simulation run."""

    mass: float = Field(default=0.1, ge=0, description="Particle mass m; 0 selects the heat system")
    step: float = Field(default=1e-3, description="Time step h")
    horizon: float = Field(default=1.0, ge=0, description="Horizon T")
    stride: int = Field(default=1, ge=1, description="Record every stride steps")
    scheme: str = Field(default="exponential-euler")
    noise_mode: str = Field(default="exact", description="exact / increment / off")
    initial: str = Field(default="zero", description="zero / mode")
    initial_mode: int = Field(default=1, ge=1, description="Sorted mode index of the initial datum")
    initial_amplitude: float = 0.0
    initial_velocity: float = 0.0
    stop_radius: Optional[float] = Field(None, gt=0, description="Record the first time |u|_Linf exceeds it")

    @field_validator("scheme")
    @classmethod
    def check_scheme(cls, v):
        if v not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        return v

    @field_validator("noise_mode")
    @classmethod
    def check_noise_mode(cls, v):
        if v not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        return v

    @field_validator("initial")
    @classmethod
    def check_initial(cls, v):
        if v not in ("zero", "mode"):
            raise ValueError("initial must be 'zero' or 'mode'")
        return v


class MetricSection(_Section):
    """[metric]: scale N, weight beta and quadrature nodes of the path metric."""

    N: float = Field(default=1.0, gt=0)
    beta: float = Field(default=0.01, ge=0)
    nodes: int = Field(default=settings.QUADRATURE_NODES, ge=2)


class ProbeSection(_Section):
    """[probe]: ensemble sizes, sweeps and declared tolerances."""

    trajectories: int = Field(default=256, ge=1)
    burn_in: float = Field(default=0.0, ge=0)
    thinning: int = Field(default=1, ge=1)
    mixing_time: float = Field(default=0.0, ge=0, description="Declared mixing estimate; burn_in must reach it")
    masses: List[float] = Field(default_factory=list)
    sample_size: int = Field(default=256, ge=1, le=settings.MAX_ASSIGNMENT_SIZE)
    radius: float = Field(default=10.0, gt=0, description="R of the initial set {V_m < R}")
    ball: float = Field(default=1.0, gt=0, description="r of the target ball")
    radii: List[float] = Field(default_factory=list, description="Extra r values for the small-ball sweep")
    probe_horizon: Optional[float] = Field(None, ge=0, description="t of the irreducibility / small-ball event")
    spread: float = Field(default=settings.UNIFORMITY_SPREAD, gt=0)
    tolerance: float = Field(default=0.05, gt=0)
    shrink_factor: float = Field(default=0.2, gt=0)
    gap_factor: float = Field(default=0.5, gt=0, description="Required gap ratio between the smallest and largest mass")
    expect: str = Field(default="shrink", description="shrink / coincide")
    functional: str = Field(default="energy", description="energy / psi2 / exp-energy / exp-h")
    order: int = Field(default=1, ge=1)
    moment_beta: float = Field(default=0.0, ge=0)
    direction_mode: int = Field(default=1, ge=1)
    kappa: float = Field(default=0.0, ge=0)
    epsilon: float = Field(default=1e-5, gt=0)
    generator_states: int = Field(default=5, ge=1)
    generator_paths: int = Field(default=100000, ge=2)
    generator_step: float = Field(default=1e-3, gt=0)
    levels: int = Field(default=4, ge=2)
    observables: List[str] = Field(default_factory=lambda: ["clipped-norm"])
    audit_samples: int = Field(default=10000, ge=1, description="Random states or pairs per audit")

    @field_validator("masses", "radii", "observables", mode="before")
    @classmethod
    def split_lists(cls, v):
        return _split_list(v)

    @field_validator("expect")
    @classmethod
    def check_expect(cls, v):
        if v not in ("shrink", "coincide"):
            raise ValueError("expect must be 'shrink' or 'coincide'")
        return v


class RunSection(_Section):
    """[run]: master seed, output directory and worker count."""

    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    output: str = Field(default=settings.OUTPUT_DIR)
    workers: int = Field(default=settings.DEFAULT_WORKERS, ge=1)


class RunConfig(_Section):
    """Parsed run-configuration file."""

    domain: DomainSection = Field(default_factory=DomainSection)
    phi: PhiSection = Field(default_factory=PhiSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    sim: SimSection = Field(default_factory=SimSection)
    metric: MetricSection = Field(default_factory=MetricSection)
    probe: ProbeSection = Field(default_factory=ProbeSection)
    run: RunSection = Field(default_factory=RunSection)

    # ------------------------------------------------------------------
    # Builders
    # ------------------------------------------------------------------

    def domain_spec(self) -> DomainSpec:
        d = self.domain.dimension
        lengths = validate_axis_values(self.domain.lengths, d, "lengths")
        modes = [int(n) for n in validate_axis_values(self.domain.modes, d, "modes")]
        return DomainSpec(dimension=d, lengths=tuple(lengths), modes=tuple(modes))

    def basis(self) -> Basis:
        return build_basis(self.domain_spec())

    def phi_spec(self) -> PhiSpec:
        return PhiSpec.from_pairs(self.phi.terms)

    def q_spec(self) -> QSpec:
        if self.noise.coefficients is not None:
            if self.noise.sigma is not None or self.noise.gamma is not None:
                raise ValidationError("parse-error", "[noise] takes coefficients or sigma/gamma, not both")
            return QSpec(coefficients=tuple(self.noise.coefficients))
        if self.noise.sigma is None or self.noise.gamma is None:
            raise ValidationError("parse-error", "[noise] needs coefficients, or both sigma and gamma")
        return QSpec(sigma=self.noise.sigma, gamma=self.noise.gamma)

    def initial_state(self, basis: Basis) -> Optional[PhaseState]:
        if self.sim.initial == "zero":
            return None
        position = self.sim.initial_mode - 1
        if position >= basis.size:
            raise ValidationError("out-of-range", f"initial mode {self.sim.initial_mode} exceeds {basis.size} modes")
        u = SpectralField.mode(basis, position, self.sim.initial_amplitude)
        v = SpectralField.mode(basis, position, self.sim.initial_velocity)
        return PhaseState(u=u, v=v)

    def sim_config(self, mass: Optional[float] = None) -> SimConfig:
        basis = self.basis()
        phi = self.phi_spec()
        return SimConfig(
            basis=basis,
            q=self.q_spec(),
            mass=self.sim.mass if mass is None else mass,
            step=self.sim.step,
            horizon=self.sim.horizon,
            phi=None if phi.is_zero else phi,
            stride=self.sim.stride,
            scheme=self.sim.scheme,
            initial=self.initial_state(basis),
            seed=self.run.seed,
            cutoff=self.phi.cutoff,
            stop_radius=self.sim.stop_radius,
            noise_mode=self.sim.noise_mode,
        )

    def metric_params(self, mass: Optional[float] = None) -> MetricParams:
        phi = self.phi_spec()
        return MetricParams(
            N=self.metric.N, beta=self.metric.beta, mass=self.sim.mass if mass is None else mass,
            nodes=self.metric.nodes, phi=None if phi.is_zero else phi,
        )

    def ensemble_config(self, config_hash: str = "-") -> EnsembleConfig:
        return EnsembleConfig(
            template=self.sim_config(),
            trajectories=self.probe.trajectories,
            burn_in=self.probe.burn_in,
            thinning=self.probe.thinning,
            masses=tuple(self.probe.masses),
            metric=self.metric_params(),
            workers=self.run.workers,
            mixing_time=self.probe.mixing_time,
            config_hash=config_hash,
        )

    def digest(self) -> str:
        """Config hash; the output location and worker count do not change any result."""
        return config_hash(self.model_dump(exclude={"run": {"output", "workers"}}))

    def probe_options(self) -> ProbeOptions:
        p = self.probe
        return ProbeOptions(
            radius=p.radius, ball=p.ball, radii=tuple(p.radii), probe_horizon=p.probe_horizon,
            spread=p.spread, tolerance=p.tolerance, shrink_factor=p.shrink_factor, gap_factor=p.gap_factor,
            expect=p.expect, functional=p.functional, order=p.order, moment_beta=p.moment_beta,
            direction_mode=p.direction_mode, kappa=p.kappa, epsilon=p.epsilon,
            generator_states=p.generator_states, generator_paths=p.generator_paths,
            generator_step=p.generator_step, levels=p.levels, sample_size=p.sample_size,
            audit_samples=p.audit_samples, observables=tuple(p.observables),
        )


def parse_run_config(text: Union[str, Dict[str, Dict[str, str]]]) -> RunConfig:
    """INI text (or a section dict) to a validated RunConfig; any parse problem raises parse-error."""
    if isinstance(text, dict):
        sections = {name: dict(values) for name, values in text.items()}
    else:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ValidationError("parse-error", f"unreadable config: {e}")
        sections = {name: dict(parser.items(name)) for name in parser.sections()}

    unknown = sorted(set(sections) - set(SECTIONS))
    if unknown:
        raise ValidationError("parse-error", f"unknown section(s): {', '.join(unknown)}")

    try:
        return RunConfig(**sections)
    except PydanticValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ValidationError("parse-error", f"{where}: {first['msg']}")


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ValidationError("parse-error", f"cannot read {path}: {e}")
    return parse_run_config(text)


def render_run_config(sections: Dict[str, Dict[str, str]]) -> str:
    """Section dict to INI text in the fixed section order."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        if name in sections:
            parser[name] = {key: str(value) for key, value in sections[name].items()}
    lines = []
    for name in parser.sections():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in parser[name].items())
        lines.append("")
    return "\n".join(lines)
