"""Pydantic schemas for machine-readable probe, validation and simulation reports."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class Statistic(BaseModel):
    """A Monte Carlo mean with its 95% half-width."""

    mean: float = Field(..., description="Sample mean")
    half_width: float = Field(..., description="95% confidence half-width")
    count: int = Field(..., description="Number of samples")


class Frequency(BaseModel):
    """An empirical probability with its Wilson interval."""

    value: float = Field(..., description="Empirical frequency")
    lower: float = Field(..., description="Wilson lower bound")
    upper: float = Field(..., description="Wilson upper bound")
    successes: int
    trials: int


class Criterion(BaseModel):
    """One declared tolerance and whether it was met."""

    name: str = Field(..., description="Criterion identifier")
    passed: bool
    detail: str = Field(default="", description="Measured value against the threshold")


class MassEntry(BaseModel):
    """Per-mass statistics of one probe."""

    mass: float = Field(..., ge=0, description="Mass parameter m")
    statistics: Dict[str, Statistic] = Field(default_factory=dict)
    frequencies: Dict[str, Frequency] = Field(default_factory=dict)
    fitted: Dict[str, float] = Field(default_factory=dict, description="Fitted rates and constants")
    values: Dict[str, Any] = Field(default_factory=dict, description="Other scalar results")


class ProbeReport(BaseModel):
    """Result of one probe run; ``passed`` is true iff every criterion passed."""

    experiment: str = Field(..., description="Probe tag")
    config_hash: str = Field(..., description="Digest of the run configuration")
    per_mass: List[MassEntry] = Field(default_factory=list)
    fitted: Dict[str, float] = Field(default_factory=dict)
    criteria: List[Criterion] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
    wall_time: Optional[float] = Field(None, description="Seconds")

    @property
    def passed(self) -> bool:
        return all(criterion.passed for criterion in self.criteria)

    @property
    def failing(self) -> List[str]:
        return [criterion.name for criterion in self.criteria if not criterion.passed]

    def add_criterion(self, name: str, passed: bool, detail: str = "") -> None:
        self.criteria.append(Criterion(name=name, passed=bool(passed), detail=detail))

    def entry(self, mass: float) -> MassEntry:
        for item in self.per_mass:
            if item.mass == mass:
                return item
        item = MassEntry(mass=mass)
        self.per_mass.append(item)
        return item


class ValidationReport(BaseModel):
    """Outcome of every configuration validator."""

    config_hash: str
    passed: bool
    error_code: Optional[str] = Field(None, description="Machine code of the first failure")
    message: str = ""
    phi: Dict[str, float] = Field(default_factory=dict, description="Derived nonlinearity constants")
    noise: Dict[str, float] = Field(default_factory=dict, description="Derived noise constants")
    basis: Dict[str, Any] = Field(default_factory=dict)


class SimulationSummary(BaseModel):
    """Summary printed after a trajectory run."""

    command: str
    config_hash: str
    mass: float
    steps: int
    records: int
    final: Dict[str, float] = Field(default_factory=dict, description="Final-row functionals")
    stopping_time: Optional[float] = None
    wall_time: float
    output: Optional[str] = None
    error_code: Optional[str] = None
    blowup_step: Optional[int] = None
