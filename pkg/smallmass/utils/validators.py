"""Input validation utilities for simulation parameters."""

import math
from typing import Any, List, Optional, Sequence, Union


class ValidationError(Exception):
    """Custom exception for validation errors.

    ``code`` is the machine-readable failure tag reported by the CLI.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message or code
        super().__init__(f"{code}: {self.message}")


def validate_positive(value: Any, name: str, code: str = "out-of-range") -> float:
    """Validate a strictly positive finite real."""
    try:
        float_value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(code, f"{name} must be a number, got {value!r}")

    if not math.isfinite(float_value) or float_value <= 0:
        raise ValidationError(code, f"{name} must be positive and finite, got {value!r}")

    return float_value


def validate_nonnegative(value: Any, name: str, code: str = "out-of-range") -> float:
    """Validate a nonnegative finite real."""
    try:
        float_value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(code, f"{name} must be a number, got {value!r}")

    if not math.isfinite(float_value) or float_value < 0:
        raise ValidationError(code, f"{name} must be nonnegative and finite, got {value!r}")

    return float_value


def validate_count(value: Any, name: str, minimum: int = 1, code: str = "out-of-range") -> int:
    """Validate an integer count bounded below."""
    if isinstance(value, bool):
        raise ValidationError(code, f"{name} must be an integer")
    try:
        int_value = int(value)
    except (TypeError, ValueError):
        raise ValidationError(code, f"{name} must be an integer, got {value!r}")

    if int_value != value and not (isinstance(value, float) and value.is_integer()):
        raise ValidationError(code, f"{name} must be an integer, got {value!r}")

    if int_value < minimum:
        raise ValidationError(code, f"{name} must be at least {minimum}, got {int_value}")

    return int_value


def validate_axis_values(values: Union[float, Sequence[float]], dimension: int,
                         name: str) -> List[float]:
    """Broadcast a scalar or check a per-axis list against the dimension."""
    if isinstance(values, (int, float)):
        return [float(values)] * dimension

    values = list(values)
    if len(values) == 1:
        return [float(values[0])] * dimension

    if len(values) != dimension:
        raise ValidationError(
            "invalid-domain", f"{name} needs {dimension} entries, got {len(values)}"
        )

    return [float(v) for v in values]


def validate_domain(dimension: int, lengths: Sequence[float], modes: Sequence[int]) -> None:
    """Validate box edge lengths and per-axis mode counts."""
    if dimension not in (1, 2, 3):
        raise ValidationError("invalid-domain", f"dimension must be 1, 2 or 3, got {dimension}")

    if len(lengths) != dimension or len(modes) != dimension:
        raise ValidationError("invalid-domain", "lengths and modes must match the dimension")

    for i, length in enumerate(lengths):
        if not math.isfinite(length) or length <= 0:
            raise ValidationError("invalid-domain", f"edge length L_{i + 1} must be positive, got {length}")

    for i, n in enumerate(modes):
        if int(n) != n or n < 1:
            raise ValidationError("invalid-domain", f"mode count n_{i + 1} must be a positive integer, got {n}")


def validate_step(h: float, horizon: Optional[float] = None) -> float:
    """Validate the integrator step against the horizon."""
    if not math.isfinite(h) or h <= 0:
        raise ValidationError("nonpositive-step", f"step must be positive, got {h}")

    if horizon is not None:
        if not math.isfinite(horizon) or horizon < 0:
            raise ValidationError("out-of-range", f"horizon must be nonnegative, got {horizon}")
        if horizon > 0 and h > horizon:
            raise ValidationError("out-of-range", f"step {h} exceeds horizon {horizon}")

    return h


def validate_mass(m: float, allow_zero: bool = True) -> float:
    """Validate the particle mass parameter."""
    if not math.isfinite(m) or m < 0:
        raise ValidationError("out-of-range", f"mass must be nonnegative, got {m}")

    if m == 0 and not allow_zero:
        raise ValidationError("zero-mass", "this system needs a positive mass")

    return m


def validate_mass_sweep(masses: Sequence[float], minimum: int = 2) -> List[float]:
    """Validate the mass list of a sweep probe."""
    cleaned = [validate_mass(float(m)) for m in masses]

    if len(cleaned) < minimum:
        raise ValidationError("needs-sweep", f"probe needs at least {minimum} masses, got {len(cleaned)}")

    return cleaned


def validate_equal_sizes(n_a: int, n_b: int, limit: int) -> int:
    """Validate equal-size empirical measures within the assignment limit."""
    if n_a != n_b:
        raise ValidationError("size-mismatch", f"measures have {n_a} and {n_b} samples")

    if n_a == 0:
        raise ValidationError("size-mismatch", "measures must be nonempty")

    if n_a > limit:
        raise ValidationError("size-exceeded", f"{n_a} samples exceed the assignment limit {limit}")

    return n_a
