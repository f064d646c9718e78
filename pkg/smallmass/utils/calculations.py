"""Statistics used by the ensemble probes."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from smallmass.config import settings


@dataclass
class MeanEstimate:
    """Sample mean with its 95% confidence half-width."""
    mean: float
    half_width: float
    count: int

    @property
    def lower(self) -> float:
        return self.mean - self.half_width

    @property
    def upper(self) -> float:
        return self.mean + self.half_width


@dataclass
class ExponentialFit:
    """Fitted template C e^{-ct} + B."""
    amplitude: float
    rate: float
    offset: float
    residual: float


def calculate_mean_estimate(values: Sequence[float], axis: int = 0) -> MeanEstimate:
    """Mean and normal-approximation half-width of a sample."""
    data = np.asarray(values, dtype=float)
    n = data.shape[axis] if data.ndim else 1

    if n == 0:
        return MeanEstimate(mean=float("nan"), half_width=float("inf"), count=0)

    mean = float(np.mean(data))
    if n < 2:
        return MeanEstimate(mean=mean, half_width=float("inf"), count=n)

    sd = float(np.std(data, ddof=1))
    return MeanEstimate(mean=mean, half_width=settings.CONFIDENCE_Z * sd / math.sqrt(n), count=n)


def calculate_mean_series(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Column means and half-widths of a (paths, times) array."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)

    if n < 2:
        return mean, np.full_like(mean, np.inf)

    sd = samples.std(axis=0, ddof=1)
    return mean, settings.CONFIDENCE_Z * sd / math.sqrt(n)


def calculate_wilson_interval(successes: int, trials: int) -> Tuple[float, float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 0.0, 1.0

    z = settings.CONFIDENCE_Z
    p = successes / trials
    denominator = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denominator
    spread = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denominator

    return p, max(0.0, center - spread), min(1.0, center + spread)


def calculate_log_linear_rate(times: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Decay rate and log-amplitude from a least-squares fit of log values.

    Nonpositive values are dropped; returns (nan, nan) when fewer than two remain.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = np.isfinite(y) & (y > 0)

    if keep.sum() < 2:
        return float("nan"), float("nan")

    result = stats.linregress(t[keep], np.log(y[keep]))
    return float(-result.slope), float(result.intercept)


def calculate_exponential_fit(times: Sequence[float], values: Sequence[float],
                              with_offset: bool = True) -> ExponentialFit:
    """Fit C e^{-ct} + B (or C e^{-ct} when with_offset is False)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)

    if with_offset:
        offset_guess = float(y[-1])
        rate_guess, _ = calculate_log_linear_rate(t, np.abs(y - offset_guess) + 1e-300)
        if not math.isfinite(rate_guess) or rate_guess <= 0:
            rate_guess = 1.0 / max(t[-1] - t[0], 1e-12)
        p0 = [float(y[0] - offset_guess), rate_guess, offset_guess]

        def template(x, amplitude, rate, offset):
            return amplitude * np.exp(-rate * (x - t[0])) + offset
    else:
        rate_guess, log_amplitude = calculate_log_linear_rate(t - t[0], y)
        if not math.isfinite(rate_guess):
            return ExponentialFit(amplitude=0.0, rate=float("nan"), offset=0.0, residual=float("inf"))
        p0 = [math.exp(log_amplitude), rate_guess]

        def template(x, amplitude, rate):
            return amplitude * np.exp(-rate * (x - t[0]))

    try:
        params, _ = optimize.curve_fit(template, t, y, p0=p0, maxfev=20000)
    except (RuntimeError, ValueError):
        params = np.asarray(p0)

    residual = float(np.sqrt(np.mean((template(t, *params) - y) ** 2)))
    offset = float(params[2]) if with_offset else 0.0
    return ExponentialFit(amplitude=float(params[0]), rate=float(params[1]),
                          offset=offset, residual=residual)


def calculate_autocorrelation(series: Sequence[float], lag: int = 1) -> float:
    """Sample autocorrelation at one lag."""
    x = np.asarray(series, dtype=float)
    if x.size <= lag + 1:
        return float("nan")

    x = x - x.mean()
    denominator = float(np.dot(x, x))
    if denominator == 0:
        return 0.0

    return float(np.dot(x[:-lag], x[lag:]) / denominator)


def calculate_relative_spread(values: Sequence[float]) -> float:
    """(max - min) / max over positive values; inf when any value is nonpositive."""
    data = np.asarray(values, dtype=float)
    if data.size == 0 or np.any(~np.isfinite(data)) or np.any(data <= 0):
        return float("inf")

    return float((data.max() - data.min()) / data.max())


def check_monotone_decreasing(means: Sequence[float], half_widths: Sequence[float],
                              allowed_inversions: int = 1) -> Tuple[bool, int]:
    """Trend audit along a sequence ordered by decreasing mass.

    An increase between neighbours counts as an inversion; at most ``allowed_inversions``
    are tolerated, and only when the two confidence intervals overlap.
    """
    means = list(means)
    half_widths = list(half_widths)
    inversions = 0

    for i in range(1, len(means)):
        if means[i] < means[i - 1]:
            continue
        inversions += 1
        overlap = means[i] - half_widths[i] <= means[i - 1] + half_widths[i - 1]
        if not overlap:
            return False, inversions

    return inversions <= allowed_inversions, inversions


def estimate_slope(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log ys against log xs."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return None

    return float(stats.linregress(np.log(x[keep]), np.log(y[keep])).slope)
