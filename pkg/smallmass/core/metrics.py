"""Path metric, distance-like functions and exact Wasserstein distances between empirical measures."""

import logging
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from smallmass.config import settings
from smallmass.core.functionals import random_states
from smallmass.core.nonlinearity import PhiSpec, lp_norm_power, validate
from smallmass.core.spectral_domain import Basis, PhaseState
from smallmass.utils.validators import ValidationError, validate_equal_sizes

logger = logging.getLogger(__name__)

GROUNDS = ("rho", "d", "dtilde_m", "dtilde_0", "H")

# below this exponent the path integral is summed as 1 + sum w expm1(.) so that it stays >= 1
_DIRECT_EXPONENT = 50.0


class MetricOverflowError(ValidationError):
    """exp(beta V) beyond the log-space cap where a finite value is required."""

    def __init__(self, message: str):
        super().__init__("overflow", message)


@dataclass(frozen=True)
class MetricParams:
    """Scale N, weight beta, mass m and Gauss-Legendre node count of the path integral."""
    N: float
    beta: float
    mass: float = 0.0
    nodes: int = settings.QUADRATURE_NODES
    phi: Optional[PhiSpec] = None

    def __post_init__(self):
        if not self.N > 0:
            raise ValidationError("out-of-range", f"N must be positive, got {self.N}")
        if not self.beta >= 0:
            raise ValidationError("out-of-range", f"beta must be nonnegative, got {self.beta}")
        if self.mass < 0:
            raise ValidationError("out-of-range", f"mass must be nonnegative, got {self.mass}")
        if int(self.nodes) < 2:
            raise ValidationError("out-of-range", f"quadrature needs at least 2 nodes, got {self.nodes}")

    @property
    def growth(self) -> float:
        if self.phi is None or self.phi.is_zero:
            return 1.0
        return validate(self.phi).growth

    def with_beta(self, beta: float) -> "MetricParams":
        return MetricParams(N=self.N, beta=beta, mass=self.mass, nodes=self.nodes, phi=self.phi)


@dataclass
class EmpiricalMeasure:
    """Uniform-weight samples; ``v`` is None for u-marginals."""
    basis: Basis
    u: np.ndarray
    v: Optional[np.ndarray] = None
    kind: str = "phase"

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if self.u.shape[0] == 0:
            raise ValidationError("size-mismatch", "empirical measure needs at least one sample")
        if self.u.shape[1] != self.basis.size:
            raise ValidationError("size-mismatch", "samples do not match the basis")
        if self.v is not None:
            self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
            if self.v.shape != self.u.shape:
                raise ValidationError("size-mismatch", "u and v samples differ in shape")
        if self.v is None:
            self.kind = "marginal"

    def __len__(self) -> int:
        return int(self.u.shape[0])

    def velocities(self) -> np.ndarray:
        return np.zeros_like(self.u) if self.v is None else self.v

    def marginal(self) -> "EmpiricalMeasure":
        return EmpiricalMeasure(basis=self.basis, u=self.u, v=None)


# ----------------------------------------------------------------------
# Pointwise pieces (rows of paired arrays)
# ----------------------------------------------------------------------

def lyapunov_weight(basis: Basis, params: MetricParams, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """V_m of paired rows."""
    m = params.mass
    total = basis.norm_squared(u)
    if m > 0:
        total = total + m * basis.norm_squared(u, 1) + m * m * basis.norm_squared(v)
        total = total + m * lp_norm_power(basis, u, params.growth + 1.0)
    return total


def _speed(basis: Basis, m: float, du: np.ndarray, dv: np.ndarray) -> np.ndarray:
    squared = basis.norm_squared(du)
    if m > 0:
        squared = squared + m * basis.norm_squared(du, 1) + m * m * basis.norm_squared(dv)
    return np.sqrt(squared)


def log_rho_rows(basis: Basis, params: MetricParams, u1, v1, u2, v2) -> np.ndarray:
    """log of the straight-path estimate of rho for paired rows (-inf where the states agree)."""
    u1, v1, u2, v2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (u1, v1, u2, v2))
    du, dv = u1 - u2, v1 - v2
    speed = _speed(basis, params.mass, du, dv)

    with np.errstate(divide="ignore"):
        log_speed = np.log(speed)
    if params.beta == 0:
        return log_speed

    nodes, weights = np.polynomial.legendre.leggauss(int(params.nodes))
    s = 0.5 * (nodes + 1.0)
    w = 0.5 * weights

    # gamma(s) = s U + (1 - s) U~, evaluated at all nodes at once: (rows, nodes, N)
    path_u = u2[:, None, :] + s[None, :, None] * du[:, None, :]
    path_v = v2[:, None, :] + s[None, :, None] * dv[:, None, :]
    exponent = params.beta * lyapunov_weight(basis, params, path_u, path_v)

    log_integral = np.empty(u1.shape[0])
    direct = np.max(exponent, axis=1) < _DIRECT_EXPONENT
    if np.any(direct):
        log_integral[direct] = np.log1p(np.sum(w * np.expm1(exponent[direct]), axis=1))
    if np.any(~direct):
        log_integral[~direct] = logsumexp(exponent[~direct] + np.log(w), axis=1)
    return log_speed + log_integral


def _from_log(log_value: np.ndarray, what: str) -> np.ndarray:
    over = log_value > settings.LOG_OVERFLOW_CAP
    if np.any(over):
        logger.warning(f"{what}: {int(np.sum(over))} values exceed exp({settings.LOG_OVERFLOW_CAP:g}); flagged as inf")
    with np.errstate(over="ignore"):
        return np.where(over, np.inf, np.exp(np.minimum(log_value, settings.LOG_OVERFLOW_CAP)))


def _state_arrays(state: PhaseState) -> Tuple[np.ndarray, np.ndarray]:
    return state.u.coeffs, state.velocity()


def rho_beta(U: PhaseState, U_tilde: PhaseState, params: MetricParams) -> float:
    """Straight-path upper estimate of the weighted path metric."""
    u1, v1 = _state_arrays(U)
    u2, v2 = _state_arrays(U_tilde)
    return float(_from_log(log_rho_rows(U.basis, params, u1, v1, u2, v2), "rho_beta")[0])


def d_N_beta(U: PhaseState, U_tilde: PhaseState, params: MetricParams) -> float:
    return float(min(params.N * rho_beta(U, U_tilde, params), 1.0))


def _bracket_log(a: np.ndarray, b: np.ndarray, beta: float) -> np.ndarray:
    """log(1 + e^{beta a} + e^{beta b})."""
    stacked = np.stack(np.broadcast_arrays(np.zeros_like(a + b), beta * a, beta * b), axis=0)
    return logsumexp(stacked, axis=0)


def dtilde_m_rows(basis: Basis, params: MetricParams, u1, v1, u2, v2) -> np.ndarray:
    log_rho = log_rho_rows(basis, params, u1, v1, u2, v2)
    d = np.minimum(params.N * _from_log(log_rho, "rho_beta"), 1.0)
    weight_1 = lyapunov_weight(basis, params, np.atleast_2d(u1), np.atleast_2d(v1))
    weight_2 = lyapunov_weight(basis, params, np.atleast_2d(u2), np.atleast_2d(v2))
    bracket = _from_log(_bracket_log(weight_1, weight_2, params.beta), "dtilde_m")
    with np.errstate(invalid="ignore"):
        return np.where(d == 0, 0.0, np.sqrt(d * bracket))


def dtilde_m(U: PhaseState, U_tilde: PhaseState, params: MetricParams) -> float:
    """sqrt(d_N_beta (1 + e^{beta V_m(U)} + e^{beta V_m(U~)}))."""
    u1, v1 = _state_arrays(U)
    u2, v2 = _state_arrays(U_tilde)
    return float(dtilde_m_rows(U.basis, params, u1, v1, u2, v2)[0])


def dtilde_0_rows(basis: Basis, params: MetricParams, u1, u2) -> np.ndarray:
    u1, u2 = np.atleast_2d(u1), np.atleast_2d(u2)
    d = np.minimum(params.N * basis.norm(u1 - u2), 1.0)
    bracket = _from_log(
        _bracket_log(basis.norm_squared(u1), basis.norm_squared(u2), params.beta), "dtilde_0"
    )
    with np.errstate(invalid="ignore"):
        return np.where(d == 0, 0.0, np.sqrt(d * bracket))


def dtilde_0(u, u_tilde, params: MetricParams) -> float:
    """sqrt((N |u - u~|_H ^ 1)(1 + e^{beta |u|^2} + e^{beta |u~|^2})) on u-fields or states."""
    if isinstance(u, PhaseState):
        u = u.u
    if isinstance(u_tilde, PhaseState):
        u_tilde = u_tilde.u
    return float(dtilde_0_rows(u.basis, params, u.coeffs, u_tilde.coeffs)[0])


# ----------------------------------------------------------------------
# Transport
# ----------------------------------------------------------------------

def pairwise_cost(A: EmpiricalMeasure, B: EmpiricalMeasure, ground: str, params: MetricParams,
                  chunk_rows: int = 64) -> np.ndarray:
    """Ground-cost matrix between two sample sets, assembled in row blocks."""
    if ground not in GROUNDS:
        raise ValidationError("out-of-range", f"unknown ground metric {ground!r}")
    basis = A.basis

    if ground == "H":
        return cdist(A.u, B.u)

    if ground == "dtilde_0":
        distance = cdist(A.u, B.u)
        d = np.minimum(params.N * distance, 1.0)
        bracket_log = _bracket_log(basis.norm_squared(A.u)[:, None], basis.norm_squared(B.u)[None, :], params.beta)
        bracket = _from_log(bracket_log, "dtilde_0")
        with np.errstate(invalid="ignore"):
            return np.where(d == 0, 0.0, np.sqrt(d * bracket))

    va, vb = A.velocities(), B.velocities()
    n_a, n_b = len(A), len(B)
    cost = np.empty((n_a, n_b))
    for start in range(0, n_a, chunk_rows):
        rows = np.arange(start, min(start + chunk_rows, n_a))
        i = np.repeat(rows, n_b)
        j = np.tile(np.arange(n_b), rows.size)
        if ground == "dtilde_m":
            block = dtilde_m_rows(basis, params, A.u[i], va[i], B.u[j], vb[j])
        else:
            rho = _from_log(log_rho_rows(basis, params, A.u[i], va[i], B.u[j], vb[j]), "rho_beta")
            block = rho if ground == "rho" else np.minimum(params.N * rho, 1.0)
        cost[rows] = block.reshape(rows.size, n_b)
    return cost


def wasserstein(A: EmpiricalMeasure, B: EmpiricalMeasure, ground: str, params: MetricParams) -> float:
    """Exact transport cost between equal-size uniform empirical measures (optimal assignment)."""
    validate_equal_sizes(len(A), len(B), settings.MAX_ASSIGNMENT_SIZE)
    cost = pairwise_cost(A, B, ground, params)
    if not np.all(np.isfinite(cost)):
        raise MetricOverflowError(f"{ground} cost matrix has overflowed entries; lower beta")

    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def dual_lower_bound(f: Callable[[np.ndarray], np.ndarray], lipschitz: float,
                     A: EmpiricalMeasure, B: EmpiricalMeasure) -> float:
    """|E_A f - E_B f| / [f]_Lip, a lower bound on the transport cost."""
    if not lipschitz > 0:
        raise ValidationError("zero-Lipschitz-constant", "observable needs a positive Lipschitz constant")
    gap = abs(float(np.mean(f(A.u))) - float(np.mean(f(B.u))))
    return gap / lipschitz


def clipped_norm_observable(basis: Basis, N: float) -> Callable[[np.ndarray], np.ndarray]:
    """u -> min(N |u|_H, 1); 1-Lipschitz for dtilde_0 with the same N."""
    return lambda u: np.minimum(N * basis.norm(u), 1.0)


@dataclass
class TriangleAudit:
    """Fitted constant of the doubled-weight triangle estimate."""
    constant: float
    violations: int
    triples: int
    ratios: np.ndarray


def triangle_audit(params: MetricParams, basis: Basis, triples: int = 100, size: int = 64,
                   seed: int = 0, ground: str = "dtilde_0", spread: float = 1.0) -> TriangleAudit:
    """Smallest C with W_beta(n1, n3) <= C [W_2beta(n1, n2) + W_2beta(n2, n3)] over random triples."""
    rng = np.random.default_rng(seed)
    doubled = params.with_beta(2.0 * params.beta)
    ratios = []
    records = []
    for _ in range(triples):
        measures = []
        for _ in range(3):
            scale = spread * rng.uniform(0.2, 1.0)
            u, v = random_states(basis, size, rng, scale=scale)
            measures.append(EmpiricalMeasure(basis=basis, u=u, v=v if ground in ("rho", "d", "dtilde_m") else None))
        lhs = wasserstein(measures[0], measures[2], ground, params)
        rhs = wasserstein(measures[0], measures[1], ground, doubled) + wasserstein(measures[1], measures[2], ground, doubled)
        records.append((lhs, rhs))
        if rhs > 0:
            ratios.append(lhs / rhs)
        elif lhs > 0:
            ratios.append(np.inf)

    constant = float(max(ratios)) if ratios else 0.0
    violations = sum(1 for lhs, rhs in records if lhs > constant * rhs * (1.0 + 1e-12) + 1e-15)
    return TriangleAudit(constant=constant, violations=violations, triples=triples, ratios=np.asarray(ratios))


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum average matched cost over all permutations (small n only)."""
    n = cost.shape[0]
    best = math.inf
    for perm in permutations(range(n)):
        best = min(best, float(cost[np.arange(n), list(perm)].mean()))
    return best
