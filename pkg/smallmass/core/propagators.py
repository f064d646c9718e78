"""Per-mode exact linear transitions for the wave (m > 0) and heat (m = 0) systems."""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from smallmass.config import settings
from smallmass.core.noise_model import QSpec
from smallmass.core.spectral_domain import Basis
from smallmass.utils.validators import ValidationError, validate_mass

logger = logging.getLogger(__name__)

# below this discriminant the eigenvalues are close (or complex) and the cosh/sinhc form is used
_SPLIT_DISCRIMINANT = 0.25


@dataclass(frozen=True, eq=False)
class PropagatorTable:
    """Transition of one step of length h, per mode (last axis).

    ``transition[i, j]`` is exp(M h) (heat: only the (0, 0) entry is used), ``gains`` the
    response of (u, v) to a unit force frozen over the step, ``sigma`` the covariance of
    the stochastic convolution, ``brownian_gain`` its regression on the Brownian increment
    and ``residual_factor`` a square root of the conditional covariance.
    """
    mass: float
    step: float
    eigenvalues: np.ndarray
    noise: np.ndarray
    transition: np.ndarray
    gains: np.ndarray
    sigma: np.ndarray
    brownian_gain: np.ndarray
    residual_factor: np.ndarray
    kick: Tuple[float, float]

    @property
    def is_heat(self) -> bool:
        return self.mass == 0

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)

    def apply_linear(self, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        e = self.transition
        if self.is_heat:
            return e[0, 0] * u, np.zeros_like(u)
        return e[0, 0] * u + e[0, 1] * v, e[1, 0] * u + e[1, 1] * v

    def noise_terms(self, normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(xi_u, xi_v) from standard normals of shape (..., 3, N)."""
        z0, z1, z2 = normals[..., 0, :], normals[..., 1, :], normals[..., 2, :]
        root_h = np.sqrt(self.step)
        a, r = self.brownian_gain, self.residual_factor
        xi_u = a[0] * root_h * z0 + r[0, 0] * z1 + r[0, 1] * z2
        xi_v = a[1] * root_h * z0 + r[1, 0] * z1 + r[1, 1] * z2
        return xi_u, xi_v

    def increment_terms(self, increments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Noise driven by Brownian increments alone (exponential Euler for pathwise studies)."""
        a = self.brownian_gain
        return a[0] * increments, a[1] * increments


def _phi1(mu: np.ndarray, h: float) -> np.ndarray:
    """(e^{mu h} - 1) / mu, equal to h at mu = 0."""
    safe = np.where(mu == 0, 1.0, mu)
    return np.where(mu == 0, h, np.expm1(mu * h) / safe)


def _overdamped(alpha: np.ndarray, m: float, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct real eigenvalues mu+ = -2 alpha / (1 + s), mu- = -(1 + s) / (2m), s = sqrt(1 - 4 m alpha)."""
    s = np.sqrt(1.0 - 4.0 * m * alpha)
    mu_plus = -2.0 * alpha / (1.0 + s)
    mu_minus = -(1.0 + s) / (2.0 * m)
    e_plus, e_minus = np.exp(mu_plus * h), np.exp(mu_minus * h)

    # m mu- = -(1 + s)/2 and m mu+ = -2 m alpha / (1 + s)
    transition = np.empty((2, 2) + alpha.shape)
    transition[0, 0] = (e_plus * (1.0 + s) / 2.0 - e_minus * 2.0 * m * alpha / (1.0 + s)) / s
    transition[0, 1] = m * (e_plus - e_minus) / s
    transition[1, 0] = -alpha * (e_plus - e_minus) / s
    transition[1, 1] = (e_minus * (1.0 + s) / 2.0 - e_plus * 2.0 * m * alpha / (1.0 + s)) / s

    gains = np.empty((2,) + alpha.shape)
    gains[0] = (_phi1(mu_plus, h) - _phi1(mu_minus, h)) / s
    gains[1] = (e_plus - e_minus) / s
    return transition, gains


def _oscillatory(alpha: np.ndarray, m: float, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """exp(M h) = e^{ch} [C I + S (M - c I)] with c = -1/(2m), C = cosh(omega h), S = sinh(omega h)/omega."""
    c = -1.0 / (2.0 * m)
    omega_sq = (1.0 - 4.0 * m * alpha) / (4.0 * m * m)
    decay = np.exp(c * h)

    omega = np.sqrt(np.abs(omega_sq))
    x = omega * h
    small = x < 1e-4
    real = (omega_sq > 0) & ~small
    imag = (omega_sq < 0) & ~small

    # damped products e^{ch} C and e^{ch} S
    damped_c = np.empty_like(alpha)
    damped_s = np.empty_like(alpha)

    series_c = 1.0 + omega_sq * h * h / 2.0 + (omega_sq * h * h) ** 2 / 24.0
    series_s = h * (1.0 + omega_sq * h * h / 6.0 + (omega_sq * h * h) ** 2 / 120.0)
    damped_c[small] = decay * series_c[small]
    damped_s[small] = decay * series_s[small]

    w = omega[real]
    damped_c[real] = 0.5 * (np.exp((c + w) * h) + np.exp((c - w) * h))
    damped_s[real] = decay * np.sinh(w * h) / w

    w = omega[imag]
    damped_c[imag] = decay * np.cos(w * h)
    damped_s[imag] = decay * np.sin(w * h) / w

    transition = np.empty((2, 2) + alpha.shape)
    transition[0, 0] = damped_c + damped_s / (2.0 * m)
    transition[0, 1] = damped_s
    transition[1, 0] = -damped_s * alpha / m
    transition[1, 1] = damped_c - damped_s / (2.0 * m)

    gains = np.empty((2,) + alpha.shape)
    # G = M^{-1}(E - I); the u-gain G_01 / m = (1 - E_11 - E_01 / m) / alpha, the v-gain E_01 / m
    gains[0] = (1.0 - transition[1, 1] - transition[0, 1] / m) / alpha
    gains[1] = transition[0, 1] / m

    # short steps: Taylor series of h phi_1(M h)
    norm = h * np.maximum(1.0 / m + alpha / m, 1.0)
    taylor = norm < 0.5
    if np.any(taylor):
        gains[:, taylor] = _taylor_gains(alpha[taylor], m, h)
    return transition, gains


def _taylor_gains(alpha: np.ndarray, m: float, h: float, terms: int = 30) -> np.ndarray:
    """Second column of h phi_1(M h) divided by m."""
    n = alpha.size
    z = np.zeros((n, 2, 2))
    z[:, 0, 1] = h
    z[:, 1, 0] = -alpha * h / m
    z[:, 1, 1] = -h / m

    power = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    total = np.zeros((n, 2, 2))
    factorial = 1.0
    for k in range(terms):
        factorial *= (k + 1)
        total += power / factorial
        power = power @ z
    return (h * total[:, :, 1] / m).T


def _lyapunov_covariance(alpha: np.ndarray, q: np.ndarray, m: float, h: float) -> np.ndarray:
    """Integrate Sigma' = M Sigma + Sigma M^T + b b^T, Sigma(0) = 0, over one step for all forced modes."""
    n = alpha.size
    sigma = np.zeros((2, 2, n))
    forced = np.nonzero(q > 0)[0]
    if forced.size == 0:
        return sigma

    a, qq = alpha[forced], q[forced] ** 2
    blocks = [
        sparse.csr_matrix([[0.0, 2.0, 0.0],
                           [-ak / m, -1.0 / m, 1.0],
                           [0.0, -2.0 * ak / m, -2.0 / m]])
        for ak in a
    ]
    jacobian = sparse.block_diag(blocks, format="csr")
    source = np.zeros(3 * forced.size)
    source[2::3] = qq / (m * m)

    # absolute tolerances follow the natural scale of each entry
    with np.errstate(divide="ignore"):
        uu_scale = qq * np.minimum(np.minimum(h ** 3 / (3.0 * m * m), h), np.where(a > 0, 1.0 / (2.0 * a), np.inf))
    vv_scale = qq * np.minimum(h / (m * m), 1.0 / (2.0 * m))
    scale = np.empty(3 * forced.size)
    scale[0::3] = uu_scale
    scale[1::3] = np.sqrt(uu_scale * vv_scale)
    scale[2::3] = vv_scale
    atol = np.maximum(scale * settings.LYAPUNOV_RTOL, 1e-300)

    solution = solve_ivp(
        lambda t, y: jacobian @ y + source,
        (0.0, h),
        np.zeros(3 * forced.size),
        method="Radau",
        jac=jacobian,
        rtol=settings.LYAPUNOV_RTOL,
        atol=atol,
    )
    if not solution.success:
        raise RuntimeError(f"Lyapunov integration failed: {solution.message}")

    y = solution.y[:, -1]
    sigma[0, 0, forced] = y[0::3]
    sigma[0, 1, forced] = sigma[1, 0, forced] = y[1::3]
    sigma[1, 1, forced] = y[2::3]
    return sigma


def _residual_factor(residual: np.ndarray) -> np.ndarray:
    """Square root L (L L^T = R) of per-mode 2x2 PSD matrices, eigenvalues clipped at 0."""
    stacked = np.moveaxis(residual, -1, 0)
    stacked = 0.5 * (stacked + np.swapaxes(stacked, -1, -2))
    values, vectors = np.linalg.eigh(stacked)
    factor = vectors * np.sqrt(np.clip(values, 0.0, None))[:, None, :]
    return np.moveaxis(factor, 0, -1)


def wave_tables(alpha: np.ndarray, q: np.ndarray, m: float, h: float):
    """Transition, gains and covariance of the damped oscillator modes."""
    discriminant = 1.0 - 4.0 * m * alpha
    transition = np.empty((2, 2) + alpha.shape)
    gains = np.empty((2,) + alpha.shape)

    over = discriminant >= _SPLIT_DISCRIMINANT
    if np.any(over):
        t, g = _overdamped(alpha[over], m, h)
        transition[:, :, over], gains[:, over] = t, g
    if np.any(~over):
        t, g = _oscillatory(alpha[~over], m, h)
        transition[:, :, ~over], gains[:, ~over] = t, g

    sigma = _lyapunov_covariance(alpha, q, m, h)
    return transition, gains, sigma


def heat_tables(alpha: np.ndarray, q: np.ndarray, h: float):
    """Scalar Ornstein-Uhlenbeck transition embedded in the (u, v) layout."""
    transition = np.zeros((2, 2) + alpha.shape)
    transition[0, 0] = np.exp(-alpha * h)

    gains = np.zeros((2,) + alpha.shape)
    gains[0] = _phi1(-alpha, h)

    sigma = np.zeros((2, 2) + alpha.shape)
    sigma[0, 0] = q * q * _phi1(-2.0 * alpha, h)
    return transition, gains, sigma


def _build(alpha: np.ndarray, q: np.ndarray, m: float, h: float) -> PropagatorTable:
    if m == 0:
        transition, gains, sigma = heat_tables(alpha, q, h)
        kick = (1.0, 0.0)
    else:
        transition, gains, sigma = wave_tables(alpha, q, m, h)
        kick = (0.0, 1.0 / m)

    # Cov(xi, B_h) = q * gains, so xi = (q gains / h) B_h + residual
    brownian_gain = q * gains / h
    residual = sigma - h * brownian_gain[:, None, :] * brownian_gain[None, :, :]
    residual_factor = _residual_factor(residual)

    for array in (transition, gains, sigma):
        array.setflags(write=False)

    return PropagatorTable(
        mass=m, step=h, eigenvalues=alpha, noise=q, transition=transition, gains=gains,
        sigma=sigma, brownian_gain=brownian_gain, residual_factor=residual_factor, kick=kick,
    )


@lru_cache(maxsize=64)
def _cached(eigen_key: bytes, noise_key: bytes, m: float, h: float) -> PropagatorTable:
    alpha = np.frombuffer(eigen_key, dtype=float).copy()
    q = np.frombuffer(noise_key, dtype=float).copy()
    logger.debug(f"Building propagators for m={m:g}, h={h:g}, {alpha.size} modes")
    return _build(alpha, q, m, h)


def build_propagators(basis: Basis, q: QSpec, m: float, h: float,
                      eigenvalues: Optional[np.ndarray] = None) -> PropagatorTable:
    """Exact one-step linear transition; ``eigenvalues`` overrides A (zeros give the Langevin system)."""
    if not np.isfinite(h) or h <= 0:
        raise ValidationError("nonpositive-step", f"step must be positive, got {h}")
    validate_mass(m)

    alpha = np.asarray(basis.eigenvalues if eigenvalues is None else eigenvalues, dtype=float)
    noise = np.asarray(q.values(basis), dtype=float)
    if m == 0 and np.any(alpha <= 0):
        raise ValidationError("out-of-range", "the heat system needs positive eigenvalues")

    return _cached(alpha.tobytes(), noise.tobytes(), float(m), float(h))


def stationary_covariance(alpha: np.ndarray, q: np.ndarray, m: float) -> np.ndarray:
    """Sigma_inf = diag(q^2 / (2 alpha), q^2 / (2 m)) of the linear wave modes."""
    sigma = np.zeros((2, 2) + np.shape(alpha))
    sigma[0, 0] = q * q / (2.0 * alpha)
    sigma[1, 1] = q * q / (2.0 * m)
    return sigma


def langevin_velocity_variance(q: np.ndarray, m: float, t: float) -> np.ndarray:
    """E |v_k(t)|^2 = q^2 (1 - e^{-2t/m}) / (2m) for m dv = -v dt + q dW from rest."""
    return -q * q * np.expm1(-2.0 * t / m) / (2.0 * m)
