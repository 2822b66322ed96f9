"""Closed-form verification/forgery metrics and a quadrature cross-check."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate


class QuadratureError(RuntimeError):
    def __init__(self, achieved: float, target: float):
        super().__init__(f"quadrature reached error estimate {achieved:.3g} > target {target:.3g}")
        self.achieved = achieved
        self.target = target


@dataclass(frozen=True)
class SecurityMetrics:
    f_verif_avg: float
    f_forge_single: float
    epsilon_sound: float
    f_forge_n: float


def f_verif(alpha: float, delta_theta: float, delta_phi: float) -> float:
    """Verification fidelity of a token built from an imbalanced A-M state."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return 0.5 * (1.0 + 2.0 * math.sqrt(alpha * (1.0 - alpha)) * math.cos(delta_theta - delta_phi))


def _check_times(t_s: float, t_m: float) -> None:
    if t_m <= 0:
        raise ValueError("t_m must be > 0")
    if t_s < 0:
        raise ValueError("t_s must be >= 0")


def f_verif_avg(t_s: float, t_m: float, sigma_theta: float, delta_phi: float) -> float:
    """Fidelity averaged over alpha ~ U[0,1] and Delta-theta ~ N(0, sigma^2),
    damped by memory decoherence exp(-t_s/t_m)."""
    _check_times(t_s, t_m)
    return 0.5 * (
        1.0
        + (math.pi / 4.0)
        * math.exp(-t_s / t_m)
        * math.exp(-sigma_theta**2 / 2.0)
        * math.cos(delta_phi)
    )


def f_verif_fixed_alpha(alpha: float, t_s: float, t_m: float, sigma_theta: float, delta_phi: float) -> float:
    """Same average with alpha held fixed instead of uniform."""
    _check_times(t_s, t_m)
    c = 2.0 * math.sqrt(alpha * (1.0 - alpha))
    return 0.5 * (1.0 + c * math.exp(-t_s / t_m) * math.exp(-sigma_theta**2 / 2.0) * math.cos(delta_phi))


def f_verif_avg_numeric(
    t_s: float, t_m: float, sigma_theta: float, delta_phi: float, tol: float = 1e-9
) -> float:
    """Adaptive double integral of the damped fidelity over alpha and Delta-theta.

    The storage damping multiplies only the interference term, which is what a
    phase-flip memory channel does to the token's coherence.
    """
    _check_times(t_s, t_m)
    with warnings.catch_warnings():
        # convergence is judged below from quad's own error estimate
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _damped_average(t_s / t_m, sigma_theta, delta_phi, tol)


def _damped_average(x: float, sigma_theta: float, delta_phi: float, tol: float) -> float:
    damping = math.exp(-x)

    def damped(alpha: float, dtheta: float) -> float:
        return 0.5 + damping * (f_verif(alpha, dtheta, delta_phi) - 0.5)

    if sigma_theta == 0:
        val, err = integrate.quad(lambda a: damped(a, 0.0), 0.0, 1.0, epsabs=tol / 10, epsrel=0, limit=200)
    else:
        width = 12.0 * sigma_theta
        norm = 1.0 / (sigma_theta * math.sqrt(2 * math.pi))

        def inner(alpha: float) -> float:
            v, e = integrate.quad(
                lambda t: norm * math.exp(-0.5 * (t / sigma_theta) ** 2) * damped(alpha, t),
                -width,
                width,
                epsabs=tol / 100,
                epsrel=0,
                limit=200,
            )
            if e > tol:
                raise QuadratureError(e, tol)
            return v

        val, err = integrate.quad(inner, 0.0, 1.0, epsabs=tol / 10, epsrel=0, limit=200)
    if err > tol:
        raise QuadratureError(err, tol)
    return float(val)


def soundness(f_verif_avg: float, f_forge: float) -> float:
    """Completeness-forgery gap <F_verif> - F_forge."""
    return f_verif_avg - f_forge


def forge_bound(f_verif_avg: float, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return f_verif_avg**n


def security_metrics(f_avg: float, n: int = 1, f_forge_single: float = 0.5) -> SecurityMetrics:
    return SecurityMetrics(
        f_verif_avg=f_avg,
        f_forge_single=f_forge_single,
        epsilon_sound=soundness(f_avg, f_forge_single),
        f_forge_n=forge_bound(f_avg, n),
    )


def with_bsm_fidelity(p_accept: float, f_bsm: float) -> float:
    """Mixture with a scrambled-readout BSM: ideal with probability f_bsm, a coin flip otherwise."""
    return f_bsm * p_accept + (1.0 - f_bsm) * 0.5


def storage_curve(x: np.ndarray, sigma_theta: float = 0.0, delta_phi: float = 0.0) -> np.ndarray:
    """Verification probability against storage time in units of the memory lifetime."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + (np.pi / 4.0) * np.exp(-x) * np.exp(-sigma_theta**2 / 2.0) * np.cos(delta_phi))
