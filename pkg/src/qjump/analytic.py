"""Closed-form cavity dynamics.

These are the exact solutions between (or, in laser mode, regardless of)
photon emissions. They are the fast path for laser-driven trajectories and
the oracles the stochastic engine is tested against. All functions accept
numpy arrays for their time arguments.
"""

import numpy as np

from qjump.core import CavityParams, DriveMode

__all__ = [
    "laser_alpha",
    "laser_schrodinger_alpha",
    "laser_emission_rate",
    "laser_emission_rate_expanded",
    "laser_stationary_alpha",
    "laser_stationary_rate",
    "laser_photon_number_integral",
    "decay_alpha",
    "survival_probability",
    "waiting_time",
    "feedback_jump_map",
    "stability_margin",
    "drift_terms",
    "mean_photon_drift",
    "small_amplitude_drift",
]


def _require_laser(params: CavityParams):
    if params.mode is not DriveMode.LASER_DRIVEN:
        raise ValueError(
            f"laser-driven solution requested for a {params.mode.value} cavity"
        )


def laser_alpha(t, alpha0: complex, params: CavityParams):
    """
    Interaction-picture amplitude of a laser-driven cavity,

    alpha(t) = exp(-kappa t/2) alpha0 - (i Omega/kappa) (1 - exp(-kappa t/2)).

    Emissions leave a coherent state unchanged, so this holds along every
    trajectory, not only under the condition of no emission.

    Parameters
    ----------
    t : float or np.ndarray
        Time(s) since preparation, t >= 0.
    alpha0 : complex
        Amplitude at t = 0.
    params : CavityParams
        Laser-driven cavity parameters.

    Returns
    -------
    complex or np.ndarray
    """
    _require_laser(params)
    decay = np.exp(-0.5 * params.kappa * np.asarray(t, dtype=float))
    return decay * alpha0 + laser_stationary_alpha(params) * (1.0 - decay)


def laser_schrodinger_alpha(t, alpha0: complex, params: CavityParams):
    """The Schrodinger-picture spiral alpha_S(t) = alpha_I(t) exp(-i omega_cav t)."""
    t = np.asarray(t, dtype=float)
    return laser_alpha(t, alpha0, params) * np.exp(-1j * params.omega_cav * t)


def laser_stationary_alpha(params: CavityParams) -> complex:
    """alpha_ss = -i Omega / kappa."""
    return -1j * params.omega / params.kappa


def laser_stationary_rate(params: CavityParams) -> float:
    """I_ss = Omega^2 / kappa."""
    return params.omega**2 / params.kappa


def laser_emission_rate(t, alpha0: complex, params: CavityParams):
    """Photon emission rate I(t) = kappa |alpha(t)|^2 of a laser-driven cavity."""
    return params.kappa * np.abs(laser_alpha(t, alpha0, params)) ** 2


def laser_emission_rate_expanded(t, alpha0: complex, params: CavityParams):
    """
    Three-term expansion of the laser-driven emission rate,

    I(t) = kappa [ e^{-kappa t} |alpha0|^2 + (Omega/kappa)^2 (1 - e^{-kappa t/2})^2
                   - 2 (Omega/kappa) Im(alpha0) e^{-kappa t/2} (1 - e^{-kappa t/2}) ].

    Independent of :py:func:`laser_emission_rate`; each tests the other.
    """
    _require_laser(params)
    alpha0 = complex(alpha0)
    half = np.exp(-0.5 * params.kappa * np.asarray(t, dtype=float))
    w = params.omega / params.kappa
    return params.kappa * (
        half**2 * abs(alpha0) ** 2
        + w**2 * (1.0 - half) ** 2
        - 2.0 * w * alpha0.imag * half * (1.0 - half)
    )


def laser_photon_number_integral(t0, t1, alpha0: complex, params: CavityParams):
    """
    Exact integral of |alpha(t)|^2 over [t0, t1] for a laser-driven cavity.

    Used for time averages along a trajectory and for bin-averaged emission
    rates (divide by t1 - t0 and multiply by kappa).
    """
    _require_laser(params)
    alpha0 = complex(alpha0)
    k = params.kappa
    w = params.omega / k
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)

    def _primitive(t):
        # antiderivative of the three-term expansion
        e1 = np.exp(-k * t)
        e_half = np.exp(-0.5 * k * t)
        int_e1 = -e1 / k
        int_e_half = -2.0 * e_half / k
        return (
            abs(alpha0) ** 2 * int_e1
            + w**2 * (t - 2.0 * int_e_half + int_e1)
            - 2.0 * w * alpha0.imag * (int_e_half - int_e1)
        )

    return _primitive(t1) - _primitive(t0)


def decay_alpha(t, alpha0: complex, kappa: float):
    """
    No-emission evolution of an undriven cavity, alpha(t) = exp(-kappa t/2) alpha0.
    """
    return np.exp(-0.5 * kappa * np.asarray(t, dtype=float)) * alpha0


def survival_probability(alpha, dt, kappa: float):
    """
    Probability of no photon emission during ``dt`` starting from the
    coherent state ``alpha`` (interaction picture),

    P0 = exp[-|alpha|^2 (1 - exp(-kappa dt))].

    Exact for any ``dt`` when the cavity is undriven; for a driven cavity it
    only holds for short intervals.
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("survival_probability needs dt >= 0")
    n = np.abs(alpha) ** 2
    # -expm1 keeps precision for kappa dt << 1
    return np.exp(n * np.expm1(-kappa * dt))


def waiting_time(u: float, alpha: complex, kappa: float):
    """
    Invert the undriven survival function: the time t with P0(t) = u.

    Returns ``None`` when ``u <= exp(-|alpha|^2)``, i.e. when the drawn
    survival level is never crossed and the cavity decays to the vacuum
    without emitting again.
    """
    n = abs(alpha) ** 2
    if n == 0.0:
        return None
    log_u = np.log(u)
    if log_u <= -n:
        return None
    return float(-np.log1p(log_u / n) / kappa)


def feedback_jump_map(alpha: complex, beta: complex) -> complex:
    """Effect of a feedback pulse on the cavity: alpha -> alpha + beta."""
    return alpha + beta


def stability_margin(eta: float, beta: complex) -> float:
    """
    eta |beta|^2 - 1. Positive when the vacuum is a repulsive fixed point of
    the ensemble dynamics, negative when it is attractive near the vacuum.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    return float(eta * abs(beta) ** 2 - 1.0)


def drift_terms(alphas, params: CavityParams):
    """Per-amplitude contributions -kappa^2 [1 - eta (|alpha + beta|^2 - |alpha|^2)] |alpha|^2
    to dI/dt, before weighting."""
    n = np.abs(alphas) ** 2
    gain = np.abs(alphas + params.beta) ** 2 - n
    return -(params.kappa**2) * (1.0 - params.eta * gain) * n


def mean_photon_drift(alphas, weights, params: CavityParams) -> float:
    """
    Weighted estimate of dI/dt for a coherent-state mixture,

    dI/dt = -kappa^2 sum_i w_i [1 - eta (|alpha_i + beta|^2 - |alpha_i|^2)] |alpha_i|^2.

    Parameters
    ----------
    alphas : array_like of complex
        Coherent amplitudes of the mixture.
    weights : array_like of float or None
        Non-negative weights summing to one. ``None`` means equal weights.
    params : CavityParams
        Feedback cavity parameters (eta, beta, kappa).

    Returns
    -------
    float
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    if weights is None:
        weights = np.full(alphas.shape, 1.0 / alphas.size)
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if weights.shape != alphas.shape:
        raise ValueError("alphas and weights must have the same shape")
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, rtol=0, atol=1e-9):
        raise ValueError("weights must be non-negative and sum to one")
    return float(np.sum(weights * drift_terms(alphas, params)))


def small_amplitude_drift(alpha: complex, params: CavityParams) -> float:
    """Small-alpha limit of the drift, -kappa^2 (1 - eta |beta|^2) |alpha|^2."""
    return float(
        -(params.kappa**2) * (1.0 - params.eta * abs(params.beta) ** 2) * abs(alpha) ** 2
    )
