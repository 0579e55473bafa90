"""The quantum-jump engine for a single cavity trajectory.

Along every trajectory the cavity stays in a coherent state, so a trajectory
is a stochastic process on one complex amplitude alpha (interaction picture).
Two samplers are offered: a fixed-step Bernoulli sampler for both drive
modes, and exact inversion of the survival function for the undriven
feedback cavity.
"""

import dataclasses
import math
import typing
from enum import Enum

import numpy as np
import xarray as xr

from qjump._utils import kernels
from qjump.analytic import (
    decay_alpha,
    feedback_jump_map,
    laser_alpha,
    survival_probability,
    waiting_time,
)
from qjump.core import CavityParams, DriveMode, RandomStream

__all__ = [
    "Sampler",
    "TerminalStatus",
    "TrajectoryClass",
    "StepSettings",
    "StepSizeError",
    "TrajectoryEvent",
    "Trajectory",
    "step_fixed",
    "sample_waiting_time",
    "simulate",
    "classify",
    "first_emission_time",
]

# uniform draws generated per refill of a kernel's buffer
_DRAW_BLOCK = 8192
_EVENT_BLOCK = 256


class Sampler(str, Enum):
    FIXED_STEP = "fixed_step"
    WAITING_TIME = "waiting_time"


class TerminalStatus(str, Enum):
    COMPLETED = "completed"
    HALTED_DIVERGED = "halted_diverged"
    """|alpha|^2 exceeded the divergence cap; the trajectory was stopped."""
    HALTED_VACUUM = "halted_vacuum"
    """No further emission can occur; the remainder is pure decay."""


class TrajectoryClass(str, Enum):
    VACUUM = "vacuum"
    DIVERGING = "diverging"
    UNDECIDED = "undecided"


class StepSizeError(ValueError):
    """
    Raised when a fixed step is too long for the single-jump approximation.
    """

    pass


@dataclasses.dataclass(frozen=True)
class StepSettings:
    """Numerical knobs of the trajectory engine."""

    dt: float = 1e-3
    """Default fixed step (in units of 1/kappa when kappa = 1)."""
    step_budget: float = 0.05
    """Upper bound on kappa dt max(1, |alpha|^2); steps are shortened to respect it."""
    divergence_cap: float = 1e4
    """|alpha|^2 above which a trajectory is halted as diverged."""
    divergence_fraction: float = 0.01
    """Fraction of the cap above which an unhalted trajectory counts as diverging."""


@dataclasses.dataclass(frozen=True)
class TrajectoryEvent:
    """A photon emission along a trajectory."""

    time: float
    detected: bool
    """Outcome of the detector (probability eta)."""
    feedback_applied: bool
    """True iff detected in feedback mode."""


@dataclasses.dataclass
class Trajectory:
    """One seeded realization of the cavity dynamics."""

    stream: RandomStream
    times: np.ndarray
    """Strictly increasing sample times: the output grid up to the horizon or,
    for a diverged trajectory, up to the halt time (which is appended)."""
    alphas: np.ndarray
    """Interaction-picture amplitudes at ``times``."""
    events: list[TrajectoryEvent]
    terminal_status: TerminalStatus = TerminalStatus.COMPLETED
    halt_time: typing.Optional[float] = None

    @property
    def emission_times(self) -> np.ndarray:
        return np.array([ev.time for ev in self.events], dtype=float)

    @property
    def detected_times(self) -> np.ndarray:
        return np.array([ev.time for ev in self.events if ev.detected], dtype=float)

    def to_schrodinger(self, params: CavityParams) -> np.ndarray:
        """Schrodinger-picture amplitudes at ``times`` (phase-space paths)."""
        return self.alphas * np.exp(-1j * params.omega_cav * self.times)

    def to_dataset(self) -> xr.Dataset:
        """The trajectory as an xarray dataset of ``type`` "trajectory"."""
        return xr.Dataset(
            data_vars={"alpha": (("time",), self.alphas)},
            coords={"time": self.times},
            attrs={
                "type": "trajectory",
                "base_seed": int(self.stream.base_seed),
                "stream_index": int(self.stream.stream_index),
                "terminal_status": self.terminal_status.value,
                "n_emissions": len(self.events),
                "n_detections": int(sum(ev.detected for ev in self.events)),
            },
        )


def check_grid(grid) -> np.ndarray:
    grid = np.ascontiguousarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("output grid must be a non-empty 1-D array")
    if grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("output grid must be non-negative and strictly increasing")
    return grid


def step_fixed(
    alpha: complex,
    dt: float,
    params: CavityParams,
    stream: typing.Union[RandomStream, np.random.Generator],
    t: float = 0.0,
    step_budget: float = 0.05,
) -> tuple[complex, typing.Optional[TrajectoryEvent]]:
    """
    Advance one trajectory by a single Bernoulli step.

    Exactly two uniforms are drawn per call (emission, then detection),
    whatever the outcome. Only the first emission of the step is reported;
    ensemble runs of the laser-driven cavity also count the further
    emissions of a step, which leave the amplitude unchanged.

    Parameters
    ----------
    alpha : complex
        Interaction-picture amplitude at the start of the step.
    dt : float
        Step length.
    params : CavityParams
        Cavity parameters.
    stream : RandomStream or numpy.random.Generator
        Source of the two draws. A :py:class:`RandomStream` is replayed from
        its start.
    t : float, optional
        Absolute time of the start of the step, used to time-stamp events.
    step_budget : float, optional
        Upper bound on kappa dt max(1, |alpha|^2), by default 0.05.

    Returns
    -------
    tuple
        The amplitude at the end of the step and the emission event, if any.

    Raises
    ------
    StepSizeError
        If the step violates the single-jump bound.
    """
    n = abs(alpha) ** 2
    if params.kappa * dt * max(1.0, n) > step_budget:
        raise StepSizeError(
            f"step kappa*dt={params.kappa * dt:g} too long for |alpha|^2={n:g}: "
            f"kappa*dt*max(1,|alpha|^2) must not exceed {step_budget:g}"
        )
    rng = stream.generator() if isinstance(stream, RandomStream) else stream
    u_emit, u_det = rng.random(kernels.DRAWS_PER_STEP)

    laser = params.mode is DriveMode.LASER_DRIVEN
    if laser:
        n_mid = abs(laser_alpha(0.5 * dt, alpha, params)) ** 2
        alpha_new = complex(laser_alpha(dt, alpha, params))
        p_emit = -math.expm1(-params.kappa * n_mid * dt)
    else:
        n_mid = n
        alpha_new = complex(decay_alpha(dt, alpha, params.kappa))
        p_emit = 1.0 - float(survival_probability(alpha, dt, params.kappa))

    if u_emit >= p_emit:
        return alpha_new, None

    detected = bool(u_det < params.eta)
    feedback = detected and not laser
    if feedback:
        alpha_new = feedback_jump_map(alpha_new, params.beta)
    offset = kernels.emission_offset(
        float(u_emit), n, float(n_mid), float(dt), laser, float(params.kappa)
    )
    return alpha_new, TrajectoryEvent(t + float(offset), detected, feedback)


def sample_waiting_time(
    alpha: complex,
    params: CavityParams,
    stream: typing.Union[RandomStream, np.random.Generator],
) -> typing.Optional[float]:
    """
    Draw the time until the next emission of an undriven cavity.

    Draws u uniform on (0, 1] and returns the t with P0(t) = u, or ``None``
    when u <= exp(-|alpha|^2) (no further emission; the cavity decays to the
    vacuum).
    """
    if params.mode is not DriveMode.FEEDBACK:
        raise ValueError("waiting-time sampling needs an undriven (feedback) cavity")
    rng = stream.generator() if isinstance(stream, RandomStream) else stream
    u = 1.0 - rng.random()
    return waiting_time(u, alpha, params.kappa)


@dataclasses.dataclass
class RawTrajectory:
    """Kernel output on the full grid; frozen after a divergence halt."""

    alphas: np.ndarray
    status: TerminalStatus
    halt_time: typing.Optional[float]
    halt_index: int
    """First grid index whose value is frozen (grid size if not halted)."""
    halt_alpha: complex
    ev_t: np.ndarray
    ev_det: np.ndarray


def simulate_raw(
    alpha0: complex,
    params: CavityParams,
    stream: RandomStream,
    grid: np.ndarray,
    sampler: Sampler,
    settings: StepSettings,
) -> RawTrajectory:
    """
    Run the compiled kernel for one trajectory on ``grid``.

    Unlike :py:func:`simulate` the result keeps the full grid: after a
    divergence halt the remaining grid points hold the amplitude at the halt.
    """
    laser = params.mode is DriveMode.LASER_DRIVEN
    if laser and sampler is Sampler.WAITING_TIME:
        raise ValueError("the waiting-time sampler is only available in feedback mode")

    rng = stream.generator()
    draws = rng.random(_DRAW_BLOCK)
    ev_t = np.empty(_EVENT_BLOCK, dtype=np.float64)
    ev_det = np.empty(_EVENT_BLOCK, dtype=np.bool_)
    out = np.empty(grid.size, dtype=np.complex128)

    t, alpha, gi, pos, n_ev = 0.0, complex(alpha0), 0, 0, 0
    beta = complex(params.beta)
    while True:
        if sampler is Sampler.FIXED_STEP:
            status, t, alpha, gi, pos, n_ev = kernels.fixed_step_kernel(
                t,
                alpha,
                gi,
                grid,
                out,
                complex(alpha0),
                laser,
                float(params.kappa),
                float(params.omega),
                float(params.eta),
                beta,
                float(settings.dt),
                float(settings.step_budget),
                float(settings.divergence_cap),
                draws,
                pos,
                ev_t,
                ev_det,
                n_ev,
            )
        else:
            status, t, alpha, gi, pos, n_ev = kernels.waiting_time_kernel(
                t,
                alpha,
                gi,
                grid,
                out,
                float(params.kappa),
                float(params.eta),
                beta,
                float(settings.divergence_cap),
                draws,
                pos,
                ev_t,
                ev_det,
                n_ev,
            )

        if status == kernels.NEED_DRAWS:
            # unused tail of the buffer is carried over, so block size never matters
            draws = np.concatenate([draws[pos:], rng.random(_DRAW_BLOCK)])
            pos = 0
        elif status == kernels.NEED_EVENTS:
            ev_t = np.concatenate([ev_t, np.empty(ev_t.size, dtype=np.float64)])
            ev_det = np.concatenate([ev_det, np.empty(ev_det.size, dtype=np.bool_)])
        else:
            break

    halt_time = None
    halt_index = grid.size
    if status == kernels.DIVERGED:
        out[gi:] = alpha
        result_status = TerminalStatus.HALTED_DIVERGED
        halt_time, halt_index = float(t), gi
    elif status == kernels.VACUUM:
        if gi < grid.size:
            out[gi:] = alpha
        result_status = TerminalStatus.HALTED_VACUUM
    else:
        result_status = TerminalStatus.COMPLETED

    return RawTrajectory(
        alphas=out,
        status=result_status,
        halt_time=halt_time,
        halt_index=halt_index,
        halt_alpha=complex(alpha),
        ev_t=ev_t[:n_ev].copy(),
        ev_det=ev_det[:n_ev].copy(),
    )


def simulate(
    alpha0: complex,
    horizon: float,
    params: CavityParams,
    stream: RandomStream,
    grid: typing.Optional[np.ndarray] = None,
    sampler: Sampler = Sampler.FIXED_STEP,
    settings: StepSettings = StepSettings(),
) -> Trajectory:
    """
    Simulate one trajectory from the coherent state ``alpha0``.

    Parameters
    ----------
    alpha0 : complex
        Initial interaction-picture amplitude.
    horizon : float
        Final time, > 0.
    params : CavityParams
        Cavity parameters.
    stream : RandomStream
        Random stream identity of this trajectory.
    grid : np.ndarray, optional
        Output times within [0, horizon]. By default 101 equidistant points.
    sampler : Sampler, optional
        ``FIXED_STEP`` (both modes) or ``WAITING_TIME`` (feedback mode only).
    settings : StepSettings, optional
        Step length, step budget and divergence cap.

    Returns
    -------
    Trajectory
    """
    if not np.isfinite(complex(alpha0)):
        raise ValueError(f"initial amplitude must be finite, got {alpha0}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    params.checked()
    if grid is None:
        grid = np.linspace(0.0, horizon, 101)
    grid = check_grid(grid)
    if grid[-1] > horizon:
        raise ValueError("output grid extends beyond the horizon")

    raw = simulate_raw(alpha0, params, stream, grid, Sampler(sampler), settings)

    feedback = params.mode is DriveMode.FEEDBACK
    events = [
        TrajectoryEvent(float(t_ev), bool(det), bool(det) and feedback)
        for t_ev, det in zip(raw.ev_t, raw.ev_det)
    ]
    times, alphas = grid, raw.alphas
    if raw.status is TerminalStatus.HALTED_DIVERGED:
        times = np.append(grid[: raw.halt_index], raw.halt_time)
        alphas = np.append(raw.alphas[: raw.halt_index], raw.halt_alpha)
    if not feedback:
        # emissions never change a coherent state: use the closed form on the grid
        alphas = np.asarray(laser_alpha(times, alpha0, params), dtype=complex)

    return Trajectory(
        stream=stream,
        times=times,
        alphas=alphas,
        events=events,
        terminal_status=raw.status,
        halt_time=raw.halt_time,
    )


def classify_raw(
    alpha_at_horizon: complex,
    status: TerminalStatus,
    vacuum_radius: float,
    settings: StepSettings,
) -> TrajectoryClass:
    if status is TerminalStatus.HALTED_DIVERGED:
        return TrajectoryClass.DIVERGING
    if abs(alpha_at_horizon) < vacuum_radius:
        return TrajectoryClass.VACUUM
    if abs(alpha_at_horizon) ** 2 > settings.divergence_fraction * settings.divergence_cap:
        return TrajectoryClass.DIVERGING
    return TrajectoryClass.UNDECIDED


def classify(
    traj: Trajectory,
    vacuum_radius: float = 0.1,
    horizon: typing.Optional[float] = None,
    settings: StepSettings = StepSettings(),
) -> TrajectoryClass:
    """
    Classify a trajectory by its amplitude at ``horizon``.

    Vacuum iff |alpha(horizon)| < ``vacuum_radius``; Diverging iff the
    trajectory was halted at the divergence cap or |alpha(horizon)|^2
    exceeds ``settings.divergence_fraction`` of the cap; Undecided otherwise.
    """
    if vacuum_radius <= 0:
        raise ValueError("vacuum_radius must be positive")
    if horizon is None:
        horizon = float(traj.times[-1])
    if traj.terminal_status is TerminalStatus.HALTED_DIVERGED:
        return TrajectoryClass.DIVERGING
    ix = int(np.searchsorted(traj.times, horizon, side="right")) - 1
    if ix < 0:
        raise ValueError(f"trajectory has no sample at or before t={horizon}")
    return classify_raw(traj.alphas[ix], traj.terminal_status, vacuum_radius, settings)


def first_emission_time(traj: Trajectory) -> float:
    """Time of the first emission, ``nan`` if the trajectory never emits."""
    return float(traj.events[0].time) if traj.events else math.nan

