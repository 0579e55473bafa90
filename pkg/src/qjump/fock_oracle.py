"""
Master-equation oracle: the cavity density matrix in a truncated Fock basis
{|0>, ..., |N>}, integrated with a classical fourth-order Runge-Kutta scheme.

It shares no code with the trajectory engine and is used to cross-check
ensemble averages. Ladder-operator products are evaluated with index shifts
(O(N^2)); only the feedback displacement needs dense matrix products.
"""

import dataclasses
import math
import typing

import numpy as np
import toolviper.utils.logger as logger
import xarray as xr
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln
from scipy.stats import poisson

from qjump._utils.list_and_array import complex_to_json, uniform_grid
from qjump.analytic import laser_alpha
from qjump.core import CavityParams, DriveMode, ParameterIssue, ParameterIssues
from qjump.ensemble import simulate_ensemble
from qjump.trajectory import StepSettings

__all__ = [
    "TruncationError",
    "TruncatedOperator",
    "TruncatedDensityMatrix",
    "FockModel",
    "OracleResult",
    "annihilation",
    "creation",
    "number",
    "coherent_vector",
    "coherent_density",
    "displacement",
    "laguerre_displacement",
    "unitarity_defect",
    "lindblad_rhs",
    "observable_drift",
    "integrate",
    "truncation_rule",
    "suggest_truncation",
]

TAIL_TOLERANCE = 1e-8
TOP_POPULATION_TOLERANCE = 1e-6


class TruncationError(RuntimeError):
    """
    Raised when the Fock basis is too small for the state it has to hold.
    """

    def __init__(self, message: str, suggested_truncation: int):
        super().__init__(f"{message}; suggested truncation N={suggested_truncation}")
        self.suggested_truncation = suggested_truncation


@dataclasses.dataclass(frozen=True)
class TruncatedOperator:
    """An operator on the truncated Fock space, as a (N+1) x (N+1) matrix."""

    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_max(self) -> int:
        """Truncation level N."""
        return self.dim - 1

    def dag(self) -> "TruncatedOperator":
        return TruncatedOperator(self.entries.conj().T)

    def __matmul__(self, other):
        if isinstance(other, TruncatedOperator):
            return TruncatedOperator(self.entries @ other.entries)
        return self.entries @ other


@dataclasses.dataclass(frozen=True)
class TruncatedDensityMatrix:
    """A cavity state in the truncated Fock basis."""

    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def mean_n(self) -> float:
        return float(np.dot(np.arange(self.dim), self.entries.diagonal().real))

    def validate(
        self,
        hermitian_tol: float = 1e-10,
        trace_tol: float = 1e-8,
        eigenvalue_tol: float = 1e-8,
    ) -> ParameterIssues:
        """Hermiticity, unit trace and positivity, each within its tolerance."""
        rho = self.entries
        issues = ParameterIssues()
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            issues.add(
                ParameterIssue("rho", "not a square matrix", found=rho.shape)
            )
            return issues
        asym = float(np.max(np.abs(rho - rho.conj().T)))
        if asym > hermitian_tol:
            issues.add(
                ParameterIssue(
                    "rho", "not Hermitian", found=asym, expected=f"<= {hermitian_tol:g}"
                )
            )
        trace = complex(np.trace(rho))
        if abs(trace - 1.0) > trace_tol:
            issues.add(
                ParameterIssue(
                    "rho", "trace differs from one", found=trace, expected=f"within {trace_tol:g}"
                )
            )
        smallest = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
        if smallest < -eigenvalue_tol:
            issues.add(
                ParameterIssue(
                    "rho",
                    "negative eigenvalue",
                    found=smallest,
                    expected=f">= {-eigenvalue_tol:g}",
                )
            )
        return issues


def annihilation(n_max: int) -> TruncatedOperator:
    """<m|c|n> = sqrt(n) delta_{m, n-1}."""
    return TruncatedOperator(np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(complex))


def creation(n_max: int) -> TruncatedOperator:
    return annihilation(n_max).dag()


def number(n_max: int) -> TruncatedOperator:
    return TruncatedOperator(np.diag(np.arange(n_max + 1)).astype(complex))


def truncation_rule(mu: float) -> int:
    """Smallest recommended N for a largest mean photon number ``mu``."""
    mu = max(float(mu), 0.0)
    return int(math.ceil(mu + 8.0 * math.sqrt(mu) + 10.0))


def coherent_tail_mass(alpha: complex, n_max: int) -> float:
    """Poisson probability of more than ``n_max`` photons in |alpha>."""
    return float(poisson.sf(n_max, abs(alpha) ** 2))


def coherent_vector(
    alpha: complex, n_max: int, tolerance: float = TAIL_TOLERANCE
) -> np.ndarray:
    """
    Coherent state |alpha> truncated to n = 0..N and renormalized.

    Raises
    ------
    TruncationError
        If |alpha|^2 > N/2 or the discarded tail mass exceeds ``tolerance``.
    """
    n_mean = abs(alpha) ** 2
    tail = coherent_tail_mass(alpha, n_max)
    if n_mean > n_max / 2 or tail > tolerance:
        raise TruncationError(
            f"coherent state |alpha|^2={n_mean:g} does not fit N={n_max} "
            f"(tail mass {tail:.3g})",
            truncation_rule(n_mean),
        )
    vec = np.empty(n_max + 1, dtype=complex)
    vec[0] = math.exp(-0.5 * n_mean)
    for k in range(1, n_max + 1):
        vec[k] = vec[k - 1] * alpha / math.sqrt(k)
    logger.debug(f"coherent_vector alpha={alpha}, N={n_max}: tail mass {tail:.3g}")
    return vec / np.linalg.norm(vec)


def coherent_density(alpha: complex, n_max: int) -> TruncatedDensityMatrix:
    vec = coherent_vector(alpha, n_max)
    return TruncatedDensityMatrix(np.outer(vec, vec.conj()))


def displacement(beta: complex, n_max: int) -> TruncatedOperator:
    """
    D(beta) = exp(beta c^dag - beta^* c) on the truncated space, by
    scaling-and-squaring matrix exponentiation.
    """
    if abs(beta) ** 2 > n_max / 4:
        logger.warning(
            f"Displacement |beta|^2={abs(beta) ** 2:g} is large for N={n_max}; "
            "matrix elements near the truncation edge are unreliable"
        )
    c = annihilation(n_max).entries
    return TruncatedOperator(expm(beta * c.conj().T - np.conj(beta) * c))


def laguerre_displacement(beta: complex, n_max: int) -> TruncatedOperator:
    """
    Exact matrix elements of D(beta),

    <m|D|n> = sqrt(n!/m!) beta^(m-n) exp(-|beta|^2/2) L_n^(m-n)(|beta|^2)  for m >= n,

    and the conjugate-symmetric expression for m < n.
    """
    x = abs(beta) ** 2
    out = np.empty((n_max + 1, n_max + 1), dtype=complex)
    for m in range(n_max + 1):
        for n in range(n_max + 1):
            lo, hi = min(m, n), max(m, n)
            ratio = math.exp(0.5 * (gammaln(lo + 1) - gammaln(hi + 1)))
            factor = beta ** (m - n) if m >= n else (-np.conj(beta)) ** (n - m)
            out[m, n] = ratio * factor * math.exp(-0.5 * x) * eval_genlaguerre(lo, hi - lo, x)
    return TruncatedOperator(out)


def unitarity_defect(op: TruncatedOperator, limit: typing.Optional[int] = None) -> float:
    """max |D^dag D - 1| over indices <= ``limit`` (all indices by default)."""
    d = op.entries
    defect = d.conj().T @ d - np.eye(op.dim)
    if limit is not None:
        defect = defect[: limit + 1, : limit + 1]
    return float(np.max(np.abs(defect)))


class FockModel:
    """
    Lindblad generator of the cavity in a truncated Fock basis.

    Parameters
    ----------
    params : CavityParams
        Cavity parameters; the mode selects the master equation.
    n_max : int
        Truncation level N.
    """

    def __init__(self, params: CavityParams, n_max: int):
        params.checked()
        if n_max < 1:
            raise ValueError(f"truncation level must be >= 1, got {n_max}")
        self.params = params
        self.n_max = int(n_max)
        self.c = annihilation(n_max).entries
        self.cd = self.c.conj().T
        self.n = number(n_max).entries
        k = np.arange(n_max + 1)
        self._sqrt = np.sqrt(k[1:].astype(float))
        self._n_sum = (k[:, None] + k[None, :]).astype(float)
        self.feedback = params.mode is DriveMode.FEEDBACK
        if self.feedback:
            self.R = displacement(params.beta, n_max).entries
            self.Rd = self.R.conj().T

    @property
    def dim(self) -> int:
        return self.n_max + 1

    def _jump(self, rho: np.ndarray) -> np.ndarray:
        # c rho c^dag
        out = np.zeros_like(rho)
        out[:-1, :-1] = self._sqrt[:, None] * rho[1:, 1:] * self._sqrt[None, :]
        return out

    def _drive_commutator(self, rho: np.ndarray) -> np.ndarray:
        # [c + c^dag, rho]
        s = self._sqrt
        left = np.zeros_like(rho)
        left[:-1, :] += s[:, None] * rho[1:, :]
        left[1:, :] += s[:, None] * rho[:-1, :]
        right = np.zeros_like(rho)
        right[:, 1:] += rho[:, :-1] * s[None, :]
        right[:, :-1] += rho[:, 1:] * s[None, :]
        return left - right

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """d rho / dt."""
        kappa = self.params.kappa
        jump = self._jump(rho)
        out = kappa * (jump - 0.5 * self._n_sum * rho)
        if self.feedback:
            if self.params.eta > 0:
                out += self.params.eta * kappa * (self.R @ jump @ self.Rd - jump)
        else:
            out += -0.5j * self.params.omega * self._drive_commutator(rho)
        return out

    def adjoint(self, op: np.ndarray) -> np.ndarray:
        """Heisenberg-picture generator: d<A>/dt = tr(adjoint(A) rho)."""
        kappa = self.params.kappa
        c, cd, n = self.c, self.cd, self.n
        sandwich = cd @ op @ c
        out = kappa * (sandwich - 0.5 * (op @ n + n @ op))
        if self.feedback:
            out += self.params.eta * kappa * (cd @ self.Rd @ op @ self.R @ c - sandwich)
        else:
            h = c + cd
            out += 0.5j * self.params.omega * (h @ op - op @ h)
        return out


def _entries(x) -> np.ndarray:
    return x.entries if isinstance(x, (TruncatedOperator, TruncatedDensityMatrix)) else np.asarray(x)


def lindblad_rhs(rho, params: CavityParams) -> np.ndarray:
    """
    Right-hand side of the cavity master equation.

    Laser mode: -(i/2) Omega [c + c^dag, rho] + kappa (c rho c^dag - {n, rho}/2).
    Feedback mode: kappa (c rho c^dag - {n, rho}/2)
    + eta kappa (R c rho c^dag R^dag - c rho c^dag), with R = D(beta).
    """
    rho = _entries(rho)
    return FockModel(params, rho.shape[0] - 1).rhs(rho)


def observable_drift(rho, op, params: CavityParams) -> float:
    """d<A>/dt of the Hermitian observable ``op`` in the state ``rho``."""
    rho, op = _entries(rho), _entries(op)
    model = FockModel(params, rho.shape[0] - 1)
    return float(np.trace(model.adjoint(op) @ rho).real)


@dataclasses.dataclass
class OracleResult:
    """Sampled solution of the master equation."""

    params: CavityParams
    n_max: int
    dt: float
    times: np.ndarray
    mean_n: np.ndarray
    trace: np.ndarray
    states: typing.Optional[np.ndarray] = None
    alpha0: typing.Optional[complex] = None

    def state(self, ix: int) -> TruncatedDensityMatrix:
        if self.states is None:
            raise ValueError("states were not kept")
        return TruncatedDensityMatrix(self.states[ix])

    def series(self) -> xr.Dataset:
        """The solution as an ``ensemble_series`` dataset with zero stderr."""
        kappa = float(self.params.kappa)
        attrs = {
            "type": "ensemble_series",
            "n_trajectories": 0,
            "kappa": kappa,
            "source": "oracle",
            "mode": self.params.mode.value,
            "truncation": int(self.n_max),
        }
        if self.alpha0 is not None:
            attrs["alpha0"] = complex_to_json(self.alpha0)
        return xr.Dataset(
            data_vars={
                "mean_n": (("time",), self.mean_n),
                "emission_rate": (("time",), kappa * self.mean_n),
                "stderr": (("time",), np.zeros_like(self.mean_n)),
            },
            coords={"time": self.times},
            attrs=attrs,
        )


def integrate(
    rho0,
    params: CavityParams,
    horizon: float,
    dt: float = 1e-3,
    grid: typing.Optional[np.ndarray] = None,
    keep_states: bool = True,
    top_tolerance: float = TOP_POPULATION_TOLERANCE,
) -> OracleResult:
    """
    Integrate the master equation from ``rho0`` with fixed-step RK4.

    The state is never renormalized, so trace drift measures the integration
    error.

    Parameters
    ----------
    rho0 : TruncatedDensityMatrix or np.ndarray
        Initial state; its dimension sets the truncation.
    params : CavityParams
        Cavity parameters.
    horizon : float
        Final time.
    dt : float, optional
        Step length with kappa dt <= 1e-2, by default 1e-3. Steps are
        shortened to land on the grid.
    grid : np.ndarray, optional
        Sample times in [0, horizon]; 101 equidistant points by default.
    keep_states : bool, optional
        Keep the density matrix at every sample time.
    top_tolerance : float, optional
        Largest allowed population of |N>, by default 1e-6.

    Returns
    -------
    OracleResult

    Raises
    ------
    TruncationError
        If the top Fock level gets populated beyond ``top_tolerance``.
    """
    rho = np.array(_entries(rho0), dtype=complex)
    if params.kappa * dt > 1e-2:
        raise ValueError(f"kappa*dt={params.kappa * dt:g} exceeds 1e-2")
    grid = uniform_grid(horizon, 101) if grid is None else np.asarray(grid, dtype=float)
    if grid[0] < 0 or np.any(np.diff(grid) <= 0) or grid[-1] > horizon:
        raise ValueError("sample grid must be increasing within [0, horizon]")

    model = FockModel(params, rho.shape[0] - 1)
    n_diag = np.arange(model.dim)
    mean_n = np.empty(grid.size)
    trace = np.empty(grid.size, dtype=complex)
    states = np.empty((grid.size, model.dim, model.dim), dtype=complex) if keep_states else None
    logger.debug(f"Integrating master equation: N={model.n_max}, dt={dt:g}, horizon={horizon:g}")

    t = 0.0
    for gi, t_target in enumerate(grid):
        while t_target - t > 1e-12:
            h = min(dt, t_target - t)
            k1 = model.rhs(rho)
            k2 = model.rhs(rho + 0.5 * h * k1)
            k3 = model.rhs(rho + 0.5 * h * k2)
            k4 = model.rhs(rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        t = float(t_target)
        populations = rho.diagonal().real
        mean_n[gi] = float(np.dot(n_diag, populations))
        trace[gi] = np.trace(rho)
        if states is not None:
            states[gi] = rho
        if populations[-1] > top_tolerance:
            raise TruncationError(
                f"population {populations[-1]:.3g} of |N={model.n_max}> at t={t:g} "
                f"exceeds {top_tolerance:g}",
                max(truncation_rule(mean_n[: gi + 1].max()), 2 * model.n_max),
            )

    return OracleResult(
        params=params,
        n_max=model.n_max,
        dt=float(dt),
        times=grid,
        mean_n=mean_n,
        trace=trace,
        states=states,
    )


def suggest_truncation(
    alpha0: complex,
    params: CavityParams,
    horizon: float,
    n_pilot: int = 200,
    base_seed: int = 0,
    settings: StepSettings = StepSettings(),
    max_truncation: int = 200,
) -> int:
    """
    Truncation level for an oracle run from ``alpha0`` up to ``horizon``.

    The largest expected mean photon number comes from the closed-form
    solution in laser mode and from a pilot trajectory ensemble in feedback
    mode, and is turned into N by :py:func:`truncation_rule`.

    Raises
    ------
    TruncationError
        If the suggestion exceeds ``max_truncation`` (dense matrices beyond
        that size are out of reach).
    """
    times = np.linspace(0.0, horizon, 1001)
    if params.mode is DriveMode.LASER_DRIVEN:
        mu = float(np.max(np.abs(laser_alpha(times, alpha0, params)) ** 2))
    else:
        pilot = simulate_ensemble(
            alpha0,
            params,
            n_pilot,
            horizon,
            base_seed=base_seed,
            settings=settings,
        )
        mu = max(float(pilot.photons.mean.max()), abs(alpha0) ** 2)
    n_max = truncation_rule(mu)
    logger.debug(f"Largest expected mean photon number {mu:.4g}: N={n_max}")
    if n_max > max_truncation:
        raise TruncationError(
            f"mean photon number up to {mu:.4g} needs more than N={max_truncation}",
            n_max,
        )
    return n_max
