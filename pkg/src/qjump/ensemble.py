"""
Ensemble statistics over many seeded trajectories: emission-rate curves,
probabilities of reaching the vacuum, ergodicity diagnostics, and
comparisons against analytic and master-equation results.

Trajectories are simulated in fixed-size blocks that dask evaluates in
parallel. Block statistics are merged by a pairwise tree whose shape only
depends on the number of blocks, so every result is independent of the
number of worker threads.
"""

import dataclasses
import math
import time
import typing

import dask
import numpy as np
import psutil
import toolviper.utils.logger as logger
import xarray as xr
from scipy import stats
from scipy.integrate import trapezoid

from qjump._utils.list_and_array import (
    complex_to_json,
    lattice,
    tree_reduce,
    uniform_grid,
)
from qjump.analytic import drift_terms, mean_photon_drift
from qjump.core import CavityParams, DriveMode, RandomStream
from qjump.trajectory import (
    Sampler,
    StepSettings,
    TerminalStatus,
    TrajectoryClass,
    check_grid,
    classify_raw,
    simulate_raw,
)

__all__ = [
    "EnsembleRun",
    "AlphaSnapshot",
    "DriftReport",
    "SlopeEstimate",
    "SeriesComparison",
    "KSComparison",
    "simulate_ensemble",
    "run_ensemble",
    "chi_probe",
    "chi_map",
    "ergodicity_report",
    "phase_sweep",
    "beta_sweep",
    "drift_check",
    "late_time_slope",
    "compare_series",
    "ks_compare",
]


@dataclasses.dataclass
class _Moments:
    """Count, mean and sum of squared deviations, per grid point."""

    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, samples: np.ndarray) -> "_Moments":
        mean = samples.mean(axis=0)
        return cls(samples.shape[0], mean, ((samples - mean) ** 2).sum(axis=0))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        return _Moments(n, mean, m2)

    def stderr(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(np.maximum(self.m2, 0.0) / (self.n - 1) / self.n)


@dataclasses.dataclass(frozen=True)
class _BlockOptions:
    statistics: bool = True
    slope_window: typing.Optional[tuple[float, float]] = None
    snapshot_indices: tuple[int, ...] = ()
    keep_paths: bool = False
    vacuum_radius: float = 0.1


@dataclasses.dataclass
class _BlockResult:
    photons: typing.Optional[_Moments]
    counts: typing.Optional[_Moments]
    detected: typing.Optional[np.ndarray]
    halted: typing.Optional[np.ndarray]
    status: np.ndarray
    classes: np.ndarray
    time_average: np.ndarray
    first_emission: np.ndarray
    n_emissions: np.ndarray
    slopes: typing.Optional[np.ndarray]
    snapshots: typing.Optional[np.ndarray]
    paths: typing.Optional[np.ndarray]


def _merge_blocks(a: _BlockResult, b: _BlockResult) -> _BlockResult:
    def _cat(x, y):
        return None if x is None else np.concatenate([x, y])

    return _BlockResult(
        photons=None if a.photons is None else a.photons.merge(b.photons),
        counts=None if a.counts is None else a.counts.merge(b.counts),
        detected=None if a.detected is None else a.detected + b.detected,
        halted=None if a.halted is None else a.halted + b.halted,
        status=_cat(a.status, b.status),
        classes=_cat(a.classes, b.classes),
        time_average=_cat(a.time_average, b.time_average),
        first_emission=_cat(a.first_emission, b.first_emission),
        n_emissions=_cat(a.n_emissions, b.n_emissions),
        slopes=_cat(a.slopes, b.slopes),
        snapshots=_cat(a.snapshots, b.snapshots),
        paths=_cat(a.paths, b.paths),
    )


def _time_average(n: np.ndarray, grid: np.ndarray) -> float:
    if grid.size == 1:
        return float(n[0])
    return float(trapezoid(n, grid) / (grid[-1] - grid[0]))


def _simulate_block(
    block_index: int,
    alpha0s: np.ndarray,
    stream_indices: np.ndarray,
    params: CavityParams,
    grid: np.ndarray,
    sampler: Sampler,
    settings: StepSettings,
    base_seed: int,
    options: _BlockOptions,
) -> _BlockResult:
    start = time.time()
    size, n_grid = alpha0s.size, grid.size
    photons = np.empty((size, n_grid))
    halted = np.zeros(n_grid, dtype=np.int64)
    bin_counts = np.zeros((size, n_grid))
    detected = np.zeros(n_grid)
    status = np.empty(size, dtype=object)
    classes = np.empty(size, dtype=object)
    time_average = np.empty(size)
    first_emission = np.full(size, np.nan)
    n_emissions = np.zeros(size, dtype=np.int64)
    snapshots = (
        np.empty((size, len(options.snapshot_indices)), dtype=complex)
        if options.snapshot_indices
        else None
    )
    paths = np.empty((size, n_grid), dtype=complex) if options.keep_paths else None

    for j in range(size):
        raw = simulate_raw(
            complex(alpha0s[j]),
            params,
            RandomStream(base_seed, int(stream_indices[j])),
            grid,
            sampler,
            settings,
        )
        n = np.abs(raw.alphas) ** 2
        photons[j] = n
        if raw.status is TerminalStatus.HALTED_DIVERGED:
            halted[raw.halt_index :] += 1
        status[j] = raw.status.value
        classes[j] = classify_raw(
            raw.alphas[-1], raw.status, options.vacuum_radius, settings
        ).value
        time_average[j] = _time_average(n, grid)
        n_emissions[j] = raw.ev_t.size
        if raw.ev_t.size:
            first_emission[j] = raw.ev_t[0]
            # bin k collects emissions in (grid[k-1], grid[k]]
            bins = np.searchsorted(grid, raw.ev_t, side="left")
            bin_counts[j] = np.bincount(bins, minlength=n_grid)[:n_grid]
            detected += np.bincount(bins[raw.ev_det], minlength=n_grid)[:n_grid]
        if snapshots is not None:
            snapshots[j] = raw.alphas[list(options.snapshot_indices)]
        if paths is not None:
            paths[j] = raw.alphas

    slopes = None
    if options.slope_window is not None:
        t_min, t_max = options.slope_window
        mask = (grid >= t_min) & (grid <= t_max)
        tc = grid[mask] - grid[mask].mean()
        slopes = (params.kappa * photons[:, mask]) @ tc / np.sum(tc**2)

    photon_moments = counts = None
    if options.statistics:
        photon_moments = _Moments.of(photons)
        widths = np.diff(grid, prepend=np.nan)
        rates = np.zeros_like(bin_counts)
        rates[:, 1:] = bin_counts[:, 1:] / widths[1:]
        counts = _Moments.of(rates)

    logger.debug(
        f"Block {block_index}: {size} trajectories in {time.time() - start:.3f} s"
    )
    return _BlockResult(
        photons=photon_moments,
        counts=counts,
        detected=detected if options.statistics else None,
        halted=halted if options.statistics else None,
        status=status,
        classes=classes,
        time_average=time_average,
        first_emission=first_emission,
        n_emissions=n_emissions,
        slopes=slopes,
        snapshots=snapshots,
        paths=paths,
    )


def _run_blocks(
    alpha0s: np.ndarray,
    stream_indices: np.ndarray,
    params: CavityParams,
    grid: np.ndarray,
    sampler: Sampler,
    settings: StepSettings,
    base_seed: int,
    options: _BlockOptions,
    threads: int,
    block_size: int,
) -> _BlockResult:
    if block_size < 1:
        raise ValueError(f"block_size must be positive, got {block_size}")
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    params.checked()
    if sampler is Sampler.WAITING_TIME and params.mode is not DriveMode.FEEDBACK:
        raise ValueError("the waiting-time sampler is only available in feedback mode")

    total = alpha0s.size
    starts = range(0, total, block_size)
    logger.info(
        f"Simulating {total} trajectories in {len(starts)} blocks "
        f"({params.mode.value}, {sampler.value} sampler, {threads} threads)"
    )
    delayed_list = [
        dask.delayed(_simulate_block)(
            ix,
            alpha0s[start : start + block_size],
            stream_indices[start : start + block_size],
            params,
            grid,
            sampler,
            settings,
            base_seed,
            options,
        )
        for ix, start in enumerate(starts)
    ]
    if threads > 1:
        results = dask.compute(*delayed_list, scheduler="threads", num_workers=threads)
    else:
        results = dask.compute(*delayed_list, scheduler="synchronous")
    return tree_reduce(list(results), _merge_blocks)


@dataclasses.dataclass(frozen=True)
class AlphaSnapshot:
    """Amplitudes of every trajectory at one grid time and its two neighbours."""

    time: float
    alphas: np.ndarray
    weights: typing.Optional[np.ndarray] = None
    """``None`` for the equal weights of a trajectory ensemble."""
    t_before: typing.Optional[float] = None
    alphas_before: typing.Optional[np.ndarray] = None
    t_after: typing.Optional[float] = None
    alphas_after: typing.Optional[np.ndarray] = None


@dataclasses.dataclass
class EnsembleRun:
    """Everything recorded by :py:func:`simulate_ensemble`."""

    params: CavityParams
    alpha0: complex
    grid: np.ndarray
    base_seed: int
    sampler: Sampler
    settings: StepSettings
    vacuum_radius: float
    n_trajectories: int
    photons: _Moments
    counts: _Moments
    detected: np.ndarray
    n_halted: np.ndarray
    status: np.ndarray
    classes: np.ndarray
    time_average: np.ndarray
    first_emission: np.ndarray
    n_emissions: np.ndarray
    slope_window: typing.Optional[tuple[float, float]] = None
    slopes: typing.Optional[np.ndarray] = None
    snapshot_indices: tuple[int, ...] = ()
    snapshots: typing.Optional[np.ndarray] = None
    paths: typing.Optional[np.ndarray] = None

    def series(self) -> xr.Dataset:
        """The run summarized as an ``ensemble_series`` dataset."""
        kappa = float(self.params.kappa)
        counted = self.counts.mean.copy()
        counted_stderr = self.counts.stderr()
        counted[0] = counted_stderr[0] = np.nan
        widths = np.diff(self.grid, prepend=np.nan)
        detected = np.full(self.grid.size, np.nan)
        detected[1:] = self.detected[1:] / (self.n_trajectories * widths[1:])
        return xr.Dataset(
            data_vars={
                "mean_n": (("time",), self.photons.mean),
                "emission_rate": (("time",), kappa * self.photons.mean),
                "stderr": (("time",), kappa * self.photons.stderr()),
                "n_halted": (("time",), self.n_halted),
                "counted_rate": (("time",), counted),
                "counted_stderr": (("time",), counted_stderr),
                "detected_rate": (("time",), detected),
            },
            coords={"time": self.grid},
            attrs={
                "type": "ensemble_series",
                "n_trajectories": int(self.n_trajectories),
                "kappa": kappa,
                "source": "trajectory",
                "mode": self.params.mode.value,
                "alpha0": complex_to_json(self.alpha0),
                "base_seed": int(self.base_seed),
                "sampler": self.sampler.value,
            },
        )

    def snapshot(self, t: float) -> AlphaSnapshot:
        """The amplitudes recorded at grid time ``t`` (see ``snapshot_times``)."""
        k = int(np.argmin(np.abs(self.grid - t)))
        if not np.isclose(self.grid[k], t) or k not in self.snapshot_indices:
            raise ValueError(f"no snapshot recorded at t={t}")
        before = k - 1 if k - 1 in self.snapshot_indices else k
        after = k + 1 if k + 1 in self.snapshot_indices else k
        col = self.snapshot_indices.index
        return AlphaSnapshot(
            time=float(self.grid[k]),
            alphas=self.snapshots[:, col(k)],
            t_before=float(self.grid[before]),
            alphas_before=self.snapshots[:, col(before)],
            t_after=float(self.grid[after]),
            alphas_after=self.snapshots[:, col(after)],
        )

    def class_fractions(self) -> dict[str, float]:
        """Fraction of trajectories per :py:class:`TrajectoryClass` at the horizon."""
        return {
            cls.value: float(np.mean(self.classes == cls.value))
            for cls in TrajectoryClass
        }

    def zero_emission_fraction(self) -> tuple[float, float]:
        """Fraction of trajectories without any emission, and its standard error."""
        p = float(np.mean(self.n_emissions == 0))
        return p, math.sqrt(p * (1.0 - p) / self.n_trajectories)


def _memory_budget(memory_budget_gib: float) -> float:
    return min(memory_budget_gib * 2**30, psutil.virtual_memory().available)


def simulate_ensemble(
    alpha0: complex,
    params: CavityParams,
    n_trajectories: int,
    horizon: float,
    grid: typing.Optional[np.ndarray] = None,
    base_seed: int = 0,
    sampler: Sampler = Sampler.FIXED_STEP,
    settings: StepSettings = StepSettings(),
    vacuum_radius: float = 0.1,
    threads: int = 1,
    block_size: int = 1024,
    slope_window: typing.Optional[tuple[float, float]] = None,
    snapshot_times: typing.Sequence[float] = (),
    keep_paths: bool = False,
    memory_budget_gib: float = 2.0,
) -> EnsembleRun:
    """
    Simulate ``n_trajectories`` trajectories from the same initial amplitude.

    Trajectory ``i`` uses ``RandomStream(base_seed, i)``.

    Parameters
    ----------
    alpha0 : complex
        Initial interaction-picture amplitude.
    params : CavityParams
        Cavity parameters.
    n_trajectories : int
        Ensemble size, >= 1.
    horizon : float
        Final time.
    grid : np.ndarray, optional
        Output times in [0, horizon]; by default 101 equidistant points.
    base_seed : int, optional
        Seed shared by all trajectory streams, by default 0.
    sampler : Sampler, optional
        Trajectory sampler, by default ``FIXED_STEP``.
    settings : StepSettings, optional
        Step length, step budget and divergence cap.
    vacuum_radius : float, optional
        Radius of the Vacuum class at the horizon, by default 0.1.
    threads : int, optional
        Dask worker threads, by default 1 (synchronous scheduler).
    block_size : int, optional
        Trajectories per block, by default 1024. Results depend on it only
        through floating-point rounding of the merged statistics.
    slope_window : tuple of float, optional
        (t_min, t_max) for per-trajectory least-squares slopes of I(t).
    snapshot_times : sequence of float, optional
        Grid times at which (and next to which) all amplitudes are kept.
    keep_paths : bool, optional
        Keep every amplitude path. Dropped with a warning if the paths would
        exceed the memory budget.
    memory_budget_gib : float, optional
        Upper bound on the memory used for kept paths, further capped by the
        available system memory.

    Returns
    -------
    EnsembleRun
    """
    if n_trajectories < 1:
        raise ValueError(f"n_trajectories must be >= 1, got {n_trajectories}")
    if not np.isfinite(complex(alpha0)):
        raise ValueError(f"initial amplitude must be finite, got {alpha0}")
    if vacuum_radius <= 0:
        raise ValueError("vacuum_radius must be positive")
    grid = check_grid(uniform_grid(horizon, 101) if grid is None else grid)
    if grid[-1] > horizon:
        raise ValueError("output grid extends beyond the horizon")
    if slope_window is not None:
        t_min, t_max = slope_window
        if np.count_nonzero((grid >= t_min) & (grid <= t_max)) < 2:
            raise ValueError(f"slope window {slope_window} holds fewer than 2 grid points")
        slope_window = (float(t_min), float(t_max))

    snapshot_indices = set()
    for t in snapshot_times:
        k = int(np.argmin(np.abs(grid - t)))
        if not np.isclose(grid[k], t):
            raise ValueError(f"snapshot time {t} is not on the output grid")
        snapshot_indices.update(ix for ix in (k - 1, k, k + 1) if 0 <= ix < grid.size)
    snapshot_indices = tuple(sorted(snapshot_indices))

    if keep_paths:
        needed = n_trajectories * grid.size * np.dtype(complex).itemsize
        budget = _memory_budget(memory_budget_gib)
        if needed > budget:
            logger.warning(
                f"Keeping {n_trajectories} paths needs {needed / 2**30:.2f} GiB, "
                f"more than the budget of {budget / 2**30:.2f} GiB; "
                "only streaming statistics are kept"
            )
            keep_paths = False

    sampler = Sampler(sampler)
    options = _BlockOptions(
        statistics=True,
        slope_window=slope_window,
        snapshot_indices=snapshot_indices,
        keep_paths=keep_paths,
        vacuum_radius=vacuum_radius,
    )
    start = time.time()
    merged = _run_blocks(
        np.full(n_trajectories, complex(alpha0)),
        np.arange(n_trajectories),
        params,
        grid,
        sampler,
        settings,
        base_seed,
        options,
        threads,
        block_size,
    )
    logger.info(f"Ensemble of {n_trajectories} done in {time.time() - start:.2f} s")
    if merged.halted.any():
        logger.warning(
            f"{int(merged.halted[-1])} trajectories halted at the divergence cap "
            f"|alpha|^2={settings.divergence_cap:g}; their frozen values enter the "
            "ensemble statistics from the halt onwards"
        )

    return EnsembleRun(
        params=params,
        alpha0=complex(alpha0),
        grid=grid,
        base_seed=int(base_seed),
        sampler=sampler,
        settings=settings,
        vacuum_radius=float(vacuum_radius),
        n_trajectories=int(n_trajectories),
        photons=merged.photons,
        counts=merged.counts,
        detected=merged.detected,
        n_halted=merged.halted,
        status=merged.status.astype(str),
        classes=merged.classes.astype(str),
        time_average=merged.time_average,
        first_emission=merged.first_emission,
        n_emissions=merged.n_emissions,
        slope_window=slope_window,
        slopes=merged.slopes,
        snapshot_indices=snapshot_indices,
        snapshots=merged.snapshots,
        paths=merged.paths,
    )


def run_ensemble(
    alpha0: complex,
    params: CavityParams,
    n_trajectories: int,
    horizon: float,
    grid: typing.Optional[np.ndarray] = None,
    base_seed: int = 0,
    **kwargs,
) -> xr.Dataset:
    """
    Ensemble photon statistics I(t) = kappa <|alpha|^2> with standard errors.

    Keyword arguments are passed on to :py:func:`simulate_ensemble`.

    Returns
    -------
    xarray.Dataset
        Dataset of type ``ensemble_series``.
    """
    return simulate_ensemble(
        alpha0, params, n_trajectories, horizon, grid=grid, base_seed=base_seed, **kwargs
    ).series()


def chi_probe(
    alpha0s: typing.Sequence[complex],
    params: CavityParams,
    n_per_cell: int,
    horizon: float,
    vacuum_radius: float = 0.1,
    base_seed: int = 0,
    sampler: Sampler = Sampler.WAITING_TIME,
    settings: StepSettings = StepSettings(),
    threads: int = 1,
    block_size: int = 1024,
) -> xr.Dataset:
    """
    Probability chi of reaching the vacuum by ``horizon``, per initial amplitude.

    Trajectory ``i`` of cell ``c`` uses stream index ``c * n_per_cell + i``.
    Undecided trajectories count as not having reached the vacuum; their
    fraction is reported separately.

    Returns
    -------
    xarray.Dataset
        Dataset of type ``chi_map`` with one entry per cell.
    """
    if params.mode is not DriveMode.FEEDBACK:
        raise ValueError("chi is only defined for the feedback cavity")
    if vacuum_radius <= 0:
        raise ValueError("vacuum_radius must be positive")
    if n_per_cell < 1:
        raise ValueError(f"n_per_cell must be >= 1, got {n_per_cell}")
    cells = np.atleast_1d(np.asarray(alpha0s, dtype=complex))
    if not np.all(np.isfinite(cells)):
        raise ValueError("initial amplitudes must be finite")
    sampler = Sampler(sampler)
    merged = _run_blocks(
        np.repeat(cells, n_per_cell),
        np.arange(cells.size * n_per_cell),
        params,
        uniform_grid(horizon, 2),
        sampler,
        settings,
        base_seed,
        _BlockOptions(statistics=False, vacuum_radius=vacuum_radius),
        threads,
        block_size,
    )
    classes = merged.classes.astype(str).reshape(cells.size, n_per_cell)
    chi = np.mean(classes == TrajectoryClass.VACUUM.value, axis=1)
    undecided = np.mean(classes == TrajectoryClass.UNDECIDED.value, axis=1)
    return xr.Dataset(
        data_vars={
            "chi": (("cell",), chi),
            "count": (("cell",), np.full(cells.size, n_per_cell, dtype=np.int64)),
            "undecided_fraction": (("cell",), undecided),
            "stderr": (("cell",), np.sqrt(chi * (1.0 - chi) / n_per_cell)),
        },
        coords={
            "re_alpha0": (("cell",), cells.real),
            "im_alpha0": (("cell",), cells.imag),
        },
        attrs={
            "type": "chi_map",
            "horizon": float(horizon),
            "vacuum_radius": float(vacuum_radius),
            "base_seed": int(base_seed),
            "sampler": sampler.value,
        },
    )


def chi_map(
    params: CavityParams,
    n_per_cell: int,
    horizon: float,
    re_range: tuple[float, float] = (-3.0, 3.0),
    im_range: tuple[float, float] = (-3.0, 3.0),
    spacing: float = 0.1,
    vacuum_radius: float = 0.1,
    base_seed: int = 0,
    **kwargs,
) -> xr.Dataset:
    """
    :py:func:`chi_probe` over a rectangular lattice of initial amplitudes.

    Cells are ordered with the real part outermost. Keyword arguments are
    passed on to :py:func:`chi_probe`.
    """
    re = lattice(re_range[0], re_range[1], spacing)
    im = lattice(im_range[0], im_range[1], spacing)
    re_mesh, im_mesh = np.meshgrid(re, im, indexing="ij")
    cells = (re_mesh + 1j * im_mesh).ravel()
    logger.info(f"Chi map over {re.size} x {im.size} cells, {n_per_cell} per cell")
    return chi_probe(
        cells,
        params,
        n_per_cell,
        horizon,
        vacuum_radius=vacuum_radius,
        base_seed=base_seed,
        **kwargs,
    )


def ergodicity_report(
    alpha0: complex,
    params: CavityParams,
    n_trajectories: int,
    horizon: float,
    grid: typing.Optional[np.ndarray] = None,
    base_seed: int = 0,
    rtol: float = 0.1,
    atol: float = 0.1,
    **kwargs,
) -> xr.Dataset:
    """
    Compare per-trajectory time averages of |alpha|^2 with the ensemble
    average at the horizon.

    The verdict is "ergodic" when the spread (max - min) of the time averages
    is at most ``rtol * |mean time average| + atol``, "non-ergodic"
    otherwise. The largest deviation from the ensemble average is reported
    alongside.

    Returns
    -------
    xarray.Dataset
        Dataset of type ``ergodicity_report``.
    """
    run = simulate_ensemble(
        alpha0, params, n_trajectories, horizon, grid=grid, base_seed=base_seed, **kwargs
    )
    averages = run.time_average
    ensemble_average = float(run.photons.mean[-1])
    spread = float(averages.max() - averages.min())
    mean_average = float(averages.mean())
    verdict = "ergodic" if spread <= rtol * abs(mean_average) + atol else "non-ergodic"
    logger.info(
        f"Time averages in [{averages.min():.6g}, {averages.max():.6g}], "
        f"ensemble average {ensemble_average:.6g}: {verdict}"
    )
    return xr.Dataset(
        data_vars={
            "time_average": (("trajectory",), averages),
            "classification": (("trajectory",), run.classes),
        },
        coords={"trajectory": np.arange(run.n_trajectories)},
        attrs={
            "type": "ergodicity_report",
            "ensemble_average": ensemble_average,
            "time_average_mean": mean_average,
            "dispersion_min": float(averages.min()),
            "dispersion_max": float(averages.max()),
            "dispersion_std": float(averages.std(ddof=1)) if averages.size > 1 else 0.0,
            "max_deviation": float(np.max(np.abs(averages - ensemble_average))),
            "verdict": verdict,
            "horizon": float(run.grid[-1]),
            "rtol": float(rtol),
            "atol": float(atol),
        },
    )


def phase_sweep(
    abs_alpha0: float,
    phases: typing.Sequence[float],
    params: CavityParams,
    n_trajectories: int,
    horizon: float,
    grid: typing.Optional[np.ndarray] = None,
    base_seed: int = 0,
    **kwargs,
) -> list[xr.Dataset]:
    """
    One ensemble series per initial phase, alpha0 = |alpha0| exp(i phi).

    All phases share ``base_seed`` and stream indices, so equal initial
    states give identical series.
    """
    if params.mode is not DriveMode.FEEDBACK:
        raise ValueError("phase sweeps are defined for the feedback cavity")
    series = []
    for phi in phases:
        ds = run_ensemble(
            abs_alpha0 * np.exp(1j * phi),
            params,
            n_trajectories,
            horizon,
            grid=grid,
            base_seed=base_seed,
            **kwargs,
        )
        ds.attrs["phase"] = float(phi)
        series.append(ds)
    return series


def beta_sweep(
    alpha0: complex,
    betas: typing.Sequence[complex],
    params: CavityParams,
    n_trajectories: int,
    horizon: float,
    grid: typing.Optional[np.ndarray] = None,
    base_seed: int = 0,
    **kwargs,
) -> list[xr.Dataset]:
    """One ensemble series per feedback displacement beta."""
    if params.mode is not DriveMode.FEEDBACK:
        raise ValueError("beta sweeps are defined for the feedback cavity")
    series = []
    for beta in betas:
        ds = run_ensemble(
            alpha0,
            dataclasses.replace(params, beta=complex(beta)),
            n_trajectories,
            horizon,
            grid=grid,
            base_seed=base_seed,
            **kwargs,
        )
        ds.attrs["beta"] = complex_to_json(beta)
        series.append(ds)
    return series


@dataclasses.dataclass(frozen=True)
class DriftReport:
    """Finite-difference dI/dt of a series against the drift of a snapshot."""

    time: float
    fd_slope: float
    predicted: float
    difference: float
    stderr: float
    residual_sigma: float
    passed: bool


def drift_check(
    series: xr.Dataset,
    snapshot: AlphaSnapshot,
    params: CavityParams,
    n_sigma: float = 3.0,
    rtol: float = 1e-2,
) -> DriftReport:
    """
    Check the ensemble drift equation at the snapshot time.

    The slope of I(t) is the difference quotient of ``series`` between the
    snapshot's neighbouring grid times; the prediction is
    :py:func:`~qjump.analytic.mean_photon_drift` of the snapshot. When the
    snapshot carries the neighbouring amplitudes of the same trajectories the
    standard error is that of the paired per-trajectory residuals, otherwise
    the errors of both sides are combined. The check passes when
    ``|difference| <= n_sigma * stderr + rtol * |predicted|``, the relative
    allowance absorbing the discretization error of the difference quotient.
    """
    times = series.time.values
    if snapshot.t_before is None or snapshot.t_after is None:
        raise ValueError("snapshot lacks neighbouring grid times")
    if snapshot.t_after <= snapshot.t_before:
        raise ValueError("snapshot neighbours must span a positive interval")
    i_b = int(np.argmin(np.abs(times - snapshot.t_before)))
    i_a = int(np.argmin(np.abs(times - snapshot.t_after)))
    width = snapshot.t_after - snapshot.t_before
    rate = series.emission_rate.values
    fd_slope = float((rate[i_a] - rate[i_b]) / width)
    predicted = mean_photon_drift(snapshot.alphas, snapshot.weights, params)
    difference = fd_slope - predicted

    paired = (
        snapshot.weights is None
        and snapshot.alphas_before is not None
        and snapshot.alphas_after is not None
        and snapshot.alphas.size > 1
    )
    if paired:
        residuals = (
            params.kappa
            * (np.abs(snapshot.alphas_after) ** 2 - np.abs(snapshot.alphas_before) ** 2)
            / width
            - drift_terms(snapshot.alphas, params)
        )
        stderr = float(residuals.std(ddof=1) / math.sqrt(residuals.size))
    else:
        err = series.stderr.values
        fd_err = math.hypot(err[i_a], err[i_b]) / width
        terms = drift_terms(snapshot.alphas, params)
        pred_err = (
            float(terms.std(ddof=1) / math.sqrt(terms.size)) if terms.size > 1 else 0.0
        )
        stderr = math.hypot(fd_err, pred_err)

    allowance = n_sigma * stderr + rtol * abs(predicted)
    if stderr > 0:
        residual_sigma = abs(difference) / stderr
    else:
        residual_sigma = 0.0 if difference == 0 else math.inf
    return DriftReport(
        time=float(snapshot.time),
        fd_slope=fd_slope,
        predicted=float(predicted),
        difference=float(difference),
        stderr=stderr,
        residual_sigma=float(residual_sigma),
        passed=bool(abs(difference) <= allowance),
    )


@dataclasses.dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    stderr: float
    t_min: float
    t_max: float
    n_trajectories: int

    @property
    def sigma(self) -> float:
        """Slope in units of its standard error."""
        return self.slope / self.stderr if self.stderr > 0 else math.copysign(math.inf, self.slope)


def late_time_slope(run: EnsembleRun, t_min: float, t_max: float) -> SlopeEstimate:
    """
    Least-squares slope of the ensemble I(t) over [t_min, t_max].

    The fit is linear in the data, so the ensemble slope is the mean of the
    per-trajectory slopes and its standard error follows from their spread.
    Needs a run simulated with ``slope_window=(t_min, t_max)`` or with
    ``keep_paths=True``.
    """
    window = (float(t_min), float(t_max))
    if run.slopes is not None and run.slope_window == window:
        slopes = run.slopes
    elif run.paths is not None:
        mask = (run.grid >= t_min) & (run.grid <= t_max)
        if np.count_nonzero(mask) < 2:
            raise ValueError(f"slope window {window} holds fewer than 2 grid points")
        tc = run.grid[mask] - run.grid[mask].mean()
        slopes = (run.params.kappa * np.abs(run.paths[:, mask]) ** 2) @ tc / np.sum(tc**2)
    else:
        raise ValueError(
            f"run has neither slopes for the window {window} nor kept paths"
        )
    n = slopes.size
    stderr = float(slopes.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SlopeEstimate(float(slopes.mean()), stderr, window[0], window[1], n)


@dataclasses.dataclass
class SeriesComparison:
    """Pointwise comparison of two photon-number series."""

    times: np.ndarray
    sample: np.ndarray
    reference: np.ndarray
    sigma: np.ndarray
    deviation_sigma: np.ndarray
    max_abs_deviation: float
    max_deviation_sigma: float
    worst_time: float
    n_sigma: float
    allowance: float
    passed: bool

    def summary(self) -> dict:
        return {
            "max_abs_deviation": self.max_abs_deviation,
            "max_deviation_sigma": self.max_deviation_sigma,
            "worst_time": self.worst_time,
            "n_points": int(self.times.size),
            "n_sigma": self.n_sigma,
            "allowance": self.allowance,
            "passed": self.passed,
        }


def compare_series(
    sample: xr.Dataset,
    reference: xr.Dataset,
    n_sigma: float = 3.0,
    allowance: float = 1e-6,
) -> SeriesComparison:
    """
    Compare <n>(t) of a trajectory ensemble with a reference series.

    A point passes when ``|sample - reference| <= n_sigma * sigma + allowance``
    where sigma is the standard error of the sample's <n>. Deviations are
    reported in units of sigma (infinite where sigma is zero and the
    deviation exceeds the allowance).
    """
    times = sample.time.values
    if times.shape != reference.time.values.shape or not np.allclose(
        times, reference.time.values, rtol=0, atol=1e-12
    ):
        raise ValueError("series are sampled on different time grids")
    kappa = float(sample.attrs.get("kappa", 1.0))
    sigma = sample.stderr.values / kappa
    diff = np.abs(sample.mean_n.values - reference.mean_n.values)
    with np.errstate(divide="ignore", invalid="ignore"):
        deviation_sigma = np.where(
            sigma > 0, diff / sigma, np.where(diff > allowance, np.inf, 0.0)
        )
    worst = int(np.argmax(deviation_sigma))
    return SeriesComparison(
        times=times,
        sample=sample.mean_n.values,
        reference=reference.mean_n.values,
        sigma=sigma,
        deviation_sigma=deviation_sigma,
        max_abs_deviation=float(diff.max()),
        max_deviation_sigma=float(deviation_sigma[worst]),
        worst_time=float(times[worst]),
        n_sigma=float(n_sigma),
        allowance=float(allowance),
        passed=bool(np.all(diff <= n_sigma * sigma + allowance)),
    )


@dataclasses.dataclass(frozen=True)
class KSComparison:
    statistic: float
    pvalue: float
    passed: bool


def ks_compare(a, b, significance: float = 0.01) -> KSComparison:
    """
    Two-sample Kolmogorov-Smirnov test; passes when the p-value exceeds
    ``significance``. NaNs (no emission) are dropped from both samples.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = a[~np.isnan(a)], b[~np.isnan(b)]
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples need at least one finite value")
    result = stats.ks_2samp(a, b)
    return KSComparison(
        float(result.statistic), float(result.pvalue), bool(result.pvalue > significance)
    )
