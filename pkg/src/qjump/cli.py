"""
``qjump`` command line: runs the simulations and writes plot-ready CSV and
JSON files.

    qjump <subcommand> [--config PATH] [--override KEY=VALUE ...] [--out DIR]
                       [--seed N] [--threads N] [--full-scale | --paper-scale]
                       [--log-level LEVEL]

Exit codes: 0 success, 1 invalid configuration, 2 runtime or physics error
(e.g. Fock truncation breach), 3 failed oracle acceptance check.
"""

import argparse
import json
import os
import sys
import typing

import numpy as np
import pandas as pd
import toolviper.utils.logger as logger

import qjump.series_xds  # noqa: F401  registers the .qjump accessor
from qjump._utils.list_and_array import complex_from_json, uniform_grid
from qjump.analytic import (
    laser_emission_rate,
    laser_photon_number_integral,
    laser_schrodinger_alpha,
)
from qjump.config import SUBCOMMANDS, RunConfig, load_config
from qjump.core import ParameterIssues, RandomStream
from qjump.ensemble import (
    beta_sweep,
    chi_map,
    chi_probe,
    compare_series,
    ergodicity_report,
    phase_sweep,
    simulate_ensemble,
)
from qjump.fock_oracle import (
    TruncationError,
    coherent_density,
    integrate,
    suggest_truncation,
)
from qjump.schema import SchemaIssues
from qjump.series_xds import write_csv
from qjump.trajectory import simulate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

_LOGGER_NAME = "qjump"


class _Outputs:
    """Collects result tables; everything is written once computing is done."""

    def __init__(self):
        self.frames: dict[str, pd.DataFrame] = {}
        self.summaries: dict[str, dict] = {}

    def write(self, out_dir: str) -> list[str]:
        paths = []
        for name, frame in self.frames.items():
            paths.append(write_csv(frame, os.path.join(out_dir, name)))
        for name, summary in self.summaries.items():
            paths.append(_write_json(summary, os.path.join(out_dir, name)))
        return paths


def _write_json(obj: dict, path: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise RuntimeError(f"could not write {path}: {exc}") from exc
    return path


def _ensemble_kwargs(config: RunConfig) -> dict:
    return dict(
        sampler=config.sampler_enum(),
        settings=config.step_settings(),
        vacuum_radius=config.vacuum_radius,
        threads=config.threads,
        block_size=config.block_size,
        memory_budget_gib=config.memory_budget_gib,
    )


def _checked(ds):
    """Return ``ds`` after raising its schema issues, if any."""
    ds.qjump.check().expect()
    return ds


def _series_frame(ds, extra: typing.Optional[dict] = None) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "t": ds.time.values,
            "I": ds.emission_rate.values,
            "stderr": ds.stderr.values,
        }
    )
    for key, value in (extra or {}).items():
        frame.insert(0, key, value)
    return frame


def laser_run(config: RunConfig) -> tuple[_Outputs, int]:
    """Phase-space spiral and emission rate of the laser-driven cavity."""
    params = config.cavity_params()
    alpha0 = config.alpha0_complex
    grid = config.grid()
    outputs = _Outputs()

    spiral_t = uniform_grid(config.horizon, 10 * (config.n_grid - 1) + 1)
    alpha_s = laser_schrodinger_alpha(spiral_t, alpha0, params)
    outputs.frames["spiral.csv"] = pd.DataFrame(
        {"t": spiral_t, "re_alpha_S": alpha_s.real, "im_alpha_S": alpha_s.imag}
    )

    run = simulate_ensemble(
        alpha0,
        params,
        config.n_trajectories,
        config.horizon,
        grid=grid,
        base_seed=config.base_seed,
        **_ensemble_kwargs(config),
    )
    series = _checked(run.series())
    widths = np.diff(grid, prepend=np.nan)
    binned = np.full(grid.size, np.nan)
    binned[1:] = (
        params.kappa
        * laser_photon_number_integral(grid[:-1], grid[1:], alpha0, params)
        / widths[1:]
    )
    outputs.frames["emission_rate.csv"] = pd.DataFrame(
        {
            "t": grid,
            "I_analytic": laser_emission_rate(grid, alpha0, params),
            "I_montecarlo": series.emission_rate.values,
            "stderr": series.stderr.values,
            "I_counted": series.counted_rate.values,
            "I_counted_stderr": series.counted_stderr.values,
            "I_analytic_bin": binned,
        }
    )
    return outputs, EXIT_OK


def feedback_run(config: RunConfig) -> tuple[_Outputs, int]:
    """Sample paths, ensemble I(t) and optional beta and phase sweeps."""
    params = config.cavity_params()
    alpha0 = config.alpha0_complex
    grid = config.grid()
    settings = config.step_settings()
    outputs = _Outputs()

    paths, events, magnitudes = [], [], {"t": grid}
    for ix in range(config.n_displayed):
        traj = simulate(
            alpha0,
            config.horizon,
            params,
            RandomStream(config.base_seed, ix),
            grid=grid,
            sampler=config.sampler_enum(),
            settings=settings,
        )
        alpha_s = traj.to_schrodinger(params)
        paths.append(
            pd.DataFrame(
                {
                    "trajectory_index": ix,
                    "t": traj.times,
                    "re_alpha": traj.alphas.real,
                    "im_alpha": traj.alphas.imag,
                    "re_alpha_S": alpha_s.real,
                    "im_alpha_S": alpha_s.imag,
                }
            )
        )
        events.append(
            pd.DataFrame(
                {
                    "trajectory_index": ix,
                    "t_emit": traj.emission_times,
                    "detected": np.array([ev.detected for ev in traj.events], dtype=int),
                }
            )
        )
        # halted trajectories end early; the rest of the column stays nan
        column = np.full(grid.size, np.nan)
        on_grid = np.isin(traj.times, grid)
        column[: np.count_nonzero(on_grid)] = np.abs(traj.alphas[on_grid])
        magnitudes[f"abs_alpha_{ix}"] = column
        logger.info(f"Displayed trajectory {ix}: {traj.terminal_status.value}")

    columns = ["trajectory_index", "t", "re_alpha", "im_alpha", "re_alpha_S", "im_alpha_S"]
    outputs.frames["trajectories.csv"] = (
        pd.concat(paths, ignore_index=True) if paths else pd.DataFrame(columns=columns)
    )
    outputs.frames["events.csv"] = (
        pd.concat(events, ignore_index=True)
        if events
        else pd.DataFrame(columns=["trajectory_index", "t_emit", "detected"])
    )
    outputs.frames["magnitudes.csv"] = pd.DataFrame(magnitudes)

    run = simulate_ensemble(
        alpha0,
        params,
        config.n_trajectories,
        config.horizon,
        grid=grid,
        base_seed=config.base_seed,
        **_ensemble_kwargs(config),
    )
    series = _checked(run.series())
    frame = _series_frame(series)
    frame["n_halted"] = series.n_halted.values
    outputs.frames["ensemble.csv"] = frame
    logger.info(f"Classes at the horizon: {run.class_fractions()}")

    common = dict(grid=grid, base_seed=config.base_seed, **_ensemble_kwargs(config))
    if config.beta_list:
        betas = [complex_from_json(b) for b in config.beta_list]
        sweep = beta_sweep(alpha0, betas, params, config.n_trajectories, config.horizon, **common)
        outputs.frames["beta_sweep.csv"] = pd.concat(
            [
                _series_frame(ds, {"im_beta": beta.imag, "re_beta": beta.real})
                for beta, ds in zip(betas, map(_checked, sweep))
            ],
            ignore_index=True,
        )
    if config.phase_list:
        sweep = phase_sweep(
            abs(alpha0), config.phase_list, params, config.n_trajectories, config.horizon, **common
        )
        outputs.frames["phase_sweep.csv"] = pd.concat(
            [
                _series_frame(ds, {"phase": ds.attrs["phase"]})
                for ds in map(_checked, sweep)
            ],
            ignore_index=True,
        )
    return outputs, EXIT_OK


def chi_map_run(config: RunConfig) -> tuple[_Outputs, int]:
    """Probability of reaching the vacuum per initial amplitude."""
    params = config.cavity_params()
    kwargs = dict(
        vacuum_radius=config.vacuum_radius,
        base_seed=config.base_seed,
        sampler=config.sampler_enum(),
        settings=config.step_settings(),
        threads=config.threads,
        block_size=config.block_size,
    )
    if config.chi_cells:
        cells = [complex_from_json(c) for c in config.chi_cells]
        ds = chi_probe(cells, params, config.n_per_cell, config.horizon, **kwargs)
    else:
        ds = chi_map(
            params,
            config.n_per_cell,
            config.horizon,
            re_range=tuple(config.chi_re_range),
            im_range=tuple(config.chi_im_range),
            spacing=config.chi_spacing,
            **kwargs,
        )
    outputs = _Outputs()
    outputs.frames["chi.csv"] = _checked(ds).qjump.to_frame(
        ["re_alpha0", "im_alpha0", "chi", "count", "undecided_fraction", "stderr"]
    )
    return outputs, EXIT_OK


def oracle_check(config: RunConfig) -> tuple[_Outputs, int]:
    """Trajectory ensemble against the master equation; feedback starts at alpha0=2."""
    params = config.cavity_params()
    alpha0 = config.alpha0_complex
    grid = config.grid()

    n_max = config.oracle_truncation
    if n_max is None:
        n_max = suggest_truncation(
            alpha0,
            params,
            config.horizon,
            base_seed=config.base_seed,
            settings=config.step_settings(),
        )
    logger.info(f"Oracle truncation N={n_max}")
    oracle = integrate(
        coherent_density(alpha0, n_max),
        params,
        config.horizon,
        dt=config.oracle_dt,
        grid=grid,
        keep_states=False,
    )
    oracle.alpha0 = alpha0
    reference = _checked(oracle.series())

    sample = simulate_ensemble(
        alpha0,
        params,
        config.n_trajectories,
        config.horizon,
        grid=grid,
        base_seed=config.base_seed,
        **_ensemble_kwargs(config),
    ).series()
    sample.qjump.check().expect()
    comparison = compare_series(
        sample,
        reference,
        n_sigma=config.acceptance_sigma,
        allowance=config.truncation_allowance,
    )

    outputs = _Outputs()
    outputs.frames["paired.csv"] = pd.DataFrame(
        {
            "t": grid,
            "mean_n_trajectory": comparison.sample,
            "stderr_n": comparison.sigma,
            "mean_n_oracle": comparison.reference,
            "deviation_sigma": comparison.deviation_sigma,
        }
    )
    summary = comparison.summary()
    summary.update(
        {
            "mode": params.mode.value,
            "truncation": int(n_max),
            "n_trajectories": int(config.n_trajectories),
            "max_trace_drift": float(np.max(np.abs(oracle.trace - 1.0))),
        }
    )
    outputs.summaries["oracle_summary.json"] = summary
    if comparison.passed:
        logger.info(
            f"Oracle check passed: max deviation {comparison.max_deviation_sigma:.3g} sigma"
        )
        return outputs, EXIT_OK
    logger.error(
        f"Oracle check failed: deviation {comparison.max_deviation_sigma:.3g} sigma "
        f"at t={comparison.worst_time:g}"
    )
    return outputs, EXIT_ACCEPTANCE


def ergodicity_run(config: RunConfig) -> tuple[_Outputs, int]:
    """Per-trajectory time averages against the ensemble average."""
    report = ergodicity_report(
        config.alpha0_complex,
        config.cavity_params(),
        config.n_trajectories,
        config.horizon,
        grid=config.grid(),
        base_seed=config.base_seed,
        rtol=config.ergodic_rtol,
        atol=config.ergodic_atol,
        **_ensemble_kwargs(config),
    )
    outputs = _Outputs()
    outputs.frames["time_averages.csv"] = _checked(report).qjump.to_frame(
        ["trajectory", "time_average", "classification"]
    )
    summary = {k: v for k, v in report.attrs.items() if k != "type"}
    summary["n_trajectories"] = int(report.sizes["trajectory"])
    outputs.summaries["ergodicity.json"] = summary
    return outputs, EXIT_OK


_RUNNERS = {
    "laser-run": laser_run,
    "feedback-run": feedback_run,
    "chi-map": chi_map_run,
    "oracle-check": oracle_check,
    "ergodicity": ergodicity_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qjump",
        description="Quantum-trajectory simulation of a damped optical cavity.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=_RUNNERS[name].__doc__)
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override a config field; VALUE is parsed as JSON (repeatable)",
        )
        p.add_argument("--out", dest="out_dir", help="Output directory")
        p.add_argument("--seed", dest="base_seed", type=int, help="Base seed")
        p.add_argument("--threads", type=int, help="Worker threads")
        p.add_argument(
            "--full-scale",
            "--paper-scale",
            dest="full_scale",
            action="store_true",
            default=None,
            help="Use 10^6 trajectories and 10^4 per chi cell",
        )
        p.add_argument(
            "--log-level",
            default="INFO",
            choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        )
    return parser


def _setup_logging(level: str):
    if os.getenv("VIPER_LOGGER_NAME") != _LOGGER_NAME:
        os.environ["VIPER_LOGGER_NAME"] = _LOGGER_NAME
        logger.setup_logger(
            logger_name=_LOGGER_NAME,
            log_to_term=True,
            log_to_file=False,
            log_file="qjump-logfile",
            log_level=level,
        )


def run(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)

    try:
        config = load_config(
            args.subcommand,
            path=args.config,
            overrides=args.override,
            out_dir=args.out_dir,
            base_seed=args.base_seed,
            threads=args.threads,
            full_scale=args.full_scale,
        )
    except ParameterIssues as issues:
        logger.error(f"Invalid configuration:{issues}")
        return EXIT_CONFIG
    except RuntimeError as exc:
        logger.error(str(exc))
        return EXIT_CONFIG

    try:
        os.makedirs(config.out_dir, exist_ok=True)
        _write_json(config.to_dict(), os.path.join(config.out_dir, "run_config.json"))
        logger.info(f"Running {args.subcommand}, output in {config.out_dir}")
        outputs, status = _RUNNERS[args.subcommand](config)
        for path in outputs.write(config.out_dir):
            logger.info(f"Wrote {path}")
    except ParameterIssues as issues:
        logger.error(f"Invalid parameters:{issues}")
        return EXIT_CONFIG
    except TruncationError as exc:
        logger.error(f"Truncation breach: {exc}")
        return EXIT_RUNTIME
    except SchemaIssues as issues:
        logger.error(f"{args.subcommand} produced an invalid dataset:{issues}")
        return EXIT_RUNTIME
    except (RuntimeError, ValueError, OSError) as exc:
        logger.error(f"{args.subcommand} failed: {exc}")
        return EXIT_RUNTIME
    return status


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
