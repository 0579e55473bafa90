"""Run configuration of the ``qjump`` command line: one flat dataclass whose
fields are the JSON config keys, with per-subcommand defaults."""

import dataclasses
import json
import os
import typing

import numpy as np
from typeguard import TypeCheckError, check_type

from qjump._utils.list_and_array import complex_from_json, uniform_grid
from qjump.core import CavityParams, DriveMode, ParameterIssue, ParameterIssues, validate
from qjump.trajectory import Sampler, StepSettings

__all__ = [
    "ConfigIssues",
    "RunConfig",
    "SUBCOMMANDS",
    "SUBCOMMAND_DEFAULTS",
    "FULL_SCALE",
    "load_config",
    "parse_override",
]

ComplexLike = typing.Union[float, list[float], str]


class ConfigIssues(ParameterIssues):
    """
    Issues found while reading a run configuration.
    """

    def __str__(self):
        if not self.issues:
            return "No config issues found"
        return super().__str__()


@dataclasses.dataclass
class RunConfig:
    """Every knob of a ``qjump`` run. Times are in units of 1/kappa."""

    mode: str = "feedback"
    """``laser_driven`` or ``feedback``."""
    kappa: float = 1.0
    omega: float = 8.0
    eta: float = 0.5
    beta: ComplexLike = 2.0
    """Feedback displacement, a number or ``[re, im]``."""
    omega_cav: float = 4.0
    alpha0: ComplexLike = 2.0
    """Initial amplitude, a number or ``[re, im]``."""
    n_trajectories: int = 10_000
    horizon: float = 10.0
    n_grid: int = 101
    """Points of the equidistant output grid over [0, horizon]."""
    base_seed: int = 0
    sampler: str = "auto"
    """``auto``, ``fixed_step`` or ``waiting_time``; ``auto`` picks the
    waiting-time sampler for chi maps and the fixed-step sampler otherwise."""
    dt: float = 1e-3
    step_budget: float = 0.05
    vacuum_radius: float = 0.1
    divergence_cap: float = 1e4
    divergence_fraction: float = 0.01
    threads: int = 1
    block_size: int = 1024
    memory_budget_gib: float = 2.0
    n_displayed: int = 10
    """Trajectories written out individually by feedback-run."""
    beta_list: list[ComplexLike] = dataclasses.field(default_factory=list)
    phase_list: list[float] = dataclasses.field(default_factory=list)
    chi_re_range: list[float] = dataclasses.field(default_factory=lambda: [-3.0, 3.0])
    chi_im_range: list[float] = dataclasses.field(default_factory=lambda: [-3.0, 3.0])
    chi_spacing: float = 0.1
    chi_cells: list[ComplexLike] = dataclasses.field(default_factory=list)
    """Explicit initial amplitudes for chi-map; the lattice is used when empty."""
    n_per_cell: int = 1000
    oracle_truncation: typing.Optional[int] = None
    """Fock truncation N for oracle-check; chosen automatically when null."""
    oracle_dt: float = 1e-3
    acceptance_sigma: float = 3.0
    truncation_allowance: float = 1e-6
    ergodic_rtol: float = 0.1
    ergodic_atol: float = 0.1
    full_scale: bool = False
    out_dir: str = "qjump_out"

    @property
    def drive_mode(self) -> DriveMode:
        return DriveMode(self.mode)

    @property
    def alpha0_complex(self) -> complex:
        return complex_from_json(self.alpha0)

    @property
    def beta_complex(self) -> complex:
        return complex_from_json(self.beta)

    def cavity_params(self) -> CavityParams:
        if self.drive_mode is DriveMode.LASER_DRIVEN:
            return CavityParams.laser(
                omega=self.omega, kappa=self.kappa, omega_cav=self.omega_cav
            )
        return CavityParams.feedback(
            beta=self.beta_complex,
            eta=self.eta,
            kappa=self.kappa,
            omega_cav=self.omega_cav,
        )

    def step_settings(self) -> StepSettings:
        return StepSettings(
            dt=self.dt,
            step_budget=self.step_budget,
            divergence_cap=self.divergence_cap,
            divergence_fraction=self.divergence_fraction,
        )

    def sampler_enum(self) -> Sampler:
        return Sampler(self.sampler)

    def grid(self) -> np.ndarray:
        return uniform_grid(self.horizon, self.n_grid)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def validate(self) -> ConfigIssues:
        """Types (via typeguard) and value ranges of every field."""
        issues = ConfigIssues()
        hints = typing.get_type_hints(RunConfig)
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, bool) and hints[field.name] is not bool:
                issues.add(
                    ParameterIssue(field.name, "boolean not allowed", found=value)
                )
                continue
            try:
                check_type(value, hints[field.name])
            except TypeCheckError as t:
                issues.add(
                    ParameterIssue(
                        field.name, str(t), found=value, expected=str(hints[field.name])
                    )
                )
        if issues:
            return issues

        def _require(name, ok, expected):
            if not ok:
                issues.add(
                    ParameterIssue(
                        name, "out of range", found=getattr(self, name), expected=expected
                    )
                )

        _require("mode", self.mode in {m.value for m in DriveMode}, "laser_driven or feedback")
        _require(
            "sampler",
            self.sampler in {"auto"} | {s.value for s in Sampler},
            "auto, fixed_step or waiting_time",
        )
        _require("n_trajectories", self.n_trajectories >= 1, ">= 1")
        _require("horizon", self.horizon > 0, "> 0")
        _require("n_grid", self.n_grid >= 2, ">= 2")
        _require("dt", self.dt > 0, "> 0")
        _require("step_budget", 0 < self.step_budget <= 0.05, "in (0, 0.05]")
        _require("vacuum_radius", self.vacuum_radius > 0, "> 0")
        _require("divergence_cap", self.divergence_cap > 0, "> 0")
        _require("divergence_fraction", 0 < self.divergence_fraction <= 1, "in (0, 1]")
        _require("threads", self.threads >= 1, ">= 1")
        _require("block_size", self.block_size >= 1, ">= 1")
        _require("memory_budget_gib", self.memory_budget_gib > 0, "> 0")
        _require("n_displayed", self.n_displayed >= 0, ">= 0")
        _require("n_per_cell", self.n_per_cell >= 1, ">= 1")
        _require("chi_spacing", self.chi_spacing > 0, "> 0")
        for name in ("chi_re_range", "chi_im_range"):
            rng = getattr(self, name)
            _require(name, len(rng) == 2 and rng[0] <= rng[1], "[lo, hi] with lo <= hi")
        _require(
            "oracle_truncation",
            self.oracle_truncation is None or self.oracle_truncation >= 1,
            "null or >= 1",
        )
        _require(
            "oracle_dt",
            self.oracle_dt > 0 and self.kappa * self.oracle_dt <= 1e-2,
            "kappa*dt in (0, 1e-2]",
        )
        _require("acceptance_sigma", self.acceptance_sigma > 0, "> 0")
        _require("truncation_allowance", self.truncation_allowance >= 0, ">= 0")
        for name in ("alpha0", "beta"):
            try:
                complex_from_json(getattr(self, name))
            except (TypeError, ValueError):
                issues.add(
                    ParameterIssue(name, "not a complex number", found=getattr(self, name))
                )
        for ix, value in enumerate(self.beta_list + self.chi_cells):
            try:
                complex_from_json(value)
            except (TypeError, ValueError):
                issues.add(
                    ParameterIssue(
                        "beta_list" if ix < len(self.beta_list) else "chi_cells",
                        "not a complex number",
                        found=value,
                    )
                )
        if issues:
            return issues

        for issue in validate(self.cavity_params()):
            issues.add(issue)
        return issues


SUBCOMMAND_DEFAULTS = {
    "laser-run": {"mode": "laser_driven", "omega": 8.0, "alpha0": 0.0, "horizon": 10.0},
    "feedback-run": {
        "mode": "feedback",
        "beta": 2.0,
        "eta": 0.5,
        "alpha0": 2.0,
        "horizon": 10.0,
    },
    "chi-map": {"mode": "feedback", "beta": 2.0, "eta": 0.5, "horizon": 10.0},
    "oracle-check": {"mode": "laser_driven", "omega": 2.0, "alpha0": 0.0, "horizon": 10.0},
    "ergodicity": {
        "mode": "laser_driven",
        "omega": 8.0,
        "alpha0": 0.0,
        "horizon": 50.0,
        "n_trajectories": 1000,
    },
}
SUBCOMMANDS = tuple(SUBCOMMAND_DEFAULTS)

# --full-scale
FULL_SCALE = {"n_trajectories": 1_000_000, "n_per_cell": 10_000}

# Subcommands that only make sense for one drive mode
_REQUIRED_MODE = {
    "laser-run": DriveMode.LASER_DRIVEN,
    "feedback-run": DriveMode.FEEDBACK,
    "chi-map": DriveMode.FEEDBACK,
}

# a feedback cavity started in the vacuum never emits
_MODE_DEFAULTS = {
    "oracle-check": {DriveMode.FEEDBACK.value: {"alpha0": 2.0}},
}


def parse_override(text: str) -> tuple[str, typing.Any]:
    """
    Parse ``key=value``. The value is decoded as JSON, falling back to the
    raw string (so ``mode=feedback`` needs no quotes).
    """
    if "=" not in text:
        raise ConfigIssues(
            [ParameterIssue("override", "expected key=value", found=text)]
        )
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _normalize(values: dict) -> dict:
    # JSON integers for float fields
    hints = typing.get_type_hints(RunConfig)
    out = dict(values)
    for key, value in values.items():
        if hints.get(key) is float and isinstance(value, int) and not isinstance(value, bool):
            out[key] = float(value)
    return out


def load_config(
    subcommand: str,
    path: typing.Optional[typing.Union[str, os.PathLike]] = None,
    overrides: typing.Sequence[str] = (),
    **explicit,
) -> RunConfig:
    """
    Resolve the configuration of a subcommand.

    Precedence, lowest first: dataclass defaults, subcommand defaults, the
    JSON file at ``path``, ``overrides`` (``key=value``), the scale-up of
    ``full_scale``, and finally ``explicit`` keyword values that are not
    ``None`` (the dedicated command-line flags).

    A feedback oracle-check starts from alpha0 = 2 unless the file or an
    override sets alpha0.

    Raises
    ------
    ConfigIssues
        On unknown keys, wrong types, out-of-range values or a drive mode the
        subcommand does not support.
    RuntimeError
        If the config file cannot be read.
    """
    if subcommand not in SUBCOMMAND_DEFAULTS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = dict(SUBCOMMAND_DEFAULTS[subcommand])
    chosen = set()
    issues = ConfigIssues()

    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except OSError as exc:
            raise RuntimeError(f"could not read config {os.fspath(path)}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigIssues(
                [ParameterIssue("config", f"invalid JSON in {os.fspath(path)}: {exc}")]
            )
        if not isinstance(from_file, dict):
            raise ConfigIssues(
                [ParameterIssue("config", "top level must be an object", found=type(from_file))]
            )
        values.update(from_file)
        chosen.update(from_file)

    for text in overrides:
        key, value = parse_override(text)
        values[key] = value
        chosen.add(key)

    mode_defaults = _MODE_DEFAULTS.get(subcommand, {}).get(str(values.get("mode")), {})
    for key, value in mode_defaults.items():
        if key not in chosen:
            values[key] = value

    if values.get("full_scale") or explicit.get("full_scale"):
        values.update(FULL_SCALE)
    values.update({k: v for k, v in explicit.items() if v is not None})

    for key in sorted(set(values) - known):
        issues.add(ParameterIssue(key, "unknown config key"))
    issues.expect()

    config = RunConfig(**_normalize(values))
    issues += config.validate()
    issues.expect()

    required = _REQUIRED_MODE.get(subcommand)
    if required is not None and config.drive_mode is not required:
        raise ConfigIssues(
            [
                ParameterIssue(
                    "mode",
                    f"{subcommand} needs a {required.value} cavity",
                    found=config.mode,
                    expected=required.value,
                )
            ]
        )
    if config.sampler == "auto":
        config.sampler = (
            Sampler.WAITING_TIME.value if subcommand == "chi-map" else Sampler.FIXED_STEP.value
        )
    if config.sampler == Sampler.WAITING_TIME.value and config.drive_mode is not DriveMode.FEEDBACK:
        raise ConfigIssues(
            [
                ParameterIssue(
                    "sampler",
                    "the waiting-time sampler needs a feedback cavity",
                    found=config.sampler,
                )
            ]
        )
    return config
