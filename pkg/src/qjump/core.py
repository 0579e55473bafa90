"""Domain types shared by every qjump module: cavity parameters, coherent
amplitudes with their picture, and the per-trajectory random streams."""

import cmath
import dataclasses
import math
import typing
from enum import Enum

import numpy as np

__all__ = [
    "DriveMode",
    "Picture",
    "CavityParams",
    "CoherentAmplitude",
    "RandomStream",
    "ParameterIssue",
    "ParameterIssues",
    "PictureError",
    "validate",
    "to_schrodinger",
    "to_interaction",
]


class DriveMode(str, Enum):
    """How the cavity is driven between (and at) photon emissions."""

    LASER_DRIVEN = "laser_driven"
    """Continuous resonant laser with Rabi frequency omega."""
    FEEDBACK = "feedback"
    """No laser; every detected photon displaces the field by beta."""


class Picture(str, Enum):
    INTERACTION = "interaction"
    SCHRODINGER = "schrodinger"


@dataclasses.dataclass
class ParameterIssue:
    """
    A single violated parameter constraint.
    """

    field: str
    """Name of the offending field (e.g. ``eta``)."""
    message: str
    """Explanation of the issue"""
    found: typing.Optional[typing.Any] = None
    """Offending value"""
    expected: typing.Optional[str] = None
    """Human readable description of the allowed range"""

    def __repr__(self):
        err = f"Parameter issue with {self.field}: {self.message}"
        if self.expected is not None:
            err += f" (expected: {self.expected} found: {self.found!r})"
        return err


class ParameterIssues(Exception):
    """
    List of issues found while validating parameters

    Can be thrown as an exception, so that all violated fields are reported
    in one go.
    """

    issues: list[ParameterIssue]

    def __init__(self, issues=None):
        if issues is None:
            self.issues = []
        elif isinstance(issues, ParameterIssues):
            self.issues = issues.issues
        else:
            self.issues = list(issues)

    def add(self, issue: ParameterIssue):
        self.issues.append(issue)

    def __iadd__(self, other: "ParameterIssues"):
        self.issues += other.issues
        return self

    def __len__(self):
        return len(self.issues)

    def __getitem__(self, ix):
        return self.issues[ix]

    def __bool__(self):
        return bool(self.issues)

    @property
    def fields(self) -> list[str]:
        """Names of the violated fields, in the order they were found."""
        return [issue.field for issue in self.issues]

    def __str__(self):
        if not self.issues:
            return "No parameter issues found"
        issues_string = "\n * ".join(repr(issue) for issue in self.issues)
        return f"\n * {issues_string}"

    def __repr__(self):
        return f"{type(self).__name__}({str(self)})"

    def expect(self):
        """
        Raises this object if issues were found

        :raises: ParameterIssues
        """
        __tracebackhide__ = True
        if self.issues:
            raise self


class PictureError(ValueError):
    """
    Raised when an amplitude is handed over in the wrong picture.
    """

    pass


@dataclasses.dataclass(frozen=True)
class CavityParams:
    """Physical parameters of the cavity, the single source of truth for a run.

    All rates are in the same (arbitrary) inverse time unit; file outputs use
    kappa as the unit, and kappa defaults to 1.
    """

    kappa: float = 1.0
    """Cavity decay rate, > 0."""
    omega: float = 0.0
    """Rabi frequency of the driving laser, >= 0. Ignored in feedback mode."""
    eta: float = 0.0
    """Detector efficiency in [0, 1]."""
    beta: complex = 0j
    """Feedback displacement. Ignored in laser-driven mode."""
    omega_cav: float = 4.0
    """Cavity frequency, only used to rotate into the Schrodinger picture."""
    mode: DriveMode = DriveMode.FEEDBACK

    @classmethod
    def laser(
        cls, omega: float = 8.0, kappa: float = 1.0, omega_cav: float = 4.0
    ) -> "CavityParams":
        """Laser-driven cavity, by default with the Omega = 8 kappa of the
        phase-space spiral and emission-rate figures."""
        return cls(
            kappa=kappa,
            omega=omega,
            eta=0.0,
            beta=0j,
            omega_cav=omega_cav,
            mode=DriveMode.LASER_DRIVEN,
        )

    @classmethod
    def feedback(
        cls,
        beta: complex = 2.0,
        eta: float = 0.5,
        kappa: float = 1.0,
        omega_cav: float = 4.0,
    ) -> "CavityParams":
        """Feedback cavity, by default with beta = 2 and eta = 0.5."""
        return cls(
            kappa=kappa,
            omega=0.0,
            eta=eta,
            beta=complex(beta),
            omega_cav=omega_cav,
            mode=DriveMode.FEEDBACK,
        )

    @property
    def is_feedback(self) -> bool:
        return self.mode is DriveMode.FEEDBACK

    def checked(self) -> "CavityParams":
        """Return self, raising :py:class:`ParameterIssues` if invalid."""
        validate(self).expect()
        return self


@dataclasses.dataclass(frozen=True)
class CoherentAmplitude:
    """The full state of a trajectory: one coherent-state label alpha."""

    value: complex
    picture: Picture = Picture.INTERACTION

    def __abs__(self) -> float:
        return abs(self.value)


@dataclasses.dataclass(frozen=True)
class RandomStream:
    """
    Identity of the random stream owned by one trajectory.

    The stream is counter based (Philox) and keyed by
    ``SeedSequence(base_seed, spawn_key=(stream_index,))``, so equal
    ``(base_seed, stream_index)`` pairs always replay the same draws and
    distinct indices are independent, whatever thread evaluates them.
    """

    base_seed: int
    stream_index: int

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            int(self.base_seed), spawn_key=(int(self.stream_index),)
        )

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def uniforms(self, n: int) -> np.ndarray:
        """The first ``n`` uniform draws on [0, 1) of this stream."""
        return self.generator().random(n)


def validate(params: CavityParams) -> ParameterIssues:
    """
    Check a :py:class:`CavityParams` against its invariants.

    Parameters
    ----------
    params : CavityParams
        Parameters to check.

    Returns
    -------
    ParameterIssues
        Empty if the parameters are valid, otherwise one issue per violated
        field.
    """

    issues = ParameterIssues()

    def _real(name, val, expected, ok):
        if not isinstance(val, (int, float, np.integer, np.floating)) or isinstance(
            val, bool
        ):
            issues.add(
                ParameterIssue(name, "not a real number", found=val, expected=expected)
            )
        elif not math.isfinite(val) or not ok(val):
            issues.add(
                ParameterIssue(name, "out of range", found=val, expected=expected)
            )

    _real("kappa", params.kappa, "finite kappa > 0", lambda v: v > 0)
    _real("omega", params.omega, "finite omega >= 0", lambda v: v >= 0)
    _real("eta", params.eta, "0 <= eta <= 1", lambda v: 0 <= v <= 1)
    _real("omega_cav", params.omega_cav, "finite omega_cav", lambda v: True)

    try:
        beta = complex(params.beta)
        if not cmath.isfinite(beta):
            issues.add(
                ParameterIssue(
                    "beta", "not finite", found=params.beta, expected="finite complex"
                )
            )
    except (TypeError, ValueError):
        issues.add(
            ParameterIssue(
                "beta", "not a complex number", found=params.beta, expected="complex"
            )
        )

    if not isinstance(params.mode, DriveMode):
        issues.add(
            ParameterIssue(
                "mode",
                "unknown drive mode",
                found=params.mode,
                expected=" or ".join(m.value for m in DriveMode),
            )
        )

    return issues


def _rotation(t: float, params: CavityParams) -> complex:
    return cmath.exp(-1j * params.omega_cav * t)


def to_schrodinger(
    alpha: CoherentAmplitude, t: float, params: CavityParams
) -> CoherentAmplitude:
    """
    Rotate an interaction-picture amplitude into the Schrodinger picture,
    alpha_S = alpha_I exp(-i omega_cav t).

    Raises
    ------
    PictureError
        If ``alpha`` is not in the interaction picture.
    """
    if alpha.picture is not Picture.INTERACTION:
        raise PictureError(
            f"to_schrodinger expects an interaction-picture amplitude, got {alpha.picture.value}"
        )
    return CoherentAmplitude(
        complex(alpha.value) * _rotation(t, params), Picture.SCHRODINGER
    )


def to_interaction(
    alpha: CoherentAmplitude, t: float, params: CavityParams
) -> CoherentAmplitude:
    """
    Inverse of :py:func:`to_schrodinger`.
    """
    if alpha.picture is not Picture.SCHRODINGER:
        raise PictureError(
            f"to_interaction expects a Schrodinger-picture amplitude, got {alpha.picture.value}"
        )
    return CoherentAmplitude(
        complex(alpha.value) / _rotation(t, params), Picture.INTERACTION
    )
