"""
Quantum-trajectory simulation of a damped optical cavity, driven either by a
resonant laser or by instantaneous feedback pulses triggered by photon
detections, with a truncated-Fock master-equation oracle.
"""

from qjump.core import (
    CavityParams,
    CoherentAmplitude,
    DriveMode,
    ParameterIssue,
    ParameterIssues,
    Picture,
    PictureError,
    RandomStream,
    to_interaction,
    to_schrodinger,
    validate,
)
from qjump.trajectory import (
    Sampler,
    StepSettings,
    StepSizeError,
    TerminalStatus,
    Trajectory,
    TrajectoryClass,
    TrajectoryEvent,
    classify,
    sample_waiting_time,
    simulate,
    step_fixed,
)
from qjump.ensemble import (
    EnsembleRun,
    chi_map,
    chi_probe,
    drift_check,
    ergodicity_report,
    phase_sweep,
    run_ensemble,
    simulate_ensemble,
)
from qjump.fock_oracle import TruncationError
from qjump.series_xds import QJumpXds

__all__ = [
    "CavityParams",
    "CoherentAmplitude",
    "DriveMode",
    "ParameterIssue",
    "ParameterIssues",
    "Picture",
    "PictureError",
    "RandomStream",
    "to_interaction",
    "to_schrodinger",
    "validate",
    "Sampler",
    "StepSettings",
    "StepSizeError",
    "TerminalStatus",
    "Trajectory",
    "TrajectoryClass",
    "TrajectoryEvent",
    "classify",
    "sample_waiting_time",
    "simulate",
    "step_fixed",
    "EnsembleRun",
    "chi_map",
    "chi_probe",
    "drift_check",
    "ergodicity_report",
    "phase_sweep",
    "run_ensemble",
    "simulate_ensemble",
    "TruncationError",
    "QJumpXds",
]
