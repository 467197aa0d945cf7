"""Undecided-state dynamics: simulators, exact chains, phase analysis and bounds."""

from udyn.core import (
    Configuration,
    Outcome,
    StepDecomposition,
    Trajectory,
    expected_next,
    is_absorbing,
    run_many,
    run_until_absorbed,
    step,
    step_decomposed,
)
from udyn.exact import AbsorptionReport, TransitionKernel, absorption, build_kernel
from udyn.phases import Label, PhaseParameters, Region, allowed_digraph, audit_trajectory, classify
from udyn.rng import RandomSource

__version__ = "0.1.0"

__all__ = [
    "AbsorptionReport",
    "Configuration",
    "Label",
    "Outcome",
    "PhaseParameters",
    "RandomSource",
    "Region",
    "StepDecomposition",
    "Trajectory",
    "TransitionKernel",
    "absorption",
    "allowed_digraph",
    "audit_trajectory",
    "build_kernel",
    "classify",
    "expected_next",
    "is_absorbing",
    "run_many",
    "run_until_absorbed",
    "step",
    "step_decomposed",
]
