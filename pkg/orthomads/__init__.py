"""Ortho-MADS with Nelder-Mead and VNS search stages for tuning RBF SVMs."""

from orthomads.driver import TunerConfig, optimize
from orthomads.evaluation import Evaluator, Incumbent, Objective, RunTrace, Stage, TerminalReason
from orthomads.geometry import Bounds
from orthomads.nelder_mead import NmConfig
from orthomads.vns import VnsConfig

__all__ = [
    "Bounds",
    "Evaluator",
    "Incumbent",
    "NmConfig",
    "Objective",
    "RunTrace",
    "Stage",
    "TerminalReason",
    "TunerConfig",
    "VnsConfig",
    "optimize",
]
