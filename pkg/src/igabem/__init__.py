"""Adaptive isogeometric Galerkin BEM for Symm's integral equation in 2D.

The discrete ansatz spaces are NURBS on a closed or open curve.  An
``H^{1/2}`` seminorm estimator of the residual drives adaptive refinement
that both bisects elements and raises knot multiplicities.
"""
from .adaptivity import MarkingDecision, RefinementError, decide_actions, doerfler_mark, refine
from .boundary import BoundaryMesh, NodePatch, check_a1_a2, shape_regularity
from .estimator import Indicators, compute_indicators, patch_seminorm_sq
from .experiments import (
    ConvergenceTable,
    ExperimentConfig,
    builtin_config,
    export,
    fit_rate,
    load_config,
    run_experiment,
)
from .operators import BoundaryData, GalerkinSystem, QuadConfig, assemble_single_layer, solve
from .splines import KnotVector, NurbsCurve

__version__ = "0.1.0"

__all__ = [
    "BoundaryData",
    "BoundaryMesh",
    "ConvergenceTable",
    "ExperimentConfig",
    "GalerkinSystem",
    "Indicators",
    "KnotVector",
    "MarkingDecision",
    "NodePatch",
    "NurbsCurve",
    "QuadConfig",
    "RefinementError",
    "assemble_single_layer",
    "builtin_config",
    "check_a1_a2",
    "compute_indicators",
    "decide_actions",
    "doerfler_mark",
    "export",
    "fit_rate",
    "load_config",
    "patch_seminorm_sq",
    "refine",
    "run_experiment",
    "shape_regularity",
    "solve",
]
