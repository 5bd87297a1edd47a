"""Obstacle-avoiding cubic splines in tension on SO(3), SE(2) and SE(3)."""

from .config import ConfigError, dump_problem, dumps_problem, load_problem, loads_problem
from .dynamics import ConstraintSpec, ExtremalModel, ExtremalState, build_model
from .geometry import Connection, ConnectionKind, covariant_chain, curvature, curvature_oracle, nabla
from .integrate import Scheme, Trajectory, integrate_segment, propagate, step
from .lie_groups import GroupElement, LogBranchError, MetricTensor, get_group
from .potentials import CompactGroupPoint, EuclideanSphere, InsideObstacle, OrientationPoint
from .shooting import (
    NoConvergence,
    ProblemSpec,
    Solution,
    SolverOptions,
    Unknowns,
    ValidationError,
    initial_guess,
    residuals,
    solve,
)
from .variational_oracle import PerturbationField, functional_J, stationarity_test

__all__ = [
    "CompactGroupPoint",
    "ConfigError",
    "Connection",
    "ConnectionKind",
    "ConstraintSpec",
    "EuclideanSphere",
    "ExtremalModel",
    "ExtremalState",
    "GroupElement",
    "InsideObstacle",
    "LogBranchError",
    "MetricTensor",
    "NoConvergence",
    "OrientationPoint",
    "PerturbationField",
    "ProblemSpec",
    "Scheme",
    "Solution",
    "SolverOptions",
    "Trajectory",
    "Unknowns",
    "ValidationError",
    "build_model",
    "covariant_chain",
    "curvature",
    "curvature_oracle",
    "dump_problem",
    "dumps_problem",
    "functional_J",
    "get_group",
    "initial_guess",
    "integrate_segment",
    "load_problem",
    "loads_problem",
    "nabla",
    "propagate",
    "residuals",
    "solve",
    "stationarity_test",
    "step",
]
