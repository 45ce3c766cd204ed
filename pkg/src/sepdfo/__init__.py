"""Derivative-free trust-region optimization for partially separable objectives.

Define the objective as a sum of low-dimensional element functions (plus an
optional analytic part), hand it to :func:`minimize`, and read the result off
the returned :class:`RunRecord`. Each element gets its own interpolation
model and trust radius; steps are computed inside the resulting cylinder
region, so cheap elements never pay for expensive ones.
"""

from .driver import (
    CallbackInfo,
    RunRecord,
    SolverOptions,
    minimize,
)
from .problem import (
    ElementSpec,
    EvaluationLedger,
    ProblemSpec,
    Transform,
    Whitebox,
    evaluate_full,
    problem_from_dict,
    problem_from_file,
    project_point,
)
from .radius import RadiusConfig

__version__ = "0.1.0"

__all__ = [
    "minimize",
    "SolverOptions",
    "RunRecord",
    "CallbackInfo",
    "ProblemSpec",
    "ElementSpec",
    "Transform",
    "Whitebox",
    "EvaluationLedger",
    "RadiusConfig",
    "evaluate_full",
    "project_point",
    "problem_from_dict",
    "problem_from_file",
    "__version__",
]
