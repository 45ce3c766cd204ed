"""Partially separable objectives, element evaluation, and evaluation accounting.

An objective is a sum of *element functions*, each depending only on a small
subset of coordinates (its index set), optionally wrapped by a scalar
transform and weighted, plus an optional analytic white-box part::

    f(x) = f0(x) + sum_i  w_i * h_i( f_i(x[I_i]) )

Element evaluations are the unit of cost; the ledger tracks per-element
counts so runs can be scored by the worst-case element count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Transform",
    "Whitebox",
    "ElementSpec",
    "ProblemSpec",
    "EvaluationLedger",
    "TRANSFORMS",
    "FORMULAS",
    "project_point",
    "evaluate_full",
    "combine_values",
    "problem_from_dict",
    "problem_from_file",
]


@dataclass(frozen=True)
class Transform:
    """Scalar map applied to an element value, with its first two derivatives."""

    value: Callable[[float], float]
    deriv: Callable[[float], float]
    deriv2: Callable[[float], float]
    name: str = "custom"


#: Named transforms usable from declarative problem files.
TRANSFORMS = {
    "identity": Transform(lambda t: t, lambda t: 1.0, lambda t: 0.0, "identity"),
    "square": Transform(lambda t: t * t, lambda t: 2.0 * t, lambda t: 2.0, "square"),
    "exp": Transform(math.exp, math.exp, math.exp, "exp"),
}


@dataclass(frozen=True)
class Whitebox:
    """Analytic part of the objective with gradient and Hessian-vector product.

    With ``cheap=False`` the solver only ever uses the value, gradient and
    Hessian-vector product at the incumbent (a local second-order expansion);
    ``cheap=True`` declares the callables inexpensive enough to be evaluated
    inside the subproblem loop directly.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hvp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cheap: bool = False


@dataclass
class ElementSpec:
    """One element function: index set, evaluator, weight, optional transform.

    ``index_set`` must be strictly increasing coordinate indices. The
    evaluator receives the projected point (a 1-D array of the element's
    coordinates, in index order) and returns a scalar.
    """

    index_set: Sequence[int]
    evaluator: Callable[[np.ndarray], float]
    weight: float = 1.0
    transform: Optional[Transform] = None

    def __post_init__(self):
        idx = np.asarray(self.index_set, dtype=int)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("index_set must be a nonempty 1-D sequence")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("index_set must be strictly increasing")
        if np.any(idx < 0):
            raise ValueError("index_set entries must be nonnegative")
        if not math.isfinite(self.weight):
            raise ValueError("element weight must be finite")
        self.index_set = idx

    @property
    def dim(self) -> int:
        return len(self.index_set)

    def apply_transform(self, raw: float) -> float:
        """Weighted, transformed contribution of a raw element value."""
        if self.transform is None:
            return self.weight * raw
        return self.weight * self.transform.value(raw)


@dataclass
class ProblemSpec:
    """A partially separable problem: dimension, elements, optional white box.

    The union of all element index sets must cover every coordinate;
    coordinates touched by no element could not affect the objective.
    """

    dimension: int
    elements: list[ElementSpec]
    whitebox: Optional[Whitebox] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if len(self.elements) < 1:
            raise ValueError("at least one element is required")
        covered = np.zeros(self.dimension, dtype=bool)
        for el in self.elements:
            if el.index_set[-1] >= self.dimension:
                raise IndexError(
                    f"element index {el.index_set[-1]} out of range for "
                    f"dimension {self.dimension}"
                )
            covered[el.index_set] = True
        if not covered.all():
            missing = np.flatnonzero(~covered).tolist()
            raise ValueError(f"coordinates {missing} belong to no element")

    @property
    def q(self) -> int:
        return len(self.elements)

    @property
    def index_sets(self) -> list[np.ndarray]:
        return [el.index_set for el in self.elements]


class EvaluationLedger:
    """Per-element evaluation counters with worst-case and average views."""

    def __init__(self, q: int):
        self.counts = np.zeros(q, dtype=np.int64)

    def record(self, i: int, k: int = 1) -> None:
        if k < 0:
            raise ValueError("cannot decrement an evaluation counter")
        self.counts[i] += k

    @property
    def t_wst(self) -> int:
        return int(self.counts.max())

    @property
    def t_avg(self) -> float:
        return float(self.counts.mean())

    def copy(self) -> "EvaluationLedger":
        out = EvaluationLedger(len(self.counts))
        out.counts = self.counts.copy()
        return out


def project_point(x: np.ndarray, idx: Sequence[int]) -> np.ndarray:
    """Coordinates of ``x`` at ``idx``, in index order.

    Raises ``IndexError`` for out-of-range indices.
    """
    x = np.asarray(x, dtype=float)
    idx = np.asarray(idx, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-1]):
        raise IndexError("projection index out of range")
    return x[idx]


def evaluate_full(
    p: ProblemSpec, x: np.ndarray, ledger: Optional[EvaluationLedger] = None
) -> tuple[float, np.ndarray]:
    """Evaluate the full objective at ``x``.

    Returns ``(value, raw)`` where ``raw[i]`` is the untransformed value of
    element ``i``. Every element counter in ``ledger`` is incremented by one.
    A non-finite element value poisons the total (returned as ``+inf``) so
    the caller rejects the trial; the raw value is passed through untouched.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dimension,):
        raise ValueError(f"point has shape {x.shape}, expected ({p.dimension},)")
    raw = np.empty(p.q)
    for i, el in enumerate(p.elements):
        try:
            v = float(el.evaluator(x[el.index_set]))
        except (ArithmeticError, ValueError):
            v = math.nan
        raw[i] = v
        if ledger is not None:
            ledger.record(i)
    return combine_values(p, raw, x), raw


def combine_values(p: ProblemSpec, raw: np.ndarray, x: np.ndarray) -> float:
    """Assemble the objective from stored raw element values (no evaluations).

    The white-box part, if any, is evaluated at ``x``; it never touches the
    ledger. Any non-finite contribution yields ``+inf``.
    """
    total = 0.0
    for el, v in zip(p.elements, raw):
        if not math.isfinite(v):
            return math.inf
        total += el.apply_transform(v)
    if p.whitebox is not None:
        total += float(p.whitebox.value(np.asarray(x, dtype=float)))
    if not math.isfinite(total):
        return math.inf
    return total


# ---------------------------------------------------------------------------
# Declarative problem files
# ---------------------------------------------------------------------------
#
# A problem file is a JSON object:
#
#   {
#     "name": "chained-rosenbrock-6",        (optional)
#     "dimension": 6,
#     "start": [-1, -1, -1, -1, -1, -1],     (optional)
#     "elements": [
#       {"indices": [0, 1], "formula": "rosenbrock_pair",
#        "params": {}, "weight": 1.0, "transform": null},
#       ...
#     ],
#     "min_value": 0.0,                      (optional)
#     "minimizer": [1, 1, 1, 1, 1, 1]        (optional)
#   }
#
# ``formula`` names a builtin element formula from FORMULAS; ``params`` are
# passed to its factory. See docs/problem_format.md.


def _f_quadratic_shift(params):
    c = float(params.get("shift", 0.0))
    return lambda u: (u[0] - c) * (u[0] - c)


def _f_quartic_shift(params):
    c = float(params.get("shift", 0.0))

    def f(u):
        t = u[0] - c
        t2 = t * t
        return t2 * t2

    return f


def _f_rosenbrock_pair(params):
    a = float(params.get("scale", 100.0))

    def f(u):
        t = u[0] * u[0] - u[1]
        return a * t * t + (u[0] - 1.0) * (u[0] - 1.0)

    return f


def _f_engvall_pair(params):
    def f(u):
        t = u[0] * u[0] + u[1] * u[1]
        return t * t - 4.0 * u[0] + 3.0

    return f


def _f_broyden_tridiagonal(params):
    pos = params.get("position", "mid")

    def f(u):
        if pos == "first":
            r = (3.0 - 2.0 * u[0]) * u[0] - 2.0 * u[1] + 1.0
        elif pos == "last":
            r = (3.0 - 2.0 * u[1]) * u[1] - u[0] + 1.0
        else:
            r = (3.0 - 2.0 * u[1]) * u[1] - u[0] - 2.0 * u[2] + 1.0
        return r * r

    return f


def _f_difference_pair(params):
    def f(u):
        t = u[0] - u[1]
        return t * t

    return f


def _f_powell_singular(params):
    kind = params["kind"]

    def f(u):
        if kind == "a":
            t = u[0] + 10.0 * u[1]
            return t * t
        if kind == "b":
            t = u[0] - u[1]
            return 5.0 * t * t
        if kind == "c":
            t = u[0] - 2.0 * u[1]
            t2 = t * t
            return t2 * t2
        t = u[0] - u[1]
        t2 = t * t
        return 10.0 * t2 * t2

    return f


def _f_cosine_pair(params):
    return lambda u: math.cos(u[0] * u[0] - 0.5 * u[1])


#: Builtin element formulas for declarative problem files.
FORMULAS = {
    "quadratic_shift": _f_quadratic_shift,
    "quartic_shift": _f_quartic_shift,
    "rosenbrock_pair": _f_rosenbrock_pair,
    "engvall_pair": _f_engvall_pair,
    "broyden_tridiagonal": _f_broyden_tridiagonal,
    "difference_pair": _f_difference_pair,
    "powell_singular": _f_powell_singular,
    "cosine_pair": _f_cosine_pair,
}


def problem_from_dict(d: dict) -> tuple[ProblemSpec, dict]:
    """Build a ProblemSpec from the declarative form.

    Returns ``(problem, meta)`` where ``meta`` carries name, start point and
    reference minimum when present.
    """
    if "dimension" not in d or "elements" not in d:
        raise ValueError("problem dict needs 'dimension' and 'elements'")
    n = int(d["dimension"])
    elements = []
    for ed in d["elements"]:
        name = ed.get("formula")
        if name not in FORMULAS:
            raise ValueError(f"unknown element formula: {name!r}")
        evaluator = FORMULAS[name](ed.get("params", {}))
        tname = ed.get("transform")
        if tname is not None and tname not in TRANSFORMS:
            raise ValueError(f"unknown transform: {tname!r}")
        elements.append(
            ElementSpec(
                index_set=ed["indices"],
                evaluator=evaluator,
                weight=float(ed.get("weight", 1.0)),
                transform=TRANSFORMS[tname] if tname else None,
            )
        )
    problem = ProblemSpec(dimension=n, elements=elements)
    meta = {
        "name": d.get("name"),
        "start": np.asarray(d["start"], dtype=float) if "start" in d else np.zeros(n),
        "min_value": d.get("min_value"),
        "minimizer": np.asarray(d["minimizer"], dtype=float)
        if d.get("minimizer") is not None
        else None,
    }
    return problem, meta


def problem_from_file(path) -> tuple[ProblemSpec, dict]:
    """Load a declarative problem file (JSON). See docs/problem_format.md."""
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))
