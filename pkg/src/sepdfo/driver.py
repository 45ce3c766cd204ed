"""Outer trust-region loop for partially separable derivative-free minimization.

One iteration: solve the structured subproblem for a step, then either treat
it as a short step (halve radii, try geometry repair, tighten the resolution
on repeats) or evaluate the trial point, selectively feed it to each element
model, rescore the radii, and keep the better incumbent. The resolution
``rho`` floors every radius and only ever decreases, except when a soft
restart resets it. Runs are deterministic for a fixed seed and evaluators.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import interp
from .interp import (
    InterpolationSet,
    QuadraticModel,
    SingularSystemError,
    apply_update,
    build_initial_model,
    capacity_bounds,
    default_capacity,
    geometry_improvement_needed,
    geometry_step,
    init_set,
    propose_update,
    select_drop_index,
)
from .problem import (
    EvaluationLedger,
    ProblemSpec,
    Transform,
    Whitebox,
    combine_values,
    project_point,
)
from .radius import IterationScore, RadiusConfig, score, update_radii
from .tregion import CylinderRegion, solve_subproblem

__all__ = [
    "SolverOptions",
    "SolverState",
    "RunRecord",
    "CallbackInfo",
    "minimize",
    "selective_update",
    "search_starting_point",
    "soft_restart",
    "compose_model_eval",
    "update_weights",
]

_log = logging.getLogger(__name__)

#: Reduction-ratio denominators below this relative size are unreliable.
TINY_REDUCTION = 1e-14

#: Consecutive short-step iterations before the resolution is tightened.
SHORT_STEP_LIMIT = 3


@dataclass
class SolverOptions:
    """Tunable solver behavior; defaults follow the library's standard setup."""

    rho_start: float = 1.0
    rho_end: float = 1e-8
    max_element_evals: Optional[int] = None
    xi: float = 1e-5
    restarts: int = 0
    structured: bool = True
    capacity: Optional[int] = None
    seed: int = 0
    radius_config: RadiusConfig = field(default_factory=RadiusConfig)
    max_iterations: Optional[int] = None

    def __post_init__(self):
        if not (self.rho_start > self.rho_end > 0.0):
            raise ValueError("need rho_start > rho_end > 0")
        if self.max_element_evals is not None and self.max_element_evals < 1:
            raise ValueError("evaluation budget must be positive")
        if self.restarts < 0:
            raise ValueError("restart budget must be nonnegative")

    def budget_for(self, dimension: int) -> int:
        if self.max_element_evals is not None:
            return self.max_element_evals
        return max(1000 * dimension, 10000)


@dataclass
class CallbackInfo:
    """Read-only snapshot handed to the per-iteration callback."""

    iteration: int
    x: np.ndarray
    f: float
    rho: float
    deltas: np.ndarray
    counts: np.ndarray
    r: Optional[float]


@dataclass
class RunRecord:
    """Everything a run produced, JSON-serializable and byte-reproducible."""

    best_x: list
    best_f: float
    f_start: float
    counts: list
    t_wst: int
    t_avg: float
    termination: str
    iterations: int
    trajectory: list
    iteration_log: list
    events: list
    n: int
    q: int
    element_dims: list
    seed: int
    structured: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best_x": self.best_x,
            "best_f": self.best_f,
            "f_start": self.f_start,
            "counts": self.counts,
            "t_wst": self.t_wst,
            "t_avg": self.t_avg,
            "termination": self.termination,
            "iterations": self.iterations,
            "trajectory": self.trajectory,
            "iteration_log": self.iteration_log,
            "events": self.events,
            "n": self.n,
            "q": self.q,
            "element_dims": self.element_dims,
            "seed": self.seed,
            "structured": self.structured,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class _BudgetExhausted(Exception):
    pass


class SolverState:
    """Mutable run state: incumbent, models, radii, resolution, accounting."""

    def __init__(self, problem: ProblemSpec, options: SolverOptions):
        self.problem = problem
        self.options = options
        self.weights = np.array([el.weight for el in problem.elements], dtype=float)
        self.transforms: list[Optional[Transform]] = [
            el.transform for el in problem.elements
        ]
        self.ledger = EvaluationLedger(problem.q)
        self.budget = options.budget_for(problem.dimension)
        self.sets: list[InterpolationSet] = []
        self.models: list[QuadraticModel] = []
        self.deltas = np.full(problem.q, options.rho_start)
        self.rho = options.rho_start
        self.short_count = 0
        self.restart_count = 0
        self.rng = np.random.default_rng(options.seed)
        self.x = np.zeros(problem.dimension)
        self.fx = math.inf
        self.raws = np.full(problem.q, np.nan)
        self.trajectory: list = []
        self.iteration_log: list = []
        self.events: list = []
        self.termination: Optional[str] = None
        self.iteration = 0

    # -- evaluation plumbing ------------------------------------------------

    def charge(self, i: int) -> None:
        if self.ledger.counts[i] + 1 > self.budget:
            raise _BudgetExhausted()
        self.ledger.record(i)

    def eval_element(self, i: int, u: np.ndarray) -> float:
        self.charge(i)
        try:
            return float(self.problem.elements[i].evaluator(np.asarray(u, dtype=float)))
        except (ArithmeticError, ValueError):
            return math.nan

    def eval_full(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        for i in range(self.problem.q):
            if self.ledger.counts[i] + 1 > self.budget:
                raise _BudgetExhausted()
        raw = np.array(
            [self.eval_element(i, x[ix]) for i, ix in enumerate(self.problem.index_sets)]
        )
        total = self.objective_from_raw(raw, x)
        self.trajectory.append([self.ledger.t_wst, float(total)])
        return total, raw

    def objective_from_raw(self, raw: np.ndarray, x: np.ndarray) -> float:
        total = 0.0
        for w, h, v in zip(self.weights, self.transforms, raw):
            if not math.isfinite(v):
                return math.inf
            total += w * (h.value(v) if h is not None else v)
        if self.problem.whitebox is not None:
            total += float(self.problem.whitebox.value(np.asarray(x, dtype=float)))
        return total if math.isfinite(total) else math.inf

    def element_contribution(self, i: int, raw_value: float) -> float:
        h = self.transforms[i]
        return self.weights[i] * (h.value(raw_value) if h is not None else raw_value)

    def incumbent_projection(self, i: int) -> np.ndarray:
        return self.x[self.problem.index_sets[i]]


def _guarded_ratio(df: float, dm: float, scale: float) -> tuple[float, float, float]:
    """(dm, df, ratio) with degenerate denominators neutralized.

    A predicted reduction at rounding level cannot support a ratio test; the
    element is pushed into the nonnegative branch with an impossible ratio so
    only the actual-reduction tests can award points.
    """
    if abs(dm) <= TINY_REDUCTION * scale:
        return 0.0, df, -math.inf
    return dm, df, df / dm


def compose_model_eval(
    models: list[QuadraticModel],
    whitebox: Optional[Whitebox],
    weights: np.ndarray,
    transforms: list[Optional[Transform]],
    x_k: np.ndarray,
    index_sets: list[np.ndarray],
) -> tuple[Callable[[np.ndarray], tuple[float, np.ndarray]], bool]:
    """Subproblem objective ``s -> (value, gradient)`` around the incumbent.

    Element models are composed with their transforms by the chain rule and
    scatter-added; the white-box part enters through its second-order
    expansion at the incumbent unless flagged cheap, in which case it is
    called directly. The returned flag says whether the composition is an
    exact quadratic (enables closed-form line searches).
    """
    x_k = np.asarray(x_k, dtype=float)
    n = x_k.size
    quadratic = all(t is None for t in transforms)
    f0 = g0 = None
    if whitebox is not None:
        if whitebox.cheap:
            quadratic = False
        else:
            f0 = float(whitebox.value(x_k))
            g0 = np.asarray(whitebox.grad(x_k), dtype=float)

    def model_eval(s: np.ndarray) -> tuple[float, np.ndarray]:
        s = np.asarray(s, dtype=float)
        x = x_k + s
        value = 0.0
        grad = np.zeros(n)
        for m, ix, w, h in zip(models, index_sets, weights, transforms):
            u = x[ix]
            mv = m.value(u)
            mg = m.gradient(u)
            if h is None:
                value += w * mv
                grad[ix] += w * mg
            else:
                value += w * h.value(mv)
                grad[ix] += (w * h.deriv(mv)) * mg
        if whitebox is not None:
            if whitebox.cheap:
                value += float(whitebox.value(x))
                grad += np.asarray(whitebox.grad(x), dtype=float)
            else:
                hs = np.asarray(whitebox.hvp(x_k, s), dtype=float)
                value += f0 + float(g0 @ s) + 0.5 * float(s @ hs)
                grad += g0 + hs
        return float(value), grad

    return model_eval, quadratic


def _penalized_sigma(report) -> float:
    w = 0.25 if report.unstable else 1.0
    return w * report.sigma if report.sigma > 0 else report.sigma / w


def selective_update(
    iset: InterpolationSet,
    model: QuadraticModel,
    incumbent: np.ndarray,
    new_point: np.ndarray,
    new_value: float,
    step_norm: float,
    rho: float,
    xi: float,
    radius: Optional[float] = None,
) -> bool:
    """Feed a trial point to one element model only when it is safe and useful.

    The swap denominator is damped by ``gamma = min(step_norm/rho, 1)`` so
    near-zero element steps do not churn the set, and by an extra 0.25 factor
    when the denominator computation looked unstable (shrinking positive
    values, enlarging negative ones). The update runs when the damped value
    clears ``xi``. When every possible swap has a negative denominator the
    least damaging one is applied instead of none at all.
    """
    gamma = min(step_norm / rho, 1.0)
    if gamma <= 0.0:
        return False
    drop = select_drop_index(iset, incumbent, new_point, radius)
    report = propose_update(iset, new_point, drop)
    if gamma * _penalized_sigma(report) > xi:
        apply_update(iset, model, new_point, new_value, drop)
        return True
    keep = interp._incumbent_index(iset, incumbent)
    candidates = [
        (j, propose_update(iset, new_point, j))
        for j in range(iset.capacity)
        if j != keep
    ]
    if candidates and all(rep.sigma < 0.0 for _, rep in candidates):
        # Every swap has a negative denominator: rounding has caught up with
        # the system. Apply the least damaging swap, but never one whose
        # denominator is too small to divide by safely.
        viable = [(j, rep) for j, rep in candidates if abs(rep.sigma) > 1e-8]
        if viable:
            j_best, _ = max(viable, key=lambda jr: gamma * _penalized_sigma(jr[1]))
            apply_update(iset, model, new_point, new_value, j_best)
            return True
    return False


def search_starting_point(
    sets: list[InterpolationSet],
    problem: ProblemSpec,
    weights: np.ndarray,
    transforms: list[Optional[Transform]],
    x_start: np.ndarray,
    max_solutions: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Best initialization-grid point assembled from stored element values.

    Enumerates up to ``max_solutions`` full points whose projection onto
    every element lies in that element's initial set (depth-first, expanding
    the element with the fewest consistent choices first). Objectives come
    free from the stored values; ties keep the first solution found. The
    user's start point is always a solution, so the search cannot fail.
    """
    q = len(sets)
    index_sets = problem.index_sets
    assigned: dict[int, float] = {}
    chosen: list[Optional[int]] = [None] * q
    solutions: list[tuple[float, np.ndarray, np.ndarray]] = []

    def consistent(i: int) -> list[int]:
        pts = sets[i].points
        out = []
        for t in range(pts.shape[0]):
            for pos, j in enumerate(index_sets[i]):
                jv = assigned.get(int(j))
                if jv is not None and jv != pts[t, pos]:
                    break
            else:
                out.append(t)
        return out

    def record_solution() -> None:
        raw = np.array([sets[i].values[chosen[i]] for i in range(q)])
        x = x_start.copy()
        for j, v in assigned.items():
            x[j] = v
        total = 0.0
        for w, h, v in zip(weights, transforms, raw):
            total += w * (h.value(v) if h is not None else v)
        if problem.whitebox is not None:
            total += float(problem.whitebox.value(x))
        solutions.append((float(total), x, raw))

    def descend() -> None:
        if len(solutions) >= max_solutions:
            return
        open_elements = [i for i in range(q) if chosen[i] is None]
        if not open_elements:
            record_solution()
            return
        options = {i: consistent(i) for i in open_elements}
        pick = min(open_elements, key=lambda i: (len(options[i]), i))
        for t in options[pick]:
            if len(solutions) >= max_solutions:
                return
            added = []
            for pos, j in enumerate(index_sets[pick]):
                j = int(j)
                if j not in assigned:
                    assigned[j] = sets[pick].points[t, pos]
                    added.append(j)
            chosen[pick] = t
            descend()
            chosen[pick] = None
            for j in added:
                del assigned[j]

    descend()
    best = min(solutions, key=lambda item: item[0])
    return best[1], best[2]


def soft_restart(state: SolverState, options: SolverOptions, rng: np.random.Generator) -> None:
    """Reset the radii and resolution, refreshing part of each element's set.

    The third of each set nearest the incumbent (never the incumbent's own
    point) is replaced by fresh evaluations at uniform random points on the
    sphere of radius ``rho_start`` around the incumbent; factorizations are
    rebuilt and the short-step counter cleared. The restart is recorded up
    front so one cut short by the evaluation budget still shows up.
    """
    state.restart_count += 1
    state.events.append({"iteration": state.iteration, "type": "restart"})
    state.rho = options.rho_start
    state.deltas[:] = options.rho_start
    state.short_count = 0
    for i, (iset, model) in enumerate(zip(state.sets, state.models)):
        incumbent = state.incumbent_projection(i)
        keep = interp._incumbent_index(iset, incumbent)
        dist = np.linalg.norm(iset.points - incumbent, axis=1)
        order = [j for j in np.argsort(dist, kind="stable") if j != keep]
        replace = order[: math.ceil(iset.capacity / 3)]
        for j in replace:
            direction = rng.standard_normal(iset.dim)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                direction[0] = 1.0
                norm = 1.0
            point = incumbent + options.rho_start * direction / norm
            value = state.eval_element(i, point)
            if not math.isfinite(value):
                continue
            iset.points[j] = point
            iset.values[j] = value
        interp.refresh(iset, model, new_base=incumbent)


def update_weights(
    state: SolverState,
    weights=None,
    transforms=None,
) -> None:
    """Swap in new weights and/or transforms; stored raw values are reused."""
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (state.problem.q,):
            raise ValueError("one weight per element is required")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        state.weights = weights.copy()
    if transforms is not None:
        if len(transforms) != state.problem.q:
            raise ValueError("one transform (or None) per element is required")
        state.transforms = list(transforms)
    state.fx = state.objective_from_raw(state.raws, state.x)
    state.events.append({"iteration": state.iteration, "type": "weights_updated"})


def _capacity_for(options: SolverOptions, dim: int) -> int:
    if options.capacity is None:
        return default_capacity(dim)
    lo, hi = capacity_bounds(dim)
    return int(min(max(options.capacity, lo), hi))


def _initialize_element(
    state: SolverState, i: int, x_start: np.ndarray, radius: float
) -> None:
    ix = state.problem.index_sets[i]
    cap = _capacity_for(state.options, len(ix))
    iset, points = init_set(project_point(x_start, ix), radius, cap)
    values = np.empty(len(points))
    for t, pt in enumerate(points):
        values[t] = state.eval_element(i, pt)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite value of element {i} during initialization")
    iset.set_values(values)
    model = build_initial_model(iset)
    state.sets.append(iset)
    state.models.append(model)


def _initialize(state: SolverState, x_start: np.ndarray) -> None:
    for i in range(state.problem.q):
        try:
            _initialize_element(state, i, x_start, state.options.rho_start)
        except SingularSystemError:
            # One retry with a jittered radius, then give up.
            _initialize_element(state, i, x_start, 1.1 * state.options.rho_start)


def _maybe_recentre(state: SolverState) -> None:
    for i, (iset, model) in enumerate(zip(state.sets, state.models)):
        incumbent = state.incumbent_projection(i)
        if np.linalg.norm(incumbent - iset.base) > 10.0 * state.deltas[i]:
            interp.refresh(iset, model, new_base=incumbent)


def _reduce_rho(state: SolverState) -> None:
    """Tighten the resolution, restarting or terminating at the floor."""
    if 0.1 * state.rho < state.options.rho_end:
        if state.restart_count < state.options.restarts:
            soft_restart(state, state.options, state.rng)
        else:
            state.termination = "rho_end"
        return
    state.rho *= 0.1
    state.short_count = 0
    state.deltas = np.maximum(state.deltas, state.rho)


def _score_structured(
    state: SolverState, dm: np.ndarray, df: np.ndarray, ratios: np.ndarray, r: float
) -> IterationScore:
    return score(
        dm, df, ratios, r, state.deltas, state.rho, state.options.radius_config
    )


def _apply_radius_update(
    state: SolverState, iteration_score: IterationScore, step_norms: np.ndarray, s: np.ndarray
) -> None:
    if state.options.structured:
        state.deltas = update_radii(
            iteration_score,
            state.deltas,
            step_norms,
            state.rho,
            state.options.radius_config,
        )
    else:
        # Shared-radius mode: score the step as one merged pseudo-element so
        # every radius moves by the same multiplier.
        merged = score(
            np.array([float(iteration_score.dm.sum())]),
            np.array([float(iteration_score.df.sum())]),
            np.array([iteration_score.r]),
            iteration_score.r,
            np.array([state.deltas[0]]),
            state.rho,
            state.options.radius_config,
        )
        new_delta = update_radii(
            merged,
            np.array([state.deltas[0]]),
            np.array([float(np.linalg.norm(s))]),
            state.rho,
            state.options.radius_config,
        )[0]
        state.deltas = np.full(state.problem.q, new_delta)


def minimize(
    problem: ProblemSpec,
    x_start,
    options: Optional[SolverOptions] = None,
    callback: Optional[Callable[[CallbackInfo], Optional[dict]]] = None,
) -> RunRecord:
    """Minimize a partially separable objective without derivatives.

    Parameters
    ----------
    problem : ProblemSpec
        Objective description; element evaluators are treated as black boxes.
    x_start : array_like
        Starting point, finite, of length ``problem.dimension``.
    options : SolverOptions, optional
        Solver configuration; defaults are suitable for smooth problems with
        unit-scale variables.
    callback : callable, optional
        Called once per outer iteration with a read-only ``CallbackInfo``;
        may return ``{"weights": ..., "transforms": ...}`` to retarget the
        objective mid-run.

    Returns
    -------
    RunRecord
        Best point and value, per-element evaluation counts, trajectory,
        per-iteration scores, and the termination reason.
    """
    options = options or SolverOptions()
    x_start = np.asarray(x_start, dtype=float).copy()
    if x_start.shape != (problem.dimension,):
        raise ValueError(
            f"start point has shape {x_start.shape}, expected ({problem.dimension},)"
        )
    if not np.all(np.isfinite(x_start)):
        raise ValueError("start point must be finite")

    state = SolverState(problem, options)
    q = problem.q
    state.x = x_start.copy()
    f_start = math.inf

    try:
        _initialize(state, x_start)
        # Objective at the start point, assembled from the centers evaluated
        # during initialization; the start point itself costs nothing extra.
        raw_start = np.array([state.sets[i].values[0] for i in range(q)])
        f_start = state.objective_from_raw(raw_start, x_start)
        state.trajectory.append([0, float(f_start)])
        state.x, state.raws = x_start, raw_start
        state.fx = f_start

        x0, raw0 = search_starting_point(
            state.sets, problem, state.weights, state.transforms, x_start
        )
        if not np.array_equal(x0, x_start):
            f0 = state.objective_from_raw(raw0, x0)
            state.trajectory.append([state.ledger.t_wst, float(f0)])
            if f0 < state.fx:
                state.x, state.raws, state.fx = x0, raw0, f0
                for i in range(q):
                    interp.refresh(
                        state.sets[i],
                        state.models[i],
                        new_base=state.incumbent_projection(i),
                    )
        while state.termination is None:
            try:
                _run_main_loop(state, callback)
            except SingularSystemError:
                # The singularity signal feeds the restart machinery; with
                # no restart budget left it ends the run.
                if state.restart_count < options.restarts:
                    soft_restart(state, options, state.rng)
                else:
                    state.termination = "singular"
    except _BudgetExhausted:
        state.termination = "budget"
    except SingularSystemError:
        state.termination = "singular"

    if not math.isfinite(state.fx) and state.termination is None:
        state.termination = "singular"
    return _build_record(state, f_start)


def _run_main_loop(state: SolverState, callback) -> None:
    problem = state.problem
    q = problem.q
    index_sets = problem.index_sets

    while state.termination is None:
        if (
            state.options.max_iterations is not None
            and state.iteration >= state.options.max_iterations
        ):
            state.termination = "max_iterations"
            break
        k = state.iteration
        if not state.options.structured:
            assert np.all(state.deltas == state.deltas[0])

        # Keep each element's expansion point near its incumbent projection;
        # a stale base makes clustered displacement vectors nearly parallel.
        _maybe_recentre(state)
        flags = np.zeros(q, dtype=bool)
        model_eval, quadratic = compose_model_eval(
            state.models,
            problem.whitebox,
            state.weights,
            state.transforms,
            state.x,
            index_sets,
        )
        if state.options.structured:
            region = CylinderRegion(index_sets, state.deltas, problem.dimension)
        else:
            region = CylinderRegion(
                [np.arange(problem.dimension)],
                np.array([state.deltas[0]]),
                problem.dimension,
            )
        s = solve_subproblem(
            model_eval,
            region,
            trunc_radius=region.truncation_radius(),
            max_iter=10 * problem.dimension,
            quadratic=quadratic,
        )
        step_norms = np.array([np.linalg.norm(s[ix]) for ix in index_sets])
        log_entry = {
            "k": k,
            "rho": float(state.rho),
            "step_norm": float(np.linalg.norm(s)),
            "delta_min": float(state.deltas.min()),
            "delta_max": float(state.deltas.max()),
            "f": float(state.fx),
            "branch": "",
            "r": None,
            "tau": None,
            "tau_local": None,
        }

        if step_norms.max() <= 0.5 * state.rho:
            log_entry["branch"] = "short"
            state.short_count += 1
            state.deltas = np.maximum(state.deltas / 2.0, state.rho)
            for i in range(q):
                flags[i] = geometry_improvement_needed(
                    state.sets[i], state.incumbent_projection(i), state.deltas[i]
                )
            if state.short_count >= SHORT_STEP_LIMIT or not flags.any():
                _reduce_rho(state)
        else:
            log_entry["branch"] = "long"
            state.short_count = 0
            x_hat = state.x + s
            m_at_zero = model_eval(np.zeros(problem.dimension))[0]
            m_at_s = model_eval(s)[0]
            f_hat, raw_hat = state.eval_full(x_hat)

            dm_list = np.empty(q)
            df_list = np.empty(q)
            ratio_list = np.empty(q)
            for i in range(q):
                u_now = state.incumbent_projection(i)
                u_hat = x_hat[index_sets[i]]
                m_i = state.models[i]
                dm_i = state.element_contribution(
                    i, m_i.value(u_now)
                ) - state.element_contribution(i, m_i.value(u_hat))
                if math.isfinite(raw_hat[i]):
                    df_i = state.element_contribution(
                        i, state.raws[i]
                    ) - state.element_contribution(i, raw_hat[i])
                else:
                    df_i = -math.inf
                scale_i = 1.0 + abs(state.element_contribution(i, state.raws[i]))
                if not math.isfinite(df_i):
                    dm_list[i], df_list[i], ratio_list[i] = 0.0, -math.inf, -math.inf
                else:
                    dm_list[i], df_list[i], ratio_list[i] = _guarded_ratio(
                        df_i, dm_i, scale_i
                    )

            dm_total = m_at_zero - m_at_s
            df_total = state.fx - f_hat
            if abs(dm_total) <= TINY_REDUCTION * (1.0 + abs(m_at_zero)):
                r = math.inf if df_total > 0 else -math.inf
            elif not math.isfinite(df_total):
                r = -math.inf
            else:
                r = df_total / dm_total
            log_entry["r"] = float(r)

            accepted = []
            for i in range(q):
                if not math.isfinite(raw_hat[i]):
                    accepted.append(False)
                    continue
                ok = selective_update(
                    state.sets[i],
                    state.models[i],
                    state.incumbent_projection(i),
                    x_hat[index_sets[i]],
                    raw_hat[i],
                    step_norms[i],
                    state.rho,
                    state.options.xi,
                    radius=state.deltas[i],
                )
                accepted.append(bool(ok))
            log_entry["updates"] = accepted

            iteration_score = _score_structured(state, dm_list, df_list, ratio_list, r)
            log_entry["tau"] = int(iteration_score.tau_global)
            log_entry["tau_local"] = [int(t) for t in iteration_score.tau_local]
            _apply_radius_update(state, iteration_score, step_norms, s)

            if r <= 0.1:
                for i in range(q):
                    flags[i] = geometry_improvement_needed(
                        state.sets[i], state.incumbent_projection(i), state.deltas[i]
                    )
                if not flags.any():
                    _reduce_rho(state)

            if f_hat < state.fx:
                state.x, state.fx, state.raws = x_hat, f_hat, raw_hat

        state.iteration_log.append(log_entry)

        if state.termination is None and flags.any():
            improved_any = False
            for i in range(q):
                if not flags[i]:
                    continue
                proposal = geometry_step(
                    state.sets[i],
                    state.models[i],
                    state.incumbent_projection(i),
                    state.deltas[i],
                )
                if proposal is None:
                    continue
                point, drop = proposal
                value = state.eval_element(i, point)
                if not math.isfinite(value):
                    continue
                apply_update(state.sets[i], state.models[i], point, value, drop)
                improved_any = True
            if not improved_any:
                _reduce_rho(state)

        if callback is not None:
            request = callback(
                CallbackInfo(
                    iteration=k,
                    x=state.x.copy(),
                    f=float(state.fx),
                    rho=float(state.rho),
                    deltas=state.deltas.copy(),
                    counts=state.ledger.counts.copy(),
                    r=log_entry["r"],
                )
            )
            if request:
                update_weights(
                    state,
                    weights=request.get("weights"),
                    transforms=request.get("transforms"),
                )

        state.iteration += 1


def _build_record(state: SolverState, f_start: float) -> RunRecord:
    return RunRecord(
        best_x=[float(v) for v in state.x],
        best_f=float(state.fx),
        f_start=float(f_start),
        counts=[int(c) for c in state.ledger.counts],
        t_wst=state.ledger.t_wst,
        t_avg=state.ledger.t_avg,
        termination=state.termination or "unknown",
        iterations=state.iteration,
        trajectory=[[int(t), float(f)] for t, f in state.trajectory],
        iteration_log=state.iteration_log,
        events=state.events,
        n=state.problem.dimension,
        q=state.problem.q,
        element_dims=[int(len(ix)) for ix in state.problem.index_sets],
        seed=state.options.seed,
        structured=state.options.structured,
    )
