"""Cylinder trust regions: membership, shrink-based projection, subproblem solve.

With one trust radius per element, the feasible step set is a cylinder
intersection

    S(Delta) = { s : ||s[I_i]|| <= Delta_i  for every element i },

a convex set whose exact Euclidean projection is expensive. The fast
approximate projection here repeatedly rescales the coordinates of the
currently worst-violating elements until every constraint holds; an optional
averaged-projection warm-up improves its accuracy, and a Dykstra iteration
is provided as a slow exact oracle. The trust-region subproblem is solved by
conjugate-gradient-style descent that projects back into the cylinder when a
trial leaves it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "CylinderRegion",
    "ShrinkState",
    "violation_ratio",
    "shrink",
    "steinmetz_project",
    "averaged_project_step",
    "hybrid_project",
    "dykstra_project",
    "solve_subproblem",
]

#: Relative tolerance for ratio ties and membership checks.
RATIO_TOL = 1e-12


@dataclass
class CylinderRegion:
    """Index sets and per-element radii defining the cylinder set."""

    index_sets: list[np.ndarray]
    radii: np.ndarray
    dimension: int

    def __init__(self, index_sets: Sequence[Sequence[int]], radii, dimension: int):
        self.index_sets = [np.asarray(ix, dtype=int) for ix in index_sets]
        self.radii = np.asarray(radii, dtype=float)
        self.dimension = int(dimension)
        if len(self.index_sets) != self.radii.size:
            raise ValueError("one radius per index set is required")
        if np.any(self.radii <= 0) or not np.all(np.isfinite(self.radii)):
            raise ValueError("radii must be positive and finite")
        for ix in self.index_sets:
            if ix.size == 0 or ix.min() < 0 or ix.max() >= self.dimension:
                raise IndexError("index set out of range")

    @property
    def q(self) -> int:
        return len(self.index_sets)

    def ratios(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.array(
            [np.linalg.norm(s[ix]) / r for ix, r in zip(self.index_sets, self.radii)]
        )

    def contains(self, s: np.ndarray, tol: float = RATIO_TOL) -> bool:
        return bool(np.all(self.ratios(s) <= 1.0 + tol))

    def truncation_radius(self) -> float:
        """Radius of a ball guaranteed to contain the whole cylinder set."""
        return float(
            np.sqrt(min(self.dimension, self.q)) * self.radii.max()
        )


@dataclass
class ShrinkState:
    """Progress of one projection pass: current point, tied set, common ratio."""

    point: np.ndarray
    group: list[int]
    ratio: float


def violation_ratio(s: np.ndarray, region: CylinderRegion, i: int) -> float:
    """||s[I_i]|| / Delta_i; above one means constraint i is violated."""
    s = np.asarray(s, dtype=float)
    return float(np.linalg.norm(s[region.index_sets[i]]) / region.radii[i])


def shrink(
    s: np.ndarray, region: CylinderRegion, group: Sequence[int]
) -> tuple[np.ndarray, int | None]:
    """Rescale the coordinates of the tied worst-violating elements.

    ``group`` must hold exactly the elements sharing the maximal violation
    ratio (above one). The returned point either satisfies every constraint
    of ``group`` with equality while the rest are feasible (terminal case),
    or brings one additional element up to the common ratio; that element's
    index is returned, else ``None``.
    """
    s = np.asarray(s, dtype=float)
    group = list(group)
    if not group:
        raise ValueError("shrinking set must be nonempty")
    ratios = region.ratios(s)
    u = ratios[group[0]]
    top = ratios.max()
    if u <= 1.0:
        raise ValueError("shrinking set must be in violation")
    for i in group:
        if abs(ratios[i] - u) > RATIO_TOL * max(1.0, u):
            raise ValueError("shrinking set members must share one violation ratio")
    if u < top * (1.0 - RATIO_TOL):
        raise ValueError("shrinking set must hold the maximal violation ratio")

    if len(group) == region.q:
        return s / u, None

    group_coords = np.zeros(region.dimension, dtype=bool)
    for i in group:
        group_coords[region.index_sets[i]] = True

    t_best = 1.0 / u
    joining = None
    for i in range(region.q):
        if i in group:
            continue
        ix = region.index_sets[i]
        inside = group_coords[ix]
        norm_out = np.linalg.norm(s[ix[~inside]]) if np.any(~inside) else 0.0
        norm_in = np.linalg.norm(s[ix[inside]]) if np.any(inside) else 0.0
        gap = (u * region.radii[i]) ** 2 - norm_in**2
        # A ratio strictly below the maximum guarantees headroom (gap > 0);
        # rounding can erase it for a near-tied element, which then simply
        # joins the group without any rescaling.
        if gap <= 0.0:
            t_i = 1.0
        else:
            t_i = min(norm_out / np.sqrt(gap), 1.0)
        if t_i > t_best:
            t_best = t_i
            joining = i

    s_star = s.copy()
    s_star[group_coords] *= t_best
    return s_star, joining


def steinmetz_project(
    s0: np.ndarray, region: CylinderRegion, return_calls: bool = False
):
    """Approximate projection into the cylinder set by repeated shrinking.

    Elements already satisfied at ``s0`` can never shape the result and are
    excluded up front; each pass either finishes or adds one element to the
    tied set, so at most q - (number initially satisfied) passes run.
    """
    s = np.asarray(s0, dtype=float).copy()
    ratios = region.ratios(s)
    calls = 0
    if ratios.max() <= 1.0:
        return (s, calls) if return_calls else s

    active = [i for i in range(region.q) if ratios[i] > 1.0]
    sub = CylinderRegion(
        [region.index_sets[i] for i in active],
        region.radii[active],
        region.dimension,
    )
    sub_ratios = ratios[active]
    top = sub_ratios.max()
    state = ShrinkState(
        point=s,
        group=[i for i in range(sub.q) if sub_ratios[i] >= top * (1.0 - RATIO_TOL)],
        ratio=float(top),
    )
    while True:
        state.point, joining = shrink(state.point, sub, state.group)
        calls += 1
        sub_ratios = sub.ratios(state.point)
        state.ratio = float(sub_ratios.max())
        if state.ratio <= 1.0 + RATIO_TOL:
            break
        if joining is None:
            break
        state.group.append(joining)
    s = state.point
    # The terminal rescaling lands on the boundary up to rounding; nudge any
    # residual overshoot strictly inside.
    for i in range(region.q):
        ix = region.index_sets[i]
        norm = np.linalg.norm(s[ix])
        if norm > region.radii[i]:
            s[ix] *= region.radii[i] / norm
    return (s, calls) if return_calls else s


def averaged_project_step(s: np.ndarray, region: CylinderRegion) -> np.ndarray:
    """One sweep of averaged projections.

    Every element containing a coordinate votes for that coordinate's new
    value: violated elements vote with their block radially rescaled onto
    their ball, satisfied ones with the current value. Coordinates outside
    every index set are untouched.
    """
    s = np.asarray(s, dtype=float)
    total = np.zeros_like(s)
    votes = np.zeros(s.size)
    for ix, radius in zip(region.index_sets, region.radii):
        block = s[ix]
        norm = np.linalg.norm(block)
        if norm > radius:
            total[ix] += block * (radius / norm)
        else:
            total[ix] += block
        votes[ix] += 1.0
    out = s.copy()
    touched = votes > 0
    out[touched] = total[touched] / votes[touched]
    return out


def hybrid_project(s: np.ndarray, region: CylinderRegion, k_avg: int = 4) -> np.ndarray:
    """``k_avg`` averaged-projection sweeps followed by one shrink projection."""
    out = np.asarray(s, dtype=float)
    for _ in range(k_avg):
        out = averaged_project_step(out, region)
    return steinmetz_project(out, region)


def dykstra_project(
    s: np.ndarray, region: CylinderRegion, tol: float = 1e-10, max_cycles: int = 10000
) -> np.ndarray:
    """Euclidean projection onto the cylinder set, to within ``tol``.

    Dykstra's alternating scheme with one correction vector per element;
    stops when a full cycle moves the iterate less than ``tol``. Slow but
    exact, intended as a reference oracle.
    """
    x = np.asarray(s, dtype=float).copy()
    corrections = [np.zeros(ix.size) for ix in region.index_sets]
    for _ in range(max_cycles):
        moved = 0.0
        for i, (ix, radius) in enumerate(zip(region.index_sets, region.radii)):
            block = x[ix] + corrections[i]
            norm = np.linalg.norm(block)
            projected = block if norm <= radius else block * (radius / norm)
            corrections[i] = block - projected
            moved += float(np.linalg.norm(x[ix] - projected))
            x = x.copy()
            x[ix] = projected
        if moved <= tol:
            break
    return x


def _bound_step(s: np.ndarray, p: np.ndarray, radius: float) -> float:
    """Largest alpha >= 0 with ||s + alpha p|| <= radius."""
    pp = float(p @ p)
    if pp == 0.0:
        return 0.0
    sp = float(s @ p)
    ss = float(s @ s)
    disc = sp * sp + pp * max(radius * radius - ss, 0.0)
    return max((-sp + np.sqrt(disc)) / pp, 0.0)


def _line_search_quadratic(
    phi0: float, dphi0: float, curv: float, alpha_max: float
) -> float:
    if curv > 0:
        return float(np.clip(-dphi0 / curv, 0.0, alpha_max))
    return alpha_max


def _line_search_bisection(
    model_eval: Callable, s: np.ndarray, p: np.ndarray, alpha_max: float
) -> float:
    """Directional-derivative bisection to width 1e-10 for non-quadratic models."""
    def dphi(alpha):
        _, grad = model_eval(s + alpha * p)
        return float(grad @ p)

    lo, hi = 0.0, alpha_max
    if dphi(hi) <= 0.0:
        return hi
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if dphi(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_subproblem(
    model_eval: Callable[[np.ndarray], tuple[float, np.ndarray]],
    region: CylinderRegion,
    trunc_radius: float | None = None,
    max_iter: int | None = None,
    quadratic: bool = True,
    on_iterate: Callable[[np.ndarray, float], None] | None = None,
) -> np.ndarray:
    """Minimize the overall model over the cylinder set, starting from zero.

    Conjugate-gradient directions with Fletcher-Reeves restarts while trials
    stay feasible; a trial outside the set is pulled back by the hybrid
    projection (warm-up length alternating between 0 and 4 by iteration
    parity) followed by a line search toward the projected point. Iterates
    never leave the set and the model value never increases. Non-finite
    model output aborts with the best feasible iterate found so far.
    ``on_iterate`` observes every accepted iterate and its model value.
    """
    n = region.dimension
    if trunc_radius is None:
        trunc_radius = region.truncation_radius()
    if max_iter is None:
        max_iter = 10 * n

    s = np.zeros(n)
    value, grad = model_eval(s)
    if on_iterate is not None:
        on_iterate(s, value)
    if not np.isfinite(value):
        return s
    p = -grad
    k_avg_cycle = (0, 4)
    for k in range(max_iter):
        if float(grad @ p) >= 0.0:
            break
        if quadratic:
            grad_probe = model_eval(s + p)[1]
            curv = float((grad_probe - grad) @ p)
            if not np.isfinite(curv):
                break
        alpha_max = _bound_step(s, p, trunc_radius)
        if alpha_max <= 0.0:
            break
        if quadratic:
            alpha = _line_search_quadratic(value, float(grad @ p), curv, alpha_max)
        else:
            alpha = _line_search_bisection(model_eval, s, p, alpha_max)
        if alpha <= 0.0:
            break
        trial = s + alpha * p
        if region.contains(trial):
            new_value, new_grad = model_eval(trial)
            if not np.isfinite(new_value) or new_value > value:
                break
            denom = float(grad @ grad)
            beta = float(new_grad @ new_grad) / denom if denom > 0 else 0.0
            s, value, grad = trial, new_value, new_grad
            if on_iterate is not None:
                on_iterate(s, value)
            p = -grad + beta * p
        else:
            s_hat = hybrid_project(trial, region, k_avg=k_avg_cycle[k % 2])
            p_hat = s_hat - s
            if quadratic:
                grad_probe = model_eval(s + p_hat)[1]
                curv = float((grad_probe - grad) @ p_hat)
                alpha_hat = _line_search_quadratic(
                    value, float(grad @ p_hat), curv, 1.0
                )
            else:
                alpha_hat = _line_search_bisection(model_eval, s, p_hat, 1.0)
            trial = s + alpha_hat * p_hat
            new_value, new_grad = model_eval(trial)
            if not np.isfinite(new_value) or new_value > value:
                break
            if float(np.linalg.norm(trial - s)) <= 1e-14 * (1.0 + float(np.linalg.norm(s))):
                s, value = trial, new_value
                if on_iterate is not None:
                    on_iterate(s, value)
                break
            s, value, grad = trial, new_value, new_grad
            if on_iterate is not None:
                on_iterate(s, value)
            p = -grad
    return s
