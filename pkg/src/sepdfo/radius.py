"""Iteration scoring and per-element trust-radius updates.

Each iteration gets a global score from the overall reduction ratio and each
element a local score from where its (predicted reduction, actual reduction)
pair falls; their sum in 0..4 picks the radius multiplier. The cancellation
correction ``zeta`` (negative predicted reductions over positive ones) bends
the per-element acceptance thresholds so elements are not punished for
tolerable antagonism between elements. When the global score is zero, at
least one element above the resolution floor is forced to shrink so the
radii cannot stagnate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["RadiusConfig", "IterationScore", "score", "update_radii"]


@dataclass(frozen=True)
class RadiusConfig:
    """Multipliers and ratio thresholds for radius management."""

    theta1: float = 0.5
    theta2: float = 1.0 / math.sqrt(2.0)
    theta3: float = math.sqrt(2.0)
    theta4: float = 2.0
    mu1: float = 0.1
    mu2: float = 0.7

    def __post_init__(self):
        if not (self.theta1 < self.theta2 < 1.0 < self.theta3 < self.theta4):
            raise ValueError("need theta1 < theta2 < 1 < theta3 < theta4")
        if not (0.0 < self.mu1 < self.mu2 < 1.0):
            raise ValueError("need 0 < mu1 < mu2 < 1")


@dataclass
class IterationScore:
    """Scores of one iteration plus the reductions they were derived from."""

    dm: np.ndarray
    df: np.ndarray
    ratios: np.ndarray
    r: float
    tau_global: int
    tau_local: np.ndarray
    total: np.ndarray
    zeta: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        assert np.array_equal(self.total, self.tau_global + self.tau_local)


def score(
    dm: np.ndarray,
    df: np.ndarray,
    ratios: np.ndarray,
    r: float,
    deltas: np.ndarray,
    rho: float,
    config: RadiusConfig | None = None,
) -> IterationScore:
    """Score one iteration from per-element and overall reductions.

    ``dm[i]`` and ``df[i]`` are predicted and actual reductions of element i
    (positive is better), ``ratios[i] = df[i]/dm[i]`` as guarded by the
    caller, ``r`` the overall reduction ratio. Elements in the
    negative-prediction branch are rewarded for staying close to the
    prediction line rather than for large ratios. With no positive predicted
    reduction at all, the cancellation correction is moot and ``zeta`` is
    zero. The final adjustment enforces that a globally failed iteration
    shrinks at least one radius that sits above the resolution floor.
    """
    config = config or RadiusConfig()
    dm = np.asarray(dm, dtype=float)
    df = np.asarray(df, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    q = dm.size
    if not (df.size == ratios.size == deltas.size == q):
        raise ValueError("score inputs must have one entry per element")

    pos = dm >= 0.0
    pos_sum = float(dm[pos].sum())
    neg_sum = float(dm[~pos].sum())
    zeta = neg_sum / pos_sum if pos_sum > 0.0 else 0.0

    eta = [-(1.0 - mu) * zeta for mu in (config.mu1, config.mu2)]
    alpha = [
        ((mu + e) * (1.0 + zeta) - 2.0 * zeta) / (1.0 - zeta)
        for mu, e in zip((config.mu1, config.mu2), eta)
    ]

    if r >= config.mu2:
        tau_global = 2
    elif r >= config.mu1:
        tau_global = 1
    else:
        tau_global = 0

    dm_total = float(dm.sum())
    tau_local = np.zeros(q, dtype=int)
    for i in range(q):
        offset2 = dm[i] - eta[1] * dm_total / q
        offset1 = dm[i] - eta[0] * dm_total / q
        if dm[i] >= 0.0:
            if ratios[i] >= alpha[1] or df[i] >= offset2:
                tau_local[i] = 2
            elif ratios[i] >= alpha[0] or df[i] >= offset1:
                tau_local[i] = 1
        else:
            if ratios[i] <= 2.0 - alpha[1] or df[i] >= offset2:
                tau_local[i] = 2
            elif ratios[i] <= 2.0 - alpha[0] or df[i] >= offset1:
                tau_local[i] = 1

    total = tau_global + tau_local
    if tau_global == 0:
        above = deltas > rho
        if not np.any((total <= 1) & above) and np.any(above):
            worst = int(np.argmin(np.where(above, total, np.iinfo(int).max)))
            total[worst] = 0
            tau_local[worst] = 0
    return IterationScore(
        dm=dm,
        df=df,
        ratios=ratios,
        r=float(r),
        tau_global=tau_global,
        tau_local=tau_local,
        total=total,
        zeta=zeta,
        alpha1=alpha[0],
        alpha2=alpha[1],
    )


def update_radii(
    iteration_score: IterationScore,
    deltas: np.ndarray,
    step_norms: np.ndarray,
    rho: float,
    config: RadiusConfig | None = None,
) -> np.ndarray:
    """New per-element radii from the total scores, floored at ``rho``.

    Totals map to multipliers theta4, theta3, 1, theta2, theta1 for scores
    4..0; expansions only fire when the step actually used the region
    (``||s[I_i]|| >= Delta_i / 2``), so idle radii never inflate.
    """
    config = config or RadiusConfig()
    deltas = np.asarray(deltas, dtype=float)
    step_norms = np.asarray(step_norms, dtype=float)
    out = np.empty_like(deltas)
    for i, tau in enumerate(iteration_score.total):
        used = step_norms[i] >= 0.5 * deltas[i]
        if tau >= 4:
            out[i] = (config.theta4 if used else 1.0) * deltas[i]
        elif tau == 3:
            out[i] = (config.theta3 if used else 1.0) * deltas[i]
        elif tau == 2:
            out[i] = deltas[i]
        elif tau == 1:
            out[i] = config.theta2 * deltas[i]
        else:
            out[i] = config.theta1 * deltas[i]
    return np.maximum(out, rho)
