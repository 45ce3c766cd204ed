"""Underdetermined quadratic interpolation models with low-rank updates.

Each element function is approximated by a quadratic built from N function
values, n+2 <= N <= (n+1)(n+2)/2, default N = 2n+1. Among all quadratics
matching the stored values, the initial model has the Hessian of least
Frobenius norm; each point replacement afterwards changes the Hessian by the
least Frobenius norm compatible with the new data (the derivative-free
symmetric Broyden update). The inverse of the interpolation KKT matrix is
held explicitly and revised with a rank update whose denominator

    sigma = alpha * beta + tau**2

measures how safely the swap preserves poisedness; sigma equals the ratio of
the new to the old KKT determinant. Internally all displacements from the
base point are scaled to unit size, which leaves sigma unchanged but keeps
the system well conditioned as radii shrink.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "ConfigError",
    "SingularSystemError",
    "QuadraticModel",
    "InterpolationSet",
    "SigmaReport",
    "default_capacity",
    "capacity_bounds",
    "init_set",
    "build_initial_model",
    "propose_update",
    "apply_update",
    "select_drop_index",
    "geometry_improvement_needed",
    "geometry_step",
    "dump_state",
]

#: Dense rebuild of the inverse KKT matrix after this many rank updates.
REBUILD_INTERVAL_FACTOR = 50

#: Residual slack (relative) accepted when checking interpolation conditions.
RESIDUAL_TOL = 1e-8


class ConfigError(ValueError):
    """Invalid interpolation-set configuration (e.g. capacity out of range)."""


class SingularSystemError(RuntimeError):
    """The interpolation system is numerically singular."""


@dataclass
class QuadraticModel:
    """Quadratic c + g.(x-center) + 0.5 (x-center).H.(x-center)."""

    center: np.ndarray
    c: float
    g: np.ndarray
    H: np.ndarray

    def value(self, x: np.ndarray) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(self.c + self.g @ d + 0.5 * d @ self.H @ d)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.center
        return self.g + self.H @ d

    def shift_center(self, new_center: np.ndarray) -> None:
        """Re-express the same quadratic around a new center (exact)."""
        new_center = np.asarray(new_center, dtype=float)
        d = new_center - self.center
        self.c = float(self.c + self.g @ d + 0.5 * d @ self.H @ d)
        self.g = self.g + self.H @ d
        self.center = new_center.copy()

    def copy(self) -> "QuadraticModel":
        return QuadraticModel(self.center.copy(), self.c, self.g.copy(), self.H.copy())


@dataclass
class SigmaReport:
    """Denominator of the rank update for one candidate point swap.

    ``sigma = alpha * beta + tau**2`` holds by construction. ``unstable``
    flags the cancellation pattern ``alpha * beta < -0.5 * tau**2`` that
    precedes a negative denominator.
    """

    sigma: float
    alpha: float
    beta: float
    tau: float
    unstable: bool


def capacity_bounds(dim: int) -> tuple[int, int]:
    return dim + 2, (dim + 1) * (dim + 2) // 2


def default_capacity(dim: int) -> int:
    return 2 * dim + 1


class InterpolationSet:
    """N interpolation points with values and the inverse KKT factorization.

    Points are stored in absolute coordinates. ``base`` is the expansion
    point of the KKT system and of the companion model; ``scale`` is the
    internal unit of displacement.
    """

    def __init__(self, points: np.ndarray, base: np.ndarray, scale: float):
        self.points = np.array(points, dtype=float)
        self.base = np.array(base, dtype=float)
        self.scale = float(scale)
        n_pts, dim = self.points.shape
        lo, hi = capacity_bounds(dim)
        if not lo <= n_pts <= hi:
            raise ConfigError(f"capacity {n_pts} outside [{lo}, {hi}] for dim {dim}")
        self.values = np.full(n_pts, np.nan)
        self.inv_kkt: np.ndarray | None = None
        self.updates_since_rebuild = 0

    @property
    def capacity(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def set_values(self, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.capacity,):
            raise ValueError("one value per interpolation point is required")
        if not np.all(np.isfinite(values)):
            raise ValueError("interpolation values must be finite")
        self.values = values.copy()

    # -- internal KKT machinery -------------------------------------------

    def _scaled_displacements(self, points: np.ndarray | None = None) -> np.ndarray:
        pts = self.points if points is None else points
        return (pts - self.base) / self.scale

    def _kkt_matrix(self) -> np.ndarray:
        d = self._scaled_displacements()
        n_pts, dim = d.shape
        m = n_pts + dim + 1
        w = np.zeros((m, m))
        w[:n_pts, :n_pts] = 0.5 * (d @ d.T) ** 2
        w[:n_pts, n_pts] = 1.0
        w[n_pts, :n_pts] = 1.0
        w[:n_pts, n_pts + 1 :] = d
        w[n_pts + 1 :, :n_pts] = d.T
        return w

    def _swap_vector(self, new_point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self._scaled_displacements()
        d_new = (np.asarray(new_point, dtype=float) - self.base) / self.scale
        w = np.empty(self.capacity + self.dim + 1)
        w[: self.capacity] = 0.5 * (d @ d_new) ** 2
        w[self.capacity] = 1.0
        w[self.capacity + 1 :] = d_new
        return w, d_new

    def factorize(self) -> None:
        """(Re)compute the inverse KKT matrix by a dense solve."""
        w = self._kkt_matrix()
        try:
            inv = scipy.linalg.inv(w)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystemError("interpolation system is singular") from exc
        if not np.all(np.isfinite(inv)):
            raise SingularSystemError("interpolation system is singular")
        identity_gap = np.max(np.abs(w @ inv - np.eye(w.shape[0])))
        if identity_gap > 1e-2:
            raise SingularSystemError(
                f"interpolation system too ill-conditioned (gap {identity_gap:.2e})"
            )
        self.inv_kkt = 0.5 * (inv + inv.T)
        self.updates_since_rebuild = 0

    def _ensure_factorized(self) -> np.ndarray:
        if self.inv_kkt is None:
            self.factorize()
        return self.inv_kkt

    def solve_min_frobenius(self, rhs_values: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Interpolate ``rhs_values`` with the least-Frobenius-norm Hessian.

        Returns unscaled ``(c, g, H)`` about ``base``.
        """
        inv = self._ensure_factorized()
        n_pts = self.capacity
        rhs = np.zeros(n_pts + self.dim + 1)
        rhs[:n_pts] = rhs_values
        z = inv @ rhs
        if not np.all(np.isfinite(z)):
            raise SingularSystemError("interpolation solve produced non-finite values")
        lam, c, g_scaled = z[:n_pts], z[n_pts], z[n_pts + 1 :]
        d = self._scaled_displacements()
        h_scaled = (d.T * lam) @ d
        g = g_scaled / self.scale
        h = h_scaled / self.scale**2
        return float(c), g, 0.5 * (h + h.T)

    def rescale(self, new_base: np.ndarray | None = None, new_scale: float | None = None) -> None:
        """Move the expansion point and/or displacement unit, then refactorize."""
        if new_base is not None:
            self.base = np.array(new_base, dtype=float)
        if new_scale is None:
            dist = np.linalg.norm(self.points - self.base, axis=1)
            new_scale = float(dist.max())
        self.scale = max(new_scale, np.finfo(float).tiny)
        self.factorize()

    def max_residual(self, model: QuadraticModel) -> float:
        return max(
            abs(model.value(self.points[j]) - self.values[j]) for j in range(self.capacity)
        )

    def copy(self) -> "InterpolationSet":
        out = InterpolationSet(self.points.copy(), self.base.copy(), self.scale)
        out.values = self.values.copy()
        out.inv_kkt = None if self.inv_kkt is None else self.inv_kkt.copy()
        out.updates_since_rebuild = self.updates_since_rebuild
        return out


def init_set(
    center: np.ndarray, radius: float, capacity: int | None = None
) -> tuple[InterpolationSet, np.ndarray]:
    """Initial point pattern around ``center``: +/- coordinate perturbations.

    Point order is center, then ``center + radius*e_i`` for each coordinate,
    then ``center - radius*e_i``; capacities below 2n+1 truncate the minus
    branch, capacities above it append pairwise perturbations
    ``center + radius*(e_a + e_b)`` in lexicographic (a, b) order.

    Returns the set (values unset) and the point array needing evaluation.
    """
    center = np.asarray(center, dtype=float)
    if radius <= 0 or not np.isfinite(radius):
        raise ConfigError("initial radius must be positive and finite")
    dim = center.size
    lo, hi = capacity_bounds(dim)
    n_pts = default_capacity(dim) if capacity is None else int(capacity)
    if not lo <= n_pts <= hi:
        raise ConfigError(f"capacity {n_pts} outside [{lo}, {hi}] for dim {dim}")
    pts = [center.copy()]
    for i in range(dim):
        pts.append(center + radius * np.eye(dim)[i])
    for i in range(dim):
        pts.append(center - radius * np.eye(dim)[i])
    if n_pts > 2 * dim + 1:
        for a in range(dim):
            for b in range(a + 1, dim):
                extra = center.copy()
                extra[a] += radius
                extra[b] += radius
                pts.append(extra)
    pts = np.array(pts[:n_pts])
    iset = InterpolationSet(pts, center, radius)
    return iset, pts.copy()


def build_initial_model(iset: InterpolationSet) -> QuadraticModel:
    """Least-Frobenius-norm-Hessian interpolant of the stored values."""
    if not np.all(np.isfinite(iset.values)):
        raise ValueError("all interpolation values must be set before modeling")
    c, g, h = iset.solve_min_frobenius(iset.values)
    model = QuadraticModel(iset.base.copy(), c, g, h)
    if iset.max_residual(model) > RESIDUAL_TOL * (1.0 + np.abs(iset.values).max()):
        raise SingularSystemError("initial interpolation residual too large")
    return model


def propose_update(
    iset: InterpolationSet, new_point: np.ndarray, drop_index: int
) -> SigmaReport:
    """Denominator of the rank update replacing point ``drop_index``.

    Pure: no state is mutated. ``sigma`` may be nonpositive; the caller
    decides what to do with it.
    """
    inv = iset._ensure_factorized()
    if not 0 <= drop_index < iset.capacity:
        raise IndexError("drop_index out of range")
    w, d_new = iset._swap_vector(new_point)
    hw = inv @ w
    alpha = float(inv[drop_index, drop_index])
    beta = float(0.5 * (d_new @ d_new) ** 2 - w @ hw)
    tau = float(hw[drop_index])
    sigma = alpha * beta + tau * tau
    unstable = (alpha * beta < -0.5 * tau * tau) or not np.isfinite(sigma)
    return SigmaReport(sigma=sigma, alpha=alpha, beta=beta, tau=tau, unstable=unstable)


def apply_update(
    iset: InterpolationSet,
    model: QuadraticModel,
    new_point: np.ndarray,
    new_value: float,
    drop_index: int,
) -> SigmaReport:
    """Replace one interpolation point and revise the model.

    The model change has the least Frobenius-norm Hessian difference among
    quadratics interpolating the new data. Raises ``SingularSystemError`` on
    numerical breakdown so restart machinery can take over.
    """
    if not np.isfinite(new_value):
        raise ValueError("cannot store a non-finite interpolation value")
    inv = iset._ensure_factorized()
    report = propose_update(iset, new_point, drop_index)
    if report.sigma == 0.0 or not np.isfinite(report.sigma):
        raise SingularSystemError("zero sigma denominator in interpolation update")
    n_pts = iset.capacity
    w, _ = iset._swap_vector(new_point)
    hw = inv @ w
    e = np.zeros(n_pts + iset.dim + 1)
    e[drop_index] = 1.0
    he = inv[:, drop_index].copy()
    ew = e - hw
    inv_new = inv + (
        report.alpha * np.outer(ew, ew)
        - report.beta * np.outer(he, he)
        + report.tau * (np.outer(he, ew) + np.outer(ew, he))
    ) / report.sigma
    inv_new = 0.5 * (inv_new + inv_new.T)
    if not np.all(np.isfinite(inv_new)):
        raise SingularSystemError("non-finite inverse KKT entries after update")

    residual = new_value - model.value(new_point)
    iset.points[drop_index] = np.asarray(new_point, dtype=float)
    iset.values[drop_index] = float(new_value)
    iset.inv_kkt = inv_new

    # Lagrange polynomial of the swapped-in point, from column drop_index of
    # the new inverse, expressed on the new point set.
    lam = inv_new[:n_pts, drop_index]
    c_hat = inv_new[n_pts, drop_index]
    g_hat = inv_new[n_pts + 1 :, drop_index]
    d = iset._scaled_displacements()
    model.c = float(model.c + residual * c_hat)
    model.g = model.g + residual * (g_hat / iset.scale)
    h_lag = (d.T * lam) @ d / iset.scale**2
    model.H = model.H + residual * 0.5 * (h_lag + h_lag.T)
    if not (
        np.isfinite(model.c)
        and np.all(np.isfinite(model.g))
        and np.all(np.isfinite(model.H))
    ):
        raise SingularSystemError("non-finite model coefficients after update")

    iset.updates_since_rebuild += 1
    if report.unstable or iset.updates_since_rebuild >= REBUILD_INTERVAL_FACTOR * n_pts:
        refresh(iset, model)
    else:
        # The rank update loses precision exactly when the set geometry is
        # marginal; an untrustworthy inverse turns every later denominator
        # into noise, so verify a few inverse columns and refactorize on
        # drift.
        w_full = iset._kkt_matrix()
        m = w_full.shape[0]
        probe = sorted({drop_index, 0, n_pts - 1, m - 1})
        gap = np.max(
            np.abs(w_full @ iset.inv_kkt[:, probe] - np.eye(m)[:, probe])
        )
        if not np.isfinite(gap) or gap > 1e-8:
            refresh(iset, model)
    return report


def refresh(
    iset: InterpolationSet, model: QuadraticModel, new_base: np.ndarray | None = None
) -> None:
    """Drift guard: dense refactorization plus minimal model correction.

    The expansion point moves to ``new_base`` when given, else to the stored
    point nearest the cluster centroid; a base far from a tight cluster makes
    the displacement vectors nearly parallel. The model shift is exact, and
    the correction added afterwards is the least-Frobenius-norm-Hessian
    interpolant of the current residuals, so accumulated curvature
    information is preserved.
    """
    if new_base is None:
        centroid = iset.points.mean(axis=0)
        nearest = int(np.argmin(np.linalg.norm(iset.points - centroid, axis=1)))
        new_base = iset.points[nearest].copy()
    model.shift_center(new_base)
    iset.rescale(new_base=new_base)
    res = iset.values - np.array([model.value(p) for p in iset.points])
    if np.max(np.abs(res)) > 0.0:
        dc, dg, dh = iset.solve_min_frobenius(res)
        model.c += dc
        model.g = model.g + dg
        model.H = model.H + dh
    tol = RESIDUAL_TOL * (1.0 + np.abs(iset.values).max())
    if iset.max_residual(model) > tol:
        raise SingularSystemError("model correction failed to restore interpolation")


def _incumbent_index(iset: InterpolationSet, incumbent: np.ndarray) -> int | None:
    for j in range(iset.capacity):
        if np.array_equal(iset.points[j], incumbent):
            return j
    return None


def select_drop_index(
    iset: InterpolationSet,
    incumbent: np.ndarray,
    new_point: np.ndarray,
    radius: float | None = None,
) -> int:
    """Index whose replacement by ``new_point`` best preserves the geometry.

    Merit per candidate j combines the swap denominator with distance from
    the incumbent, ``|sigma_j| * max(1, ||y_j - incumbent||^6 / radius^6)``.
    The sixth power is needed because the denominator itself scales roughly
    like the inverse fourth power of a candidate's distance, so a weaker
    weight would let stale faraway points linger. The incumbent's own point
    is never dropped. ``radius`` defaults to the step length
    ``||new_point - incumbent||``.
    """
    incumbent = np.asarray(incumbent, dtype=float)
    if radius is None:
        radius = float(np.linalg.norm(np.asarray(new_point) - incumbent))
    if radius <= 0:
        radius = 1.0
    keep = _incumbent_index(iset, incumbent)
    merits = np.full(iset.capacity, -np.inf)
    dist = np.linalg.norm(iset.points - incumbent, axis=1)
    for j in range(iset.capacity):
        if j == keep:
            continue
        sigma_j = propose_update(iset, new_point, j).sigma
        merits[j] = abs(sigma_j) * max(1.0, (dist[j] / radius) ** 6)
    return int(np.argmax(merits))


def geometry_improvement_needed(
    iset: InterpolationSet, incumbent: np.ndarray, delta: float
) -> bool:
    """True when some stored point strayed beyond twice the trust radius."""
    dist = np.linalg.norm(iset.points - np.asarray(incumbent, dtype=float), axis=1)
    return bool(np.any(dist > 2.0 * delta))


def _lagrange_coefficients(
    iset: InterpolationSet, index: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Unscaled (c, g, lam) of the Lagrange polynomial of stored point ``index``."""
    inv = iset._ensure_factorized()
    n_pts = iset.capacity
    lam = inv[:n_pts, index]
    c = float(inv[n_pts, index])
    g = inv[n_pts + 1 :, index] / iset.scale
    return c, g, lam


def _lagrange_gradient(
    iset: InterpolationSet, g: np.ndarray, lam: np.ndarray, x: np.ndarray
) -> np.ndarray:
    d = iset._scaled_displacements()
    dx = (np.asarray(x, dtype=float) - iset.base) / iset.scale
    return g + (d.T @ (lam * (d @ dx))) / iset.scale


def geometry_step(
    iset: InterpolationSet,
    model: QuadraticModel,
    incumbent: np.ndarray,
    delta: float,
    threshold: float = 1e-8,
) -> tuple[np.ndarray, int] | None:
    """Pick a point within ``delta`` of the incumbent to replace the farthest one.

    Candidates are the extremes of the Lagrange polynomial of the drop target
    along its own gradient direction through the incumbent (both endpoints
    and any interior stationary point) plus a coordinate sweep; the candidate
    maximizing ``|sigma|`` wins. Returns ``(point, drop_index)``, or ``None``
    when every candidate's ``|sigma|`` falls at or below ``threshold``
    (caller treats that as no improvement available).
    """
    incumbent = np.asarray(incumbent, dtype=float)
    keep = _incumbent_index(iset, incumbent)
    dist = np.linalg.norm(iset.points - incumbent, axis=1)
    if keep is not None:
        dist[keep] = -np.inf
    drop = int(np.argmax(dist))
    if not np.isfinite(dist[drop]) or dist[drop] <= 0:
        return None

    candidates = []
    c_lag, g_lag, lam = _lagrange_coefficients(iset, drop)
    grad = _lagrange_gradient(iset, g_lag, lam, incumbent)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > 0:
        u = grad / gnorm
        lag_at = lambda x: _lagrange_value(iset, c_lag, g_lag, lam, x)
        v0 = lag_at(incumbent)
        v_plus = lag_at(incumbent + delta * u)
        v_minus = lag_at(incumbent - delta * u)
        # 1-D quadratic through the three samples; |value| peaks at an end
        # or at the interior vertex.
        a = 0.5 * (v_plus + v_minus) - v0
        b = 0.5 * (v_plus - v_minus)
        candidates.extend([incumbent + delta * u, incumbent - delta * u])
        if a != 0.0:
            t_star = -b / (2.0 * a)
            if abs(t_star) < 1.0 and t_star != 0.0:
                candidates.append(incumbent + t_star * delta * u)
    for k in range(iset.dim):
        step = np.zeros(iset.dim)
        step[k] = delta
        candidates.append(incumbent + step)
        candidates.append(incumbent - step)

    best_sigma = 0.0
    best_point = None
    for cand in candidates:
        sigma = propose_update(iset, cand, drop).sigma
        if np.isfinite(sigma) and abs(sigma) > abs(best_sigma):
            best_sigma = sigma
            best_point = cand
    if best_point is None or abs(best_sigma) <= threshold:
        return None
    return best_point, drop


def _lagrange_value(iset, c, g, lam, x) -> float:
    d = iset._scaled_displacements()
    dx = np.asarray(x, dtype=float) - iset.base
    dx_scaled = dx / iset.scale
    quad = 0.5 * float(lam @ (d @ dx_scaled) ** 2)
    return float(c + g @ dx + quad)


def dump_state(iset: InterpolationSet, model: QuadraticModel) -> dict:
    """JSON-compatible snapshot of a set and model, for fixtures and debugging."""
    return {
        "base": iset.base.tolist(),
        "scale": iset.scale,
        "points": iset.points.tolist(),
        "values": iset.values.tolist(),
        "model": {
            "center": model.center.tolist(),
            "c": model.c,
            "g": model.g.tolist(),
            "H": model.H.tolist(),
        },
    }
