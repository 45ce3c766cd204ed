import math

import numpy as np
import pytest

from sepdfo.interp import (
    ConfigError,
    SingularSystemError,
    apply_update,
    build_initial_model,
    capacity_bounds,
    default_capacity,
    dump_state,
    geometry_improvement_needed,
    geometry_step,
    init_set,
    propose_update,
    refresh,
    select_drop_index,
)


def make_set(center, radius=1.0, capacity=None, fn=None):
    iset, points = init_set(np.asarray(center, dtype=float), radius, capacity)
    fn = fn or (lambda u: 0.0)
    iset.set_values([fn(p) for p in points])
    model = build_initial_model(iset)
    return iset, model


def kkt_oracle(points, base):
    """Independent unscaled KKT matrix build for determinant-ratio checks."""
    d = np.asarray(points) - np.asarray(base)
    N, n = d.shape
    W = np.zeros((N + n + 1, N + n + 1))
    W[:N, :N] = 0.5 * (d @ d.T) ** 2
    W[:N, N] = 1.0
    W[N, :N] = 1.0
    W[:N, N + 1 :] = d
    W[N + 1 :, :N] = d.T
    return W


def min_frobenius_oracle(points, base, values, H_ref=None):
    """Equality-constrained least-norm quadratic fit via cvxpy."""
    import cvxpy as cp

    points = np.asarray(points, dtype=float)
    base = np.asarray(base, dtype=float)
    N, n = points.shape
    c = cp.Variable()
    g = cp.Variable(n)
    H = cp.Variable((n, n), symmetric=True)
    cons = []
    for j in range(N):
        d = points[j] - base
        cons.append(c + g @ d + 0.5 * cp.quad_form(d, H) == values[j])
    target = H if H_ref is None else H - H_ref
    prob = cp.Problem(cp.Minimize(cp.sum_squares(target)), cons)
    prob.solve()
    assert prob.status == "optimal"
    return float(c.value), np.asarray(g.value), np.asarray(H.value)


class TestInitSet:
    def test_default_cross_pattern(self):
        _, points = init_set(np.zeros(2), 1.0, 5)
        expected = [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)]
        assert [tuple(p) for p in points] == expected

    def test_one_dimensional(self):
        _, points = init_set(np.array([3.0]), 0.5, 3)
        assert [p[0] for p in points] == [3.0, 3.5, 2.5]

    def test_truncated_minus_branch(self):
        iset, points = init_set(np.zeros(2), 1.0, 4)
        assert [tuple(p) for p in points] == [(0, 0), (1, 0), (0, 1), (-1, 0)]
        # the truncated pattern still determines a model
        iset.set_values([0.0, 1.0, 2.0, 3.0])
        model = build_initial_model(iset)
        for p, v in zip(iset.points, iset.values):
            assert model.value(p) == pytest.approx(v, abs=1e-10)

    def test_pairwise_extension_above_default(self):
        _, points = init_set(np.zeros(3), 1.0, 9)
        assert [tuple(p) for p in points[7:]] == [(1, 1, 0), (1, 0, 1)]

    def test_capacity_bounds_enforced(self):
        with pytest.raises(ConfigError):
            init_set(np.zeros(2), 1.0, 3)
        with pytest.raises(ConfigError):
            init_set(np.zeros(2), 1.0, 7)
        assert capacity_bounds(2) == (4, 6)
        assert default_capacity(2) == 5

    def test_nonpositive_radius_rejected(self):
        with pytest.raises(ConfigError):
            init_set(np.zeros(2), 0.0)


class TestInitialModel:
    def test_linear_function_recovered(self):
        iset, model = make_set([3.0], radius=0.5, fn=lambda u: u[0])
        assert model.c == pytest.approx(3.0, abs=1e-12)
        assert model.g[0] == pytest.approx(1.0, abs=1e-12)
        assert abs(model.H[0, 0]) < 1e-10

    def test_sphere_recovered_on_cross(self):
        iset, model = make_set([0.0, 0.0], fn=lambda u: u[0] ** 2 + u[1] ** 2)
        assert np.allclose(model.g, 0.0, atol=1e-10)
        assert np.allclose(model.H, 2.0 * np.eye(2), atol=1e-10)

    def test_all_zero_values(self):
        iset, model = make_set([1.0, -2.0], fn=lambda u: 0.0)
        assert model.c == 0.0
        assert np.allclose(model.g, 0.0)
        assert np.allclose(model.H, 0.0)

    def test_matches_least_norm_oracle(self):
        rng = np.random.default_rng(7)
        for n in (2, 3):
            center = rng.normal(size=n)
            iset, points = init_set(center, 1.0)
            values = rng.normal(size=len(points))
            iset.set_values(values)
            model = build_initial_model(iset)
            c, g, H = min_frobenius_oracle(points, center, values)
            assert model.c == pytest.approx(c, abs=1e-7)
            assert np.allclose(model.g, g, atol=1e-7)
            assert np.allclose(model.H, H, atol=1e-7)


class TestProposeUpdate:
    def test_identity_replacement_sigma_one(self):
        iset, _ = make_set([0.0, 0.0], fn=lambda u: u[0] + u[1])
        report = propose_update(iset, iset.points[2], 2)
        assert report.sigma == pytest.approx(1.0, abs=1e-12)
        assert report.sigma == report.alpha * report.beta + report.tau**2

    def test_duplicate_of_retained_point_sigma_zero(self):
        iset, _ = make_set([0.0, 0.0], fn=lambda u: u[0])
        report = propose_update(iset, iset.points[1], 2)
        assert abs(report.sigma) < 1e-10

    def test_sigma_matches_determinant_ratio(self):
        rng = np.random.default_rng(11)
        for trial in range(40):
            n = int(rng.integers(1, 4))
            center = rng.normal(size=n)
            iset, points = init_set(center, 1.0)
            iset.set_values(rng.normal(size=len(points)))
            build_initial_model(iset)
            new_point = center + rng.normal(size=n)
            t = int(rng.integers(0, len(points)))
            report = propose_update(iset, new_point, t)
            W_old = kkt_oracle(iset.points, center)
            pts_new = iset.points.copy()
            pts_new[t] = new_point
            W_new = kkt_oracle(pts_new, center)
            ratio = np.linalg.det(W_new) / np.linalg.det(W_old)
            assert report.sigma == pytest.approx(ratio, rel=1e-7, abs=1e-9)

    def test_does_not_mutate_state(self):
        iset, _ = make_set([0.0, 0.0], fn=lambda u: u[0])
        before_pts = iset.points.copy()
        before_inv = iset.inv_kkt.copy()
        propose_update(iset, np.array([0.3, 0.4]), 1)
        assert np.array_equal(iset.points, before_pts)
        assert np.array_equal(iset.inv_kkt, before_inv)


class TestApplyUpdate:
    def test_self_replacement_is_identity(self):
        iset, model = make_set([0.0, 0.0], fn=lambda u: u[0] ** 2 - u[1])
        before = model.copy()
        apply_update(iset, model, iset.points[1].copy(), iset.values[1], 1)
        assert model.c == pytest.approx(before.c, abs=1e-12)
        assert np.allclose(model.g, before.g, atol=1e-12)
        assert np.allclose(model.H, before.H, atol=1e-12)

    def test_one_dimensional_quadratic_stays_exact(self):
        f = lambda u: u[0] ** 2
        iset, model = make_set([0.0], fn=f)
        rng = np.random.default_rng(2)
        for _ in range(30):
            new_point = np.array([rng.uniform(-2, 2)])
            t = select_drop_index(iset, iset.points[0], new_point, radius=1.0)
            if abs(propose_update(iset, new_point, t).sigma) < 1e-8:
                continue
            apply_update(iset, model, new_point, f(new_point), t)
        probe = np.array([0.37])
        assert model.value(probe) == pytest.approx(float(probe[0] ** 2), abs=1e-8)

    def test_interpolation_holds_after_update(self):
        rng = np.random.default_rng(5)
        f = lambda u: math.sin(u[0]) + u[1] ** 2
        iset, model = make_set([0.2, -0.3], fn=f)
        new_point = np.array([0.5, 0.1])
        apply_update(iset, model, new_point, f(new_point), 3)
        for p, v in zip(iset.points, iset.values):
            assert model.value(p) == pytest.approx(v, abs=1e-9)

    def test_hessian_change_matches_least_norm_oracle(self):
        rng = np.random.default_rng(9)
        for n in (2, 3, 4):
            f = lambda u: float(np.sin(u).sum() + (u**2).sum())
            center = rng.normal(size=n) * 0.2
            iset, points = init_set(center, 1.0)
            iset.set_values([f(p) for p in points])
            model = build_initial_model(iset)
            H_old = model.H.copy()
            new_point = center + rng.normal(size=n) * 0.8
            t = int(rng.integers(1, len(points)))
            apply_update(iset, model, new_point, f(new_point), t)
            c, g, H = min_frobenius_oracle(
                iset.points, center, iset.values, H_ref=H_old
            )
            assert np.allclose(model.H, H, atol=1e-7)
            assert np.linalg.norm(model.H - H_old) == pytest.approx(
                np.linalg.norm(H - H_old), abs=1e-7
            )

    def test_update_then_reverse_restores_system(self):
        # The point set and inverse factorization return exactly; the model
        # returns whenever the quadratic is fully determined by the set, as
        # in one dimension with three points.
        f = lambda u: float(u[0] ** 2 + 0.5 * u[0])
        iset, model = make_set([0.0], fn=f)
        before_model = model.copy()
        before_inv = iset.inv_kkt.copy()
        before_pts = iset.points.copy()
        old_point = iset.points[2].copy()
        old_value = iset.values[2]
        new_point = np.array([0.4])
        apply_update(iset, model, new_point, f(new_point), 2)
        apply_update(iset, model, old_point, old_value, 2)
        assert np.allclose(iset.points, before_pts)
        assert np.allclose(iset.inv_kkt, before_inv, atol=1e-7)
        assert model.c == pytest.approx(before_model.c, abs=1e-7)
        assert np.allclose(model.g, before_model.g, atol=1e-7)
        assert np.allclose(model.H, before_model.H, atol=1e-7)

    def test_update_then_reverse_restores_inverse_2d(self):
        f = lambda u: float(u[0] ** 2 + 0.5 * u[0] * u[1])
        iset, model = make_set([0.0, 0.0], fn=f)
        before_inv = iset.inv_kkt.copy()
        old_point = iset.points[2].copy()
        old_value = iset.values[2]
        new_point = np.array([0.4, 0.6])
        apply_update(iset, model, new_point, f(new_point), 2)
        apply_update(iset, model, old_point, old_value, 2)
        assert np.allclose(iset.inv_kkt, before_inv, atol=1e-7)
        for p, v in zip(iset.points, iset.values):
            assert model.value(p) == pytest.approx(v, abs=1e-9)

    def test_nonfinite_value_rejected(self):
        iset, model = make_set([0.0], fn=lambda u: u[0])
        with pytest.raises(ValueError):
            apply_update(iset, model, np.array([0.5]), math.nan, 1)

    def test_zero_sigma_raises_singularity(self):
        iset, model = make_set([0.0, 0.0], fn=lambda u: u[0])
        with pytest.raises(SingularSystemError):
            apply_update(iset, model, iset.points[1].copy(), 0.0, 2)


class TestSelectDropIndex:
    def test_far_point_dropped_first(self):
        iset, model = make_set([0.0, 0.0], fn=lambda u: u[0])
        iset.points[3] = np.array([10.0, 0.0])
        iset.values[3] = 10.0
        refresh(iset, model)
        incumbent = iset.points[0]
        new_point = np.array([0.2, 0.3])
        assert select_drop_index(iset, incumbent, new_point, radius=1.0) == 3

    def test_equidistant_picks_largest_sigma(self):
        iset, _ = make_set([0.0, 0.0], fn=lambda u: u[0])
        incumbent = iset.points[0]
        new_point = np.array([0.5, 0.5])
        merits = []
        for j in range(1, iset.capacity):
            merits.append(abs(propose_update(iset, new_point, j).sigma))
        expected = 1 + int(np.argmax(merits))
        assert select_drop_index(iset, incumbent, new_point, radius=1.0) == expected

    def test_never_drops_incumbent(self):
        iset, _ = make_set([0.0], fn=lambda u: u[0] ** 2)
        incumbent = iset.points[0]
        rng = np.random.default_rng(0)
        for _ in range(20):
            new_point = np.array([rng.uniform(-1, 1)])
            j = select_drop_index(iset, incumbent, new_point)
            assert not np.array_equal(iset.points[j], incumbent)

    def test_matches_exhaustive_enumeration_1d(self):
        iset, _ = make_set([0.0], fn=lambda u: u[0] ** 2)
        incumbent = iset.points[0]
        new_point = np.array([0.7])
        radius = 1.0
        merits = np.full(iset.capacity, -np.inf)
        dist = np.linalg.norm(iset.points - incumbent, axis=1)
        for j in range(iset.capacity):
            if np.array_equal(iset.points[j], incumbent):
                continue
            merits[j] = abs(propose_update(iset, new_point, j).sigma) * max(
                1.0, (dist[j] / radius) ** 6
            )
        assert select_drop_index(iset, incumbent, new_point, radius=radius) == int(
            np.argmax(merits)
        )


class TestGeometryOps:
    def test_no_improvement_when_points_close(self):
        iset, _ = make_set([0.0, 0.0], radius=1.0, fn=lambda u: u[0])
        assert not geometry_improvement_needed(iset, iset.points[0], 1.0)

    def test_improvement_when_point_is_far(self):
        iset, model = make_set([0.0, 0.0], fn=lambda u: u[0])
        iset.points[2] = np.array([0.0, 3.0])
        refresh(iset, model)
        assert geometry_improvement_needed(iset, iset.points[0], 1.0)

    def test_boundary_is_strict(self):
        iset, model = make_set([0.0], radius=1.0, fn=lambda u: u[0])
        # farthest point is exactly at 2 * delta for delta = 0.5
        assert not geometry_improvement_needed(iset, iset.points[0], 0.5)
        assert geometry_improvement_needed(iset, iset.points[0], 0.49)

    def test_one_dimensional_picks_larger_sigma_endpoint(self):
        f = lambda u: u[0] ** 2
        iset, model = make_set([0.0], fn=f)
        iset.points[2] = np.array([5.0])
        iset.values[2] = 25.0
        refresh(iset, model)
        delta = 0.5
        incumbent = iset.points[0]
        proposal = geometry_step(iset, model, incumbent, delta)
        assert proposal is not None
        point, drop = proposal
        assert drop == 2
        sig_plus = abs(propose_update(iset, np.array([delta]), 2).sigma)
        sig_minus = abs(propose_update(iset, np.array([-delta]), 2).sigma)
        expected = delta if sig_plus >= sig_minus else -delta
        assert point[0] == pytest.approx(expected)

    def test_step_tracks_dense_grid_search(self):
        f = lambda u: u[0] ** 2 + u[1] ** 2
        iset, model = make_set([0.0, 0.0], fn=f)
        iset.points[4] = np.array([0.0, -2.5])
        iset.values[4] = 6.25
        refresh(iset, model)
        delta = 1.0
        incumbent = iset.points[0]
        proposal = geometry_step(iset, model, incumbent, delta)
        assert proposal is not None
        point, drop = proposal
        assert drop == 4
        assert np.linalg.norm(point - incumbent) <= delta + 1e-12
        sigma_returned = abs(propose_update(iset, point, drop).sigma)
        # dense grid over the ball at resolution delta / 50
        grid = np.linspace(-delta, delta, 101)
        best = 0.0
        for gx in grid:
            for gy in grid:
                cand = incumbent + np.array([gx, gy])
                if np.linalg.norm(cand - incumbent) > delta:
                    continue
                best = max(best, abs(propose_update(iset, cand, drop).sigma))
        assert sigma_returned >= 0.5 * best
        # applying the proposal clears the geometry flag for this radius
        apply_update(iset, model, point, f(point), drop)
        assert not geometry_improvement_needed(iset, incumbent, delta)


class TestMaintenance:
    def test_fuzz_residuals_stay_small(self):
        rng = np.random.default_rng(13)
        f = lambda u: float(np.cos(u).sum() + 0.5 * (u**2).sum())
        iset, model = make_set([0.4, -0.2], fn=f)
        max_rel = 0.0
        for _ in range(400):
            new_point = iset.base + rng.normal(size=2)
            t = select_drop_index(iset, iset.points[0], new_point, radius=1.0)
            if propose_update(iset, new_point, t).sigma <= 1e-5:
                continue
            apply_update(iset, model, new_point, f(new_point), t)
            rel = iset.max_residual(model) / (1.0 + np.abs(iset.values).max())
            max_rel = max(max_rel, rel)
        assert max_rel <= 1e-8

    def test_dump_state_round_trips_json(self):
        import json

        iset, model = make_set([0.0, 0.0], fn=lambda u: u[0])
        snapshot = json.loads(json.dumps(dump_state(iset, model)))
        assert snapshot["points"] == iset.points.tolist()
        assert snapshot["model"]["c"] == model.c
