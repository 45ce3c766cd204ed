"""Acceptance gate: one test per criterion, each printing its verdict.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. Everything here uses only fixed seeds; total runtime of this
module is itself one of the criteria.
"""

import json
import math
import time

import numpy as np
import pytest

from sepdfo import SolverOptions, minimize
from sepdfo.bench import (
    ExperimentConfig,
    converged,
    corpus_entry,
    data_profile,
    make_single_element,
    performance_profile,
    run_experiment,
    speedup_profile,
)
from sepdfo.interp import (
    apply_update,
    build_initial_model,
    init_set,
    propose_update,
    select_drop_index,
)
from sepdfo.radius import IterationScore, RadiusConfig, score, update_radii
from sepdfo.tregion import (
    CylinderRegion,
    dykstra_project,
    shrink,
    solve_subproblem,
    steinmetz_project,
)

_MODULE_T0 = time.monotonic()


def report(name: str, ok: bool, detail: str = "") -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"[{verdict}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def random_region(rng, n_max=12, q_max=6):
    n = int(rng.integers(2, n_max + 1))
    q = int(rng.integers(2, q_max + 1))
    index_sets = []
    for _ in range(q):
        size = int(rng.integers(1, n + 1))
        index_sets.append(np.sort(rng.choice(n, size=size, replace=False)))
    covered = np.zeros(n, dtype=bool)
    for ix in index_sets:
        covered[ix] = True
    missing = np.flatnonzero(~covered)
    if missing.size:
        index_sets[0] = np.sort(np.union1d(index_sets[0], missing))
    radii = rng.uniform(0.1, 2.0, size=q)
    return CylinderRegion(index_sets, radii, n)


def sample_outside(rng, region):
    while True:
        s = rng.normal(size=region.dimension) * 2.0
        if region.ratios(s).max() > 1.0:
            return s


def test_shrink_theorem_suite():
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    checked = 0
    while checked < 1000:
        region = random_region(rng)
        s = sample_outside(rng, region)
        ratios = region.ratios(s)
        top = ratios.max()
        group = [i for i in range(region.q) if ratios[i] >= top * (1 - 1e-12)]
        s_star, joining = shrink(s, region, group)
        new_ratios = region.ratios(s_star)
        common = new_ratios[group[0]]
        for i in group:
            assert abs(new_ratios[i] - common) <= 1e-10 * max(1.0, common)
        if joining is None:
            # terminal: tied ratios hit one, everything else feasible
            assert abs(common - 1.0) <= 1e-10
            assert np.all(new_ratios <= 1.0 + 1e-10)
        else:
            # one more element joins at the common ratio
            assert joining not in group
            assert abs(new_ratios[joining] - common) <= 1e-10 * max(1.0, common)
            assert np.all(new_ratios <= common * (1 + 1e-10))
        checked += 1
    elapsed = time.monotonic() - t0
    report(
        "shrink outputs satisfy the tied-ratio alternatives on 1000 instances",
        elapsed < 5.0,
        f"{elapsed:.2f}s",
    )


def test_steinmetz_projection_quality():
    from sepdfo.tregion import hybrid_project

    rng = np.random.default_rng(77)
    t0 = time.monotonic()
    within_hybrid = 0
    within_plain = 0
    total = 500
    for _ in range(total):
        n = int(rng.integers(5, 11))
        region = random_region(rng, n_max=n, q_max=6)
        s = sample_outside(rng, region)
        satisfied = int(np.count_nonzero(region.ratios(s) <= 1.0))
        out, calls = steinmetz_project(s, region, return_calls=True)
        assert region.contains(out), "membership must hold exactly"
        assert calls <= region.q - satisfied, "shrink call budget exceeded"
        exact = dykstra_project(s, region, tol=1e-10)
        d_exact = np.linalg.norm(s - exact)
        if np.linalg.norm(s - out) <= 1.5 * d_exact + 1e-12:
            within_plain += 1
        d_hybrid = np.linalg.norm(s - hybrid_project(s, region, 4))
        if d_hybrid <= 1.5 * d_exact + 1e-12:
            within_hybrid += 1
    elapsed = time.monotonic() - t0
    ok = within_hybrid / total >= 0.95 and elapsed < 30.0
    report(
        "projection membership, call budget, and accuracy vs the exact oracle",
        ok,
        f"hybrid {within_hybrid}/{total}, plain {within_plain}/{total}, {elapsed:.1f}s",
    )


def test_interpolation_engine_fuzz_and_oracles():
    rng = np.random.default_rng(5)
    updates_done = 0
    worst_rel = 0.0
    while updates_done < 10000:
        dim = int(rng.integers(1, 5))
        center = rng.normal(size=dim)
        coeffs = rng.normal(size=(dim, dim))

        def f(u, A=coeffs):
            return float(np.sin(u).sum() + 0.5 * (u @ A @ A.T @ u))

        iset, points = init_set(center, 1.0)
        iset.set_values([f(p) for p in points])
        model = build_initial_model(iset)
        incumbent = iset.points[0].copy()
        for _ in range(int(rng.integers(20, 60))):
            new_point = incumbent + rng.normal(size=dim) * rng.uniform(0.1, 2.0)
            drop = select_drop_index(iset, incumbent, new_point, radius=1.0)
            if propose_update(iset, new_point, drop).sigma <= 1e-5:
                continue
            apply_update(iset, model, new_point, f(new_point), drop)
            updates_done += 1
            rel = iset.max_residual(model) / (1.0 + np.abs(iset.values).max())
            worst_rel = max(worst_rel, rel)
            if rel > 1e-8:
                break
        if worst_rel > 1e-8:
            break
    report(
        "interpolation residual stays below 1e-8 across a 10,000-update fuzz",
        worst_rel <= 1e-8 and updates_done >= 10000,
        f"worst relative residual {worst_rel:.2e} over {updates_done} updates",
    )

    # dense oracle agreement: determinant ratio and least-norm Hessian change
    import cvxpy as cp

    def kkt(points, base):
        d = np.asarray(points) - np.asarray(base)
        N, n = d.shape
        W = np.zeros((N + n + 1, N + n + 1))
        W[:N, :N] = 0.5 * (d @ d.T) ** 2
        W[:N, N] = 1.0
        W[N, :N] = 1.0
        W[:N, N + 1 :] = d
        W[N + 1 :, :N] = d.T
        return W

    rng = np.random.default_rng(17)
    worst_sigma_err = 0.0
    for _ in range(60):
        dim = int(rng.integers(1, 4))
        center = rng.normal(size=dim)
        iset, points = init_set(center, 1.0)
        iset.set_values(rng.normal(size=len(points)))
        build_initial_model(iset)
        new_point = center + rng.normal(size=dim)
        t = int(rng.integers(0, len(points)))
        sigma = propose_update(iset, new_point, t).sigma
        pts_new = iset.points.copy()
        pts_new[t] = new_point
        ratio = np.linalg.det(kkt(pts_new, center)) / np.linalg.det(
            kkt(iset.points, center)
        )
        worst_sigma_err = max(
            worst_sigma_err, abs(sigma - ratio) / max(1.0, abs(ratio))
        )

    worst_frob_err = 0.0
    for dim in (2, 3, 4):
        center = rng.normal(size=dim) * 0.3

        def f(u):
            return float(np.cos(u).sum() + (u**2).sum())

        iset, points = init_set(center, 1.0)
        iset.set_values([f(p) for p in points])
        model = build_initial_model(iset)
        H_old = model.H.copy()
        new_point = center + rng.normal(size=dim)
        apply_update(iset, model, new_point, f(new_point), 1)
        c_var = cp.Variable()
        g_var = cp.Variable(dim)
        H_var = cp.Variable((dim, dim), symmetric=True)
        cons = [
            c_var + g_var @ (p - center) + 0.5 * cp.quad_form(p - center, H_var)
            == v
            for p, v in zip(iset.points, iset.values)
        ]
        prob = cp.Problem(cp.Minimize(cp.sum_squares(H_var - H_old)), cons)
        prob.solve()
        worst_frob_err = max(worst_frob_err, float(np.abs(model.H - H_var.value).max()))
    report(
        "sigma matches determinant ratios and updates match the least-norm oracle",
        worst_sigma_err <= 1e-7 and worst_frob_err <= 1e-7,
        f"sigma err {worst_sigma_err:.2e}, Frobenius err {worst_frob_err:.2e}",
    )


def test_subproblem_solver_quality():
    rng = np.random.default_rng(100)
    worst_gap = 0.0
    for _ in range(200):
        region = random_region(rng, n_max=8, q_max=4)
        n = region.dimension
        basis = rng.normal(size=(n, n))
        H = basis @ basis.T + n * np.eye(n)
        target = rng.normal(size=n)
        target *= 0.45 * region.radii.min() / max(np.linalg.norm(target), 1e-12)
        g = -H @ target

        def model_eval(s, g=g, H=H):
            return float(g @ s + 0.5 * s @ H @ s), g + H @ s

        s = solve_subproblem(model_eval, region)
        gap = model_eval(s)[0] - model_eval(target)[0]
        worst_gap = max(worst_gap, gap)
    report(
        "interior minimizers of 200 random convex quadratics reached",
        worst_gap <= 1e-6,
        f"worst gap {worst_gap:.2e}",
    )

    monotone = True
    for _ in range(100):
        region = random_region(rng, n_max=8, q_max=4)
        n = region.dimension
        H = rng.normal(size=(n, n))
        H = 0.5 * (H + H.T)
        g = rng.normal(size=n)

        def model_eval(s, g=g, H=H):
            return float(g @ s + 0.5 * s @ H @ s), g + H @ s

        values = []
        solve_subproblem(
            model_eval, region, on_iterate=lambda s, v: values.append(v)
        )
        if any(b > a + 1e-10 for a, b in zip(values, values[1:])):
            monotone = False
            break
    report(
        "model value is monotone nonincreasing on every instance",
        monotone,
    )


def test_radius_scoring_fixtures():
    config = RadiusConfig()
    out = score(
        np.array([2.0, -1.0]),
        np.array([0.5, -2.0]),
        np.array([0.25, 2.0]),
        0.05,
        np.ones(2),
        1e-8,
        config,
    )
    report(
        "hand case zeta = -1/2, mu1 = 0.1 yields alpha1 = 0.85 exactly",
        out.zeta == -0.5 and out.alpha1 == 0.85,
        f"zeta {out.zeta!r}, alpha1 {out.alpha1!r}",
    )

    multipliers = set()
    for tau in range(5):
        fake = IterationScore(
            dm=np.zeros(1),
            df=np.zeros(1),
            ratios=np.zeros(1),
            r=0.0,
            tau_global=0,
            tau_local=np.array([tau]),
            total=np.array([tau]),
            zeta=0.0,
            alpha1=0.1,
            alpha2=0.7,
        )
        new = update_radii(fake, np.array([1.0]), np.array([1.0]), 1e-8, config)
        multipliers.add(float(new[0]))
    expected = {0.5, 1.0 / math.sqrt(2.0), 1.0, math.sqrt(2.0), 2.0}
    report(
        "theta defaults produce the exact multipliers {0.5, 1/sqrt2, 1, sqrt2, 2}",
        multipliers == expected,
        f"{sorted(multipliers)}",
    )

    rng = np.random.default_rng(8)
    holds = True
    for _ in range(1000):
        q = int(rng.integers(1, 7))
        dm = rng.normal(size=q)
        df = rng.normal(size=q)
        ratios = np.where(np.abs(dm) > 1e-12, df / np.where(dm == 0, 1, dm), -math.inf)
        r = float(rng.uniform(-2.0, config.mu1 - 1e-12))
        deltas = rng.uniform(1e-8, 2.0, size=q)
        rho = 10 ** rng.uniform(-8, -1)
        out = score(dm, df, ratios, r, deltas, rho, config)
        if np.any(deltas > rho) and not np.any((out.total <= 1) & (deltas > rho)):
            holds = False
            break
    report("prevent-enlarge property holds on 1000 random score vectors", holds)


def test_end_to_end_desk_scale():
    t0 = time.monotonic()
    for n in (6, 10):
        entry = corpus_entry(f"chained-rosenbrock-{n}")
        record = minimize(entry.problem, entry.start, SolverOptions(seed=0))
        t = converged(record.trajectory, 1e-6, record.f_start, 0.0)
        budget = max(1000 * n, 10000)
        report(
            f"chained rosenbrock n={n} converges at eps=1e-6 within budget",
            math.isfinite(t) and t <= budget,
            f"t_wst at convergence {t}, best {record.best_f:.2e}",
        )

    entry = corpus_entry("separable-quartic-20")
    structured = minimize(entry.problem, entry.start, SolverOptions(seed=0))
    single = minimize(
        make_single_element(entry), entry.start, SolverOptions(seed=0)
    )
    ratio = single.t_wst / structured.t_wst
    report(
        "separable quartic n=20: structured speed-up at least 4x on t_wst",
        ratio >= 4.0 and single.t_wst > structured.t_wst,
        f"t_single {single.t_wst}, t_wst {structured.t_wst}, ratio {ratio:.1f}",
    )

    # the experiment runner records c_p for the same pairing
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        config = ExperimentConfig(
            problems=["separable-quartic-20"],
            modes=["structured", "single"],
            eps=[1e-3],
            out_dir=tmp,
            seed=0,
        )
        assert run_experiment(config) == 0
        rows = (Path(tmp) / "summary.csv").read_text().splitlines()
        structured_row = next(
            r for r in rows[1:] if r.startswith("separable-quartic-20,structured")
        )
        c_p = structured_row.split(",")[-1]
        report(
            "experiment runner records the relative speed-up ratio",
            c_p not in ("", "inf") and float(c_p) > 0.0,
            f"c_p = {c_p}",
        )
    elapsed = time.monotonic() - t0
    report("end-to-end block runtime under budget", elapsed < 300.0, f"{elapsed:.0f}s")


def test_profile_fixtures_and_invariants():
    from sepdfo.bench import ProfileInput

    def pin(problem, mode, t, n=5, dims=None):
        return ProfileInput(
            problem=problem,
            mode=mode,
            t=t,
            n=n,
            element_dims=dims or [1] * n,
            f_best=0.0,
            f_start=1.0,
        )

    perf_inputs = [
        pin("p1", "A", 10.0), pin("p1", "B", 30.0),
        pin("p2", "A", 40.0), pin("p2", "B", 20.0),
        pin("p3", "A", math.inf), pin("p3", "B", 50.0),
    ]
    perf = performance_profile(perf_inputs, np.array([1.0, 2.0, 3.0, math.inf]))
    perf_ok = perf["A"].tolist() == [1 / 3, 2 / 3, 2 / 3, 2 / 3] and perf[
        "B"
    ].tolist() == [2 / 3, 2 / 3, 1.0, 1.0]

    data_inputs = [
        pin("p1", "m", 12.0, n=5),
        pin("p2", "m", 30.0, n=9),
        pin("p3", "m", math.inf, n=5),
    ]
    data = data_profile(data_inputs, np.array([0.0, 2.0, 2.5, 3.0, math.inf]))
    data_ok = data["m"].tolist() == [0.0, 1 / 3, 1 / 3, 2 / 3, 2 / 3]

    structured = [
        pin("p1", "structured", 10.0, n=8, dims=[2] * 7),
        pin("p2", "structured", 5.0, n=8, dims=[2] * 7),
        pin("p3", "structured", 40.0, n=8, dims=[2] * 7),
    ]
    single = [
        pin("p1", "single", 40.0),
        pin("p2", "single", 80.0),
        pin("p3", "single", 20.0),
    ]
    curve, ratios = speedup_profile(
        structured, single, np.array([0.0, 0.5, 1.0, 4.0, math.inf])
    )
    su_ok = (
        ratios["p1"] == 1.0
        and ratios["p2"] == 4.0
        and ratios["p3"] == 0.125
        and curve.tolist() == [1 / 3, 0.0, 1 / 3, 2 / 3, 2 / 3]
    )
    report(
        "profile curves match hand counts on 3-problem fixtures",
        perf_ok and data_ok and su_ok,
    )

    rng = np.random.default_rng(55)
    invariants = True
    for _ in range(200):
        inputs = [
            pin(
                f"p{i}",
                "m",
                float(rng.choice([rng.uniform(1, 100), math.inf])),
                n=int(rng.integers(2, 20)),
            )
            for i in range(int(rng.integers(1, 10)))
        ]
        alphas = np.sort(rng.uniform(0, 50, size=15))
        for profile in (performance_profile, data_profile):
            for curve in profile(inputs, alphas).values():
                if np.any(np.diff(curve) < 0) or np.any((curve < 0) | (curve > 1)):
                    invariants = False
    report(
        "profile curves are nondecreasing step functions into [0, 1]",
        invariants,
    )


def test_appendix_mode_unstructured():
    entry = corpus_entry("chained-rosenbrock-6")
    record = minimize(
        entry.problem, entry.start, SolverOptions(seed=0, structured=False)
    )
    equal_every_iteration = all(
        e["delta_min"] == e["delta_max"] for e in record.iteration_log
    )
    t = converged(record.trajectory, 1e-6, record.f_start, 0.0)
    report(
        "shared-radius mode keeps all radii equal and still converges",
        equal_every_iteration and math.isfinite(t),
        f"iterations {record.iterations}, convergence at {t}",
    )


def test_determinism_byte_identical():
    entry = corpus_entry("chained-rosenbrock-6")

    def run():
        return minimize(
            entry.problem, entry.start, SolverOptions(seed=123, restarts=1, rho_end=1e-6)
        ).to_json()

    a, b = run(), run()
    report("fixed seed gives byte-identical run records", a == b)


def test_total_acceptance_runtime():
    elapsed = time.monotonic() - _MODULE_T0
    report("acceptance suite total runtime under 5 minutes", elapsed < 300.0, f"{elapsed:.0f}s")
