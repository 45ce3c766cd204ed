"""Synthetic partially separable corpus, experiment runner, profile metrics.

The corpus generators mirror classic structure families (chained Rosenbrock
valleys, hub-coupled arrowheads, tridiagonal systems, fully separable
polynomials) with documented start points and, where analytic, exact minima.
Runs are compared through performance, data, and speed-up profiles; the
speed-up profile measures the worst-case-element evaluation count of a
structured run against the single-element run, normalized by the dimension
ratio that predicts the achievable acceleration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .driver import RunRecord, SolverOptions, minimize
from .problem import ElementSpec, ProblemSpec, problem_from_dict

__all__ = [
    "CorpusProblem",
    "ProfileInput",
    "ExperimentConfig",
    "corpus",
    "corpus_entry",
    "make_single_element",
    "converged",
    "performance_profile",
    "data_profile",
    "speedup_profile",
    "run_experiment",
    "MODES",
]

MODES = ("structured", "single", "unstructured")


@dataclass
class CorpusProblem:
    """One benchmark problem: declarative form, built spec, reference data."""

    name: str
    spec_dict: dict
    problem: ProblemSpec
    start: np.ndarray
    min_value: Optional[float]
    minimizer: Optional[np.ndarray]

    @property
    def max_element_dim(self) -> int:
        return max(len(ix) for ix in self.problem.index_sets)


@dataclass
class ProfileInput:
    """Cost of one (problem, mode) run, ready for profile computation."""

    problem: str
    mode: str
    t: float
    n: int
    element_dims: list
    f_best: float
    f_start: float

    @property
    def max_element_dim(self) -> int:
        return max(self.element_dims)


# ---------------------------------------------------------------------------
# Corpus generators. Each returns the declarative dict form so the problem
# file format is exercised by every benchmark run.
# ---------------------------------------------------------------------------


def _gen_chained_rosenbrock(n: int) -> dict:
    return {
        "name": f"chained-rosenbrock-{n}",
        "dimension": n,
        "start": [-1.0] * n,
        "elements": [
            {"indices": [i, i + 1], "formula": "rosenbrock_pair"}
            for i in range(n - 1)
        ],
        "min_value": 0.0,
        "minimizer": [1.0] * n,
    }


def _gen_separable_quartic(n: int) -> dict:
    return {
        "name": f"separable-quartic-{n}",
        "dimension": n,
        "start": [0.0] * n,
        "elements": [
            {
                "indices": [i],
                "formula": "quartic_shift",
                "params": {"shift": (i + 1) / n},
            }
            for i in range(n)
        ],
        "min_value": 0.0,
        "minimizer": [(i + 1) / n for i in range(n)],
    }


def _gen_separable_quadratic(n: int) -> dict:
    return {
        "name": f"separable-quadratic-{n}",
        "dimension": n,
        "start": [0.0] * n,
        "elements": [
            {"indices": [i], "formula": "quadratic_shift", "params": {"shift": 1.0}}
            for i in range(n)
        ],
        "min_value": 0.0,
        "minimizer": [1.0] * n,
    }


def _gen_arrowhead(n: int) -> dict:
    # Every element couples one coordinate with the last one (a hub), so the
    # predicted speed-up n / max n_i stays conservative.
    return {
        "name": f"arrowhead-{n}",
        "dimension": n,
        "start": [1.0] * n,
        "elements": [
            {"indices": [i, n - 1], "formula": "engvall_pair"} for i in range(n - 1)
        ],
        "min_value": 0.0,
        "minimizer": [1.0] * (n - 1) + [0.0],
    }


def _gen_broyden_tridiagonal(n: int) -> dict:
    elements = [
        {
            "indices": [0, 1],
            "formula": "broyden_tridiagonal",
            "params": {"position": "first"},
        }
    ]
    elements += [
        {
            "indices": [i - 1, i, i + 1],
            "formula": "broyden_tridiagonal",
            "params": {"position": "mid"},
        }
        for i in range(1, n - 1)
    ]
    elements.append(
        {
            "indices": [n - 2, n - 1],
            "formula": "broyden_tridiagonal",
            "params": {"position": "last"},
        }
    )
    return {
        "name": f"broyden-tridiagonal-{n}",
        "dimension": n,
        "start": [-1.0] * n,
        "elements": elements,
    }


def _gen_engvall(n: int) -> dict:
    return {
        "name": f"engvall-{n}",
        "dimension": n,
        "start": [2.0] * n,
        "elements": [
            {"indices": [i, i + 1], "formula": "engvall_pair"} for i in range(n - 1)
        ],
    }


def _gen_tridiagonal_quadratic(n: int) -> dict:
    elements = [
        {"indices": [0], "formula": "quadratic_shift", "params": {"shift": 1.0}}
    ]
    elements += [
        {"indices": [i, i + 1], "formula": "difference_pair"} for i in range(n - 1)
    ]
    elements.append(
        {"indices": [n - 1], "formula": "quadratic_shift", "params": {"shift": 1.0}}
    )
    return {
        "name": f"tridiagonal-quadratic-{n}",
        "dimension": n,
        "start": [0.0] * n,
        "elements": elements,
        "min_value": 0.0,
        "minimizer": [1.0] * n,
    }


def _gen_powell_singular(n: int) -> dict:
    if n % 4:
        raise ValueError("extended Powell singular needs a multiple of 4")
    elements = []
    for k in range(0, n, 4):
        elements += [
            {"indices": [k, k + 1], "formula": "powell_singular", "params": {"kind": "a"}},
            {"indices": [k + 2, k + 3], "formula": "powell_singular", "params": {"kind": "b"}},
            {"indices": [k + 1, k + 2], "formula": "powell_singular", "params": {"kind": "c"}},
            {"indices": [k, k + 3], "formula": "powell_singular", "params": {"kind": "d"}},
        ]
    return {
        "name": f"powell-singular-{n}",
        "dimension": n,
        "start": [3.0, -1.0, 0.0, 1.0] * (n // 4),
        "elements": elements,
        "min_value": 0.0,
        "minimizer": [0.0] * n,
    }


def _gen_cosine_chain(n: int) -> dict:
    return {
        "name": f"cosine-chain-{n}",
        "dimension": n,
        "start": [1.0] * n,
        "elements": [
            {"indices": [i, i + 1], "formula": "cosine_pair"} for i in range(n - 1)
        ],
    }


_DEFAULT_CORPUS = (
    (_gen_chained_rosenbrock, 6),
    (_gen_chained_rosenbrock, 10),
    (_gen_separable_quartic, 20),
    (_gen_separable_quadratic, 10),
    (_gen_arrowhead, 8),
    (_gen_broyden_tridiagonal, 12),
    (_gen_engvall, 10),
    (_gen_tridiagonal_quadratic, 16),
    (_gen_powell_singular, 8),
    (_gen_cosine_chain, 12),
)


def _build(spec_dict: dict) -> CorpusProblem:
    problem, meta = problem_from_dict(spec_dict)
    return CorpusProblem(
        name=meta["name"],
        spec_dict=spec_dict,
        problem=problem,
        start=meta["start"],
        min_value=meta["min_value"],
        minimizer=meta["minimizer"],
    )


def corpus() -> list[CorpusProblem]:
    """The default benchmark corpus."""
    return [_build(gen(n)) for gen, n in _DEFAULT_CORPUS]


def corpus_entry(name: str) -> CorpusProblem:
    for entry in corpus():
        if entry.name == name:
            return entry
    raise KeyError(name)


def make_single_element(entry: CorpusProblem) -> ProblemSpec:
    """The same objective packed into one full-dimensional element."""
    inner = entry.problem

    def full_objective(u: np.ndarray) -> float:
        total = 0.0
        for el in inner.elements:
            total += el.apply_transform(float(el.evaluator(u[el.index_set])))
        if inner.whitebox is not None:
            total += float(inner.whitebox.value(u))
        return total

    return ProblemSpec(
        dimension=inner.dimension,
        elements=[
            ElementSpec(
                index_set=list(range(inner.dimension)), evaluator=full_objective
            )
        ],
    )


# ---------------------------------------------------------------------------
# Profile metrics
# ---------------------------------------------------------------------------


def converged(
    trajectory: Sequence[Sequence[float]], eps: float, f_start: float, f_best_all: float
) -> float:
    """First worst-case evaluation count reaching the accuracy target.

    The target is ``f_best_all + eps * (f_start - f_best_all)``; trajectory
    entries are ``(t_wst, f)`` in discovery order. Returns ``inf`` when the
    target is never reached.
    """
    threshold = f_best_all + eps * (f_start - f_best_all)
    for t, f in trajectory:
        if f <= threshold:
            return float(t)
    return math.inf


def performance_profile(
    inputs: Sequence[ProfileInput], alphas: np.ndarray
) -> dict[str, np.ndarray]:
    """Fraction of problems each mode solves within ``alpha`` times the best cost."""
    alphas = np.asarray(alphas, dtype=float)
    problems = sorted({pi.problem for pi in inputs})
    modes = sorted({pi.mode for pi in inputs})
    best: dict[str, float] = {}
    for p in problems:
        costs = [pi.t for pi in inputs if pi.problem == p]
        best[p] = min(costs)
    curves = {}
    for mode in modes:
        ratios = []
        for pi in inputs:
            if pi.mode != mode:
                continue
            if math.isinf(pi.t) or math.isinf(best[pi.problem]) or best[pi.problem] <= 0:
                ratios.append(math.inf)
            else:
                ratios.append(pi.t / best[pi.problem])
        ratios = np.asarray(ratios)
        solved = np.isfinite(ratios)
        curves[mode] = np.array(
            [np.count_nonzero(solved & (ratios <= a)) / len(problems) for a in alphas]
        )
    return curves


def data_profile(
    inputs: Sequence[ProfileInput], alphas: np.ndarray
) -> dict[str, np.ndarray]:
    """Fraction of problems solved within ``alpha * (n + 1)`` evaluations."""
    alphas = np.asarray(alphas, dtype=float)
    problems = sorted({pi.problem for pi in inputs})
    modes = sorted({pi.mode for pi in inputs})
    curves = {}
    for mode in modes:
        normalized = np.asarray(
            [pi.t / (pi.n + 1) for pi in inputs if pi.mode == mode]
        )
        solved = np.isfinite(normalized)
        curves[mode] = np.array(
            [np.count_nonzero(solved & (normalized <= a)) / len(problems) for a in alphas]
        )
    return curves


def speedup_ratio(t_single: float, t_wst: float, n: int, max_ni: int) -> Optional[float]:
    """Relative speed-up of a structured run over the single-element run.

    The observed ratio ``t_single / t_wst`` is divided by the predicted one,
    ``n / max_ni``. Conventions for one-sided failures: only the single run
    failing gives ``inf``, only the structured run failing gives ``0``, both
    failing gives ``None`` (excluded from the profile).
    """
    single_failed = math.isinf(t_single)
    structured_failed = math.isinf(t_wst)
    if single_failed and structured_failed:
        return None
    if single_failed:
        return math.inf
    if structured_failed:
        return 0.0
    predicted = n / max_ni
    return (t_single / max(t_wst, 1.0)) / predicted


def speedup_profile(
    structured: Sequence[ProfileInput],
    single: Sequence[ProfileInput],
    alphas: np.ndarray,
) -> tuple[np.ndarray, dict[str, Optional[float]]]:
    """Speed-up profile curve and the per-problem relative speed-up ratios.

    For ``alpha >= 1`` the curve counts problems with ``1 <= c_p <= alpha``;
    below one it counts ``alpha <= c_p < 1``. Problems where both runs failed
    are excluded. The denominator is the full problem count.
    """
    alphas = np.asarray(alphas, dtype=float)
    by_problem = {pi.problem: pi for pi in single}
    ratios: dict[str, Optional[float]] = {}
    for pi in structured:
        mate = by_problem.get(pi.problem)
        if mate is None:
            continue
        ratios[pi.problem] = speedup_ratio(
            mate.t, pi.t, pi.n, pi.max_element_dim
        )
    total = len(ratios)
    curve = np.zeros(alphas.size)
    for j, a in enumerate(alphas):
        count = 0
        for c in ratios.values():
            if c is None:
                continue
            if a >= 1.0 and 1.0 <= c <= a:
                count += 1
            elif a < 1.0 and a <= c < 1.0:
                count += 1
        curve[j] = count / total if total else 0.0
    return curve, ratios


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    problems: Optional[list[str]] = None
    modes: list[str] = field(default_factory=lambda: list(MODES))
    eps: list[float] = field(default_factory=lambda: [1e-1, 1e-3, 1e-5])
    budget_mult: float = 1.0
    seed: int = 0
    out_dir: str = "bench-out"
    plots: bool = False


def _options_for(entry: CorpusProblem, mode: str, config: ExperimentConfig) -> SolverOptions:
    n = entry.problem.dimension
    budget = int(max(1000 * n, 10000) * config.budget_mult)
    return SolverOptions(
        max_element_evals=budget,
        seed=config.seed,
        structured=(mode != "unstructured"),
    )


def run_one(entry: CorpusProblem, mode: str, config: ExperimentConfig) -> RunRecord:
    if mode not in MODES:
        raise ValueError(f"unknown mode: {mode!r}")
    problem = make_single_element(entry) if mode == "single" else entry.problem
    record = minimize(problem, entry.start, _options_for(entry, mode, config))
    record.meta = {"problem": entry.name, "mode": mode}
    return record


def _crash_record(entry: CorpusProblem, mode: str, message: str) -> RunRecord:
    return RunRecord(
        best_x=[float(v) for v in entry.start],
        best_f=math.inf,
        f_start=math.inf,
        counts=[0] * entry.problem.q,
        t_wst=0,
        t_avg=0.0,
        termination="crash",
        iterations=0,
        trajectory=[],
        iteration_log=[],
        events=[{"type": "crash", "message": message}],
        n=entry.problem.dimension,
        q=entry.problem.q,
        element_dims=[len(ix) for ix in entry.problem.index_sets],
        seed=0,
        structured=(mode != "single"),
        meta={"problem": entry.name, "mode": mode},
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return repr(x)
    return str(x)


def profile_inputs(
    entries: list[CorpusProblem],
    records: dict[tuple[str, str], RunRecord],
    eps: float,
) -> list[ProfileInput]:
    """Convergence costs per (problem, mode) at one tolerance.

    The reference value per problem is the best value any mode achieved,
    improved by the analytic minimum when one is known. Costs are clamped to
    at least one evaluation.
    """
    inputs = []
    for entry in entries:
        recs = [records[(entry.name, m)] for (p, m) in records if p == entry.name]
        f_best = min((r.best_f for r in recs), default=math.inf)
        if entry.min_value is not None:
            f_best = min(f_best, entry.min_value)
        for (p, mode), rec in records.items():
            if p != entry.name:
                continue
            t = converged(rec.trajectory, eps, rec.f_start, f_best)
            inputs.append(
                ProfileInput(
                    problem=entry.name,
                    mode=mode,
                    t=max(t, 1.0),
                    n=rec.n,
                    element_dims=entry.spec_dict
                    and [len(e["indices"]) for e in entry.spec_dict["elements"]],
                    f_best=rec.best_f,
                    f_start=rec.f_start,
                )
            )
    return inputs


def _write_curve_csv(path: Path, alphas, curves: dict, eps: float, header: str) -> None:
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if new_file:
            fh.write(f"eps,{header},mode,value\n")
        for mode in sorted(curves):
            for a, v in zip(alphas, curves[mode]):
                fh.write(f"{_fmt(eps)},{_fmt(float(a))},{mode},{_fmt(float(v))}\n")


def run_experiment(config: ExperimentConfig) -> int:
    """Run the corpus sweep and write records, summary, and profile curves.

    Returns a process exit code: 2 for an empty or unknown selection, 0
    otherwise. A solver crash on one problem is recorded as a failure and the
    sweep continues.
    """
    all_entries = corpus()
    if config.problems is None:
        entries = all_entries
    else:
        known = {e.name: e for e in all_entries}
        try:
            entries = [known[name] for name in config.problems]
        except KeyError as exc:
            print(f"unknown problem: {exc.args[0]}")
            return 2
    if not entries or not config.modes:
        print("nothing selected")
        return 2
    for mode in config.modes:
        if mode not in MODES:
            print(f"unknown mode: {mode}")
            return 2

    out = Path(config.out_dir)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)

    records: dict[tuple[str, str], RunRecord] = {}
    for entry in entries:
        for mode in config.modes:
            try:
                record = run_one(entry, mode, config)
            except Exception as exc:  # crash containment, sweep continues
                record = _crash_record(entry, mode, repr(exc))
            records[(entry.name, mode)] = record
            path = records_dir / f"{entry.name}__{mode}.json"
            path.write_text(record.to_json(), encoding="utf-8")

    write_reports(entries, records, config)
    return 0


def write_reports(
    entries: list[CorpusProblem],
    records: dict[tuple[str, str], RunRecord],
    config: ExperimentConfig,
) -> None:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("summary.csv", "performance_profile.csv", "data_profile.csv", "speedup_profile.csv"):
        stale = out / name
        if stale.exists():
            stale.unlink()

    perf_alphas = np.concatenate([np.linspace(1.0, 32.0, 63), [math.inf]])
    data_alphas = np.concatenate([np.linspace(0.0, 200.0, 101), [math.inf]])
    su_alphas = np.concatenate(
        [np.linspace(0.0, 0.9375, 16), np.linspace(1.0, 16.0, 31), [math.inf]]
    )

    summary_path = out / "summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("problem,mode,eps,t_wst,t_avg,t_single,n,q,max_ni,c_p\n")
        for eps in config.eps:
            inputs = profile_inputs(entries, records, eps)
            by_key = {(pi.problem, pi.mode): pi for pi in inputs}
            for entry in entries:
                single = by_key.get((entry.name, "single"))
                for mode in config.modes:
                    pi = by_key.get((entry.name, mode))
                    if pi is None:
                        continue
                    rec = records[(entry.name, mode)]
                    c_p = None
                    if mode == "structured" and single is not None:
                        c_p = speedup_ratio(
                            single.t, pi.t, entry.problem.dimension, entry.max_element_dim
                        )
                    row = [
                        entry.name,
                        mode,
                        eps,
                        pi.t,
                        float(rec.t_avg),
                        single.t if single is not None else None,
                        entry.problem.dimension,
                        entry.problem.q,
                        entry.max_element_dim,
                        c_p,
                    ]
                    fh.write(",".join(_fmt(v) for v in row) + "\n")

            _write_curve_csv(
                out / "performance_profile.csv",
                perf_alphas,
                performance_profile(inputs, perf_alphas),
                eps,
                "alpha",
            )
            _write_curve_csv(
                out / "data_profile.csv",
                data_alphas,
                data_profile(inputs, data_alphas),
                eps,
                "alpha",
            )
            structured_inputs = [pi for pi in inputs if pi.mode == "structured"]
            single_inputs = [pi for pi in inputs if pi.mode == "single"]
            if structured_inputs and single_inputs:
                curve, _ = speedup_profile(structured_inputs, single_inputs, su_alphas)
                _write_curve_csv(
                    out / "speedup_profile.csv",
                    su_alphas,
                    {"structured_vs_single": curve},
                    eps,
                    "alpha",
                )

    if config.plots:
        _write_plots(out, config)


def _write_plots(out: Path, config: ExperimentConfig) -> None:
    try:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping plots")
        return
    import csv

    for kind in ("performance_profile", "data_profile", "speedup_profile"):
        path = out / f"{kind}.csv"
        if not path.exists():
            continue
        rows = list(csv.DictReader(open(path, encoding="utf-8")))
        fig, ax = plt.subplots(figsize=(7, 4.5))
        eps_values = sorted({row["eps"] for row in rows})
        eps0 = eps_values[0]
        for mode in sorted({row["mode"] for row in rows}):
            pts = [
                (float(r["alpha"]), float(r["value"]))
                for r in rows
                if r["mode"] == mode and r["eps"] == eps0 and r["alpha"] != "inf"
            ]
            if pts:
                ax.step(*zip(*pts), where="post", label=mode)
        ax.set_xlabel("alpha")
        ax.set_ylabel("fraction of problems")
        ax.set_title(f"{kind.replace('_', ' ')} (eps={eps0})")
        ax.legend()
        fig.savefig(out / f"{kind}.svg")
        plt.close(fig)
