"""
What the structure buys
=======================

The same objective solved three ways: with per-element models and radii
(structured), with per-element models inside one shared spherical region
(unstructured), and as a single black box. The cost that matters for a
partially separable problem is the worst-case per-element count, because
elements can be evaluated independently and in parallel.
"""

import numpy as np

from sepdfo import SolverOptions, minimize
from sepdfo.bench import corpus_entry, make_single_element, speedup_ratio

entry = corpus_entry("separable-quartic-20")

structured = minimize(entry.problem, entry.start, SolverOptions(seed=0))
unstructured = minimize(
    entry.problem, entry.start, SolverOptions(seed=0, structured=False)
)
single = minimize(make_single_element(entry), entry.start, SolverOptions(seed=0))

print(f"{'mode':14s} {'t_wst':>7s} {'best value':>12s}")
for name, rec in [
    ("structured", structured),
    ("unstructured", unstructured),
    ("single", single),
]:
    print(f"{name:14s} {rec.t_wst:7d} {rec.best_f:12.3e}")

n = entry.problem.dimension
max_ni = entry.max_element_dim
c_p = speedup_ratio(float(single.t_wst), float(structured.t_wst), n, max_ni)
print(f"\nobserved speed-up: {single.t_wst / structured.t_wst:.1f}x")
print(f"predicted from dimensions (n / max n_i): {n / max_ni:.1f}x")
print(f"relative speed-up ratio c_p = {c_p:.2f}")
