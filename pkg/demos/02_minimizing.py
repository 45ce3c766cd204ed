"""
Minimizing without derivatives
==============================

Hand the problem to `minimize` and read the run record: best point, best
value, evaluation counts per element, and the trajectory of objective
values against the worst-case evaluation count.
"""

import numpy as np

from sepdfo import ElementSpec, ProblemSpec, SolverOptions, minimize

def chain_term(u):
    t = u[0] * u[0] - u[1]
    return 100.0 * t * t + (u[0] - 1.0) * (u[0] - 1.0)

n = 6
problem = ProblemSpec(n, [ElementSpec([i, i + 1], chain_term) for i in range(n - 1)])

record = minimize(problem, -np.ones(n), SolverOptions(seed=0))

print("best value:", record.best_f)
print("best point:", np.round(record.best_x, 8))
print("termination:", record.termination, "after", record.iterations, "iterations")
print("evaluations per element:", record.counts)
print("\nobjective trajectory (worst-case count, value):")
for t, f in record.trajectory[:8]:
    print(f"  t={t:4d}  f={f: .6e}")
print("  ...")
for t, f in record.trajectory[-3:]:
    print(f"  t={t:4d}  f={f: .6e}")

# Per-iteration diagnostics live in record.iteration_log.
entry = record.iteration_log[5]
print("\niteration 5:", {k: entry[k] for k in ("branch", "rho", "r", "tau")})
