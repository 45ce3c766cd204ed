"""
Hybrid black-white-box objectives and live reweighting
======================================================

Element values can pass through analytic scalar transforms, an analytic
part with known derivatives can ride along for free, and a per-iteration
callback can retune weights mid-run (useful for penalty schedules).
"""

import numpy as np

from sepdfo import (
    ElementSpec,
    ProblemSpec,
    SolverOptions,
    Transform,
    Whitebox,
    minimize,
)

# Black-box residuals r_i(x); objective sum_i w_i * r_i(x)^2 + analytic tail.
# The model interpolates the residuals, the squaring stays analytic, so the
# solver tracks the composition with exact derivatives of the outer part.
square = Transform(lambda t: t * t, lambda t: 2.0 * t, lambda t: 2.0, "square")

def residual(i):
    return lambda u: u[0] + 0.5 * u[1] - (i + 1.0)

A = np.diag([0.1, 0.1, 0.1, 0.1])
tail = Whitebox(
    value=lambda x: 0.5 * float(x @ A @ x),
    grad=lambda x: A @ x,
    hvp=lambda x, v: A @ v,
)

problem = ProblemSpec(
    4,
    [ElementSpec([i, i + 1], residual(i), transform=square) for i in range(3)],
    whitebox=tail,
)

record = minimize(problem, np.zeros(4), SolverOptions(seed=0))
print("hybrid objective best value:", record.best_f)
print("best point:", np.round(record.best_x, 6))

# A penalty schedule through the callback: weights double every 10
# iterations; each update lands in the run record's event log.
def schedule(info):
    if info.iteration > 0 and info.iteration % 10 == 0:
        return {"weights": [2.0 ** (info.iteration // 10)] * 3}
    return None

record = minimize(problem, np.zeros(4), SolverOptions(seed=0), callback=schedule)
updates = [e for e in record.events if e["type"] == "weights_updated"]
print(f"\nweight updates recorded: {len(updates)} at iterations",
      [e["iteration"] for e in updates][:5])
