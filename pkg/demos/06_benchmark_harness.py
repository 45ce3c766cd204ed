"""
The benchmark harness
=====================

`run_experiment` sweeps corpus problems across solver modes with fixed
seeds, writes one JSON run record per (problem, mode), a summary CSV, and
performance / data / speed-up profile curves. The same operations back the
`sepdfo` command line:

    sepdfo list
    sepdfo run --problems chained-rosenbrock-6 --modes structured,single \
        --eps 1e-1,1e-3 --out-dir bench-out
    sepdfo profiles --records-dir bench-out/records --out-dir bench-out
"""

import tempfile
from pathlib import Path

from sepdfo.bench import ExperimentConfig, corpus, run_experiment

print("corpus:")
for entry in corpus():
    known = "known minimum" if entry.min_value is not None else "open minimum"
    print(
        f"  {entry.name:26s} n={entry.problem.dimension:3d} q={entry.problem.q:3d}"
        f" max_ni={entry.max_element_dim}  ({known})"
    )

with tempfile.TemporaryDirectory() as tmp:
    config = ExperimentConfig(
        problems=["separable-quadratic-10", "chained-rosenbrock-6"],
        modes=["structured", "single"],
        eps=[1e-1, 1e-3],
        seed=0,
        out_dir=tmp,
    )
    code = run_experiment(config)
    print("\nexit code:", code)
    print("files written:")
    for path in sorted(Path(tmp).rglob("*")):
        if path.is_file():
            print("  ", path.relative_to(tmp))
    print("\nsummary.csv:")
    print((Path(tmp) / "summary.csv").read_text())
