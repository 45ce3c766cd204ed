"""Command line interface: benchmark runs, profile recomputation, RPC serving."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .driver import RunRecord


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _parse_names(text: str) -> list[str]:
    return [tok for tok in text.split(",") if tok]


def cmd_list(_args) -> int:
    rows = [("problem", "n", "q", "max_ni", "min")]
    for entry in bench.corpus():
        rows.append(
            (
                entry.name,
                str(entry.problem.dimension),
                str(entry.problem.q),
                str(entry.max_element_dim),
                "known" if entry.min_value is not None else "-",
            )
        )
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return 0


def cmd_run(args) -> int:
    config = bench.ExperimentConfig(
        problems=_parse_names(args.problems) if args.problems else None,
        modes=_parse_names(args.modes),
        eps=_parse_floats(args.eps),
        budget_mult=args.budget_mult,
        seed=args.seed,
        out_dir=args.out_dir,
        plots=args.plots,
    )
    return bench.run_experiment(config)


def cmd_profiles(args) -> int:
    records_dir = Path(args.records_dir)
    files = sorted(records_dir.glob("*.json"))
    if not files:
        print(f"no records found in {records_dir}")
        return 2
    records = {}
    names = []
    for path in files:
        record = RunRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))
        problem = record.meta.get("problem")
        mode = record.meta.get("mode")
        if problem is None or mode is None:
            print(f"record {path} is missing problem/mode metadata")
            return 2
        records[(problem, mode)] = record
        names.append(problem)
    try:
        entries = [bench.corpus_entry(name) for name in sorted(set(names))]
    except KeyError as exc:
        print(f"record references unknown problem: {exc.args[0]}")
        return 2
    config = bench.ExperimentConfig(
        eps=_parse_floats(args.eps),
        out_dir=args.out_dir,
        plots=args.plots,
        modes=sorted({mode for (_, mode) in records}),
    )
    bench.write_reports(entries, records, config)
    return 0


def cmd_serve(_args) -> int:
    from . import rpc

    return rpc.serve()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sepdfo",
        description="Benchmark harness for the partially separable DFO solver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_list = sub.add_parser("list", help="list the benchmark corpus")
    p_list.set_defaults(func=cmd_list)

    p_run = sub.add_parser("run", help="run corpus problems and write reports")
    p_run.add_argument("--problems", help="comma-separated names (default: all)")
    p_run.add_argument(
        "--modes",
        default=",".join(bench.MODES),
        help="comma-separated subset of structured,single,unstructured",
    )
    p_run.add_argument("--eps", default="1e-1,1e-3,1e-5", help="tolerances")
    p_run.add_argument("--budget-mult", type=float, default=1.0)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out-dir", default="bench-out")
    p_run.add_argument("--plots", action="store_true", help="also write SVG plots")
    p_run.set_defaults(func=cmd_run)

    p_prof = sub.add_parser("profiles", help="recompute profiles from records")
    p_prof.add_argument("--records-dir", required=True)
    p_prof.add_argument("--eps", default="1e-1,1e-3,1e-5")
    p_prof.add_argument("--out-dir", default="bench-out")
    p_prof.add_argument("--plots", action="store_true")
    p_prof.set_defaults(func=cmd_profiles)

    p_serve = sub.add_parser("serve", help="serve one solve over stdin/stdout")
    p_serve.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
