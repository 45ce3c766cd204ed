/**
 * Node client for the sepdfo solver: define a partially separable objective
 * with native JavaScript callables, minimize it, and read back the run
 * record. The solver runs in a `sepdfo serve` subprocess; every element
 * evaluation crosses the pipe, so this suits objectives whose evaluation
 * cost dwarfs a process round trip.
 */

import { runSolveSession, type SolveRequestBody } from "./rpc.js";
import type {
  CallbackState,
  Element,
  IterationCallback,
  MinimizeOptions,
  NamedTransform,
  Problem,
  RunRecord,
  Transform,
  Whitebox,
} from "./types.js";

export type {
  CallbackState,
  Element,
  IterationCallback,
  MinimizeOptions,
  NamedTransform,
  Problem,
  RunRecord,
  Transform,
  Whitebox,
};

const OPTION_KEYS = new Set([
  "rho_start",
  "rho_end",
  "max_element_evals",
  "xi",
  "restarts",
  "structured",
  "capacity",
  "seed",
  "max_iterations",
  "python",
]);

const NAMED_TRANSFORMS = new Set(["identity", "square", "exp"]);

function project(x: number[], indices: number[]): number[] {
  return indices.map((j) => x[j]!);
}

/** Validate structure and types; throws before anything is spawned. */
function validateProblem(problem: Problem, x0: number[]): void {
  if (!Number.isInteger(problem.dimension) || problem.dimension < 1) {
    throw new RangeError("dimension must be a positive integer");
  }
  if (x0.length !== problem.dimension) {
    throw new RangeError(
      `start point has length ${x0.length}, expected ${problem.dimension}`,
    );
  }
  if (!x0.every(Number.isFinite)) {
    throw new RangeError("start point must be finite");
  }
  if (problem.elements.length === 0) {
    throw new RangeError("at least one element is required");
  }
  const covered = new Array<boolean>(problem.dimension).fill(false);
  problem.elements.forEach((element, i) => {
    const idx = element.indices;
    if (idx.length === 0) {
      throw new RangeError(`element ${i} has an empty index set`);
    }
    for (let k = 0; k < idx.length; k += 1) {
      const j = idx[k]!;
      if (!Number.isInteger(j) || j < 0 || j >= problem.dimension) {
        throw new RangeError(`element ${i} index ${j} out of range`);
      }
      if (k > 0 && j <= idx[k - 1]!) {
        throw new RangeError(`element ${i} indices must be strictly increasing`);
      }
      covered[j] = true;
    }
    if (element.weight !== undefined && !Number.isFinite(element.weight)) {
      throw new RangeError(`element ${i} weight must be finite`);
    }
    const t = element.transform;
    if (typeof t === "string" && !NAMED_TRANSFORMS.has(t)) {
      throw new RangeError(`element ${i} names an unknown transform: ${t}`);
    }
  });
  covered.forEach((hit, j) => {
    if (!hit) {
      throw new RangeError(`coordinate ${j} belongs to no element`);
    }
  });
}

/** One probe evaluation per callable at the start point; not counted. */
function probeCallables(problem: Problem, x0: number[]): void {
  problem.elements.forEach((element, i) => {
    const u = project(x0, element.indices);
    const raw = element.evaluate(u);
    if (typeof raw !== "number" || !Number.isFinite(raw)) {
      throw new TypeError(
        `element ${i} did not return a finite number at the start point`,
      );
    }
    const t = element.transform;
    if (t !== undefined && typeof t !== "string") {
      for (const fn of [t.value, t.deriv, t.deriv2]) {
        const out = fn.call(t, raw);
        if (!Number.isFinite(out)) {
          throw new TypeError(`transform of element ${i} is not finite at ${raw}`);
        }
      }
    }
  });
  if (problem.whitebox) {
    const value = problem.whitebox.value(x0);
    const grad = problem.whitebox.grad(x0);
    const hvp = problem.whitebox.hvp(x0, new Array(x0.length).fill(0));
    if (
      !Number.isFinite(value) ||
      grad.length !== x0.length ||
      hvp.length !== x0.length
    ) {
      throw new TypeError("analytic part failed its probe at the start point");
    }
  }
}

function buildRequest(
  problem: Problem,
  x0: number[],
  options: MinimizeOptions,
  callback?: IterationCallback,
): SolveRequestBody {
  const serverOptions: Record<string, unknown> = {};
  for (const [key, value] of Object.entries(options)) {
    if (!OPTION_KEYS.has(key)) {
      throw new RangeError(`unknown option key: ${key}`);
    }
    if (key !== "python" && value !== undefined) {
      serverOptions[key] = value;
    }
  }
  return {
    problem: {
      dimension: problem.dimension,
      elements: problem.elements.map((element) => ({
        indices: element.indices,
        weight: element.weight ?? 1.0,
        transform:
          element.transform === undefined
            ? null
            : typeof element.transform === "string"
              ? element.transform
              : "callable",
      })),
      whitebox: problem.whitebox !== undefined,
    },
    x0,
    options: serverOptions,
    callback: callback !== undefined,
  };
}

/**
 * Minimize a partially separable objective without derivatives.
 *
 * Validates the problem and probes every callable at the start point before
 * the solver process starts, so argument errors surface without spending
 * evaluations. A callable that throws mid-run poisons that trial point (the
 * solver rejects it and continues). The optional callback fires once per
 * outer iteration and may return `{weights}` to retune the objective.
 */
export async function minimize(
  problem: Problem,
  x0: number[],
  options: MinimizeOptions = {},
  callback?: IterationCallback,
): Promise<RunRecord> {
  validateProblem(problem, x0);
  probeCallables(problem, x0);
  const body = buildRequest(problem, x0, options, callback);
  const python = options.python ?? process.env.SEPDFO_PYTHON ?? "python3";
  return runSolveSession(python, body, problem, callback);
}
