/** Scalar transform applied to an element value, with two derivatives. */
export interface Transform {
  value(t: number): number;
  deriv(t: number): number;
  deriv2(t: number): number;
}

/** Transforms the solver evaluates itself, without round trips. */
export type NamedTransform = "identity" | "square" | "exp";

/**
 * One element function: the coordinate indices it sees (strictly
 * increasing), a callable receiving the projected point, an optional
 * weight, and an optional scalar transform.
 */
export interface Element {
  indices: number[];
  evaluate(u: number[]): number;
  weight?: number;
  transform?: Transform | NamedTransform;
}

/** Analytic objective part with gradient and Hessian-vector product. */
export interface Whitebox {
  value(x: number[]): number;
  grad(x: number[]): number[];
  hvp(x: number[], v: number[]): number[];
}

export interface Problem {
  dimension: number;
  elements: Element[];
  whitebox?: Whitebox;
}

/** Documented solver options; unknown keys are rejected up front. */
export interface MinimizeOptions {
  rho_start?: number;
  rho_end?: number;
  max_element_evals?: number;
  xi?: number;
  restarts?: number;
  structured?: boolean;
  capacity?: number;
  seed?: number;
  max_iterations?: number;
  /** Python interpreter used to host the solver (default "python3"). */
  python?: string;
}

/** Read-only per-iteration snapshot passed to the callback. */
export interface CallbackState {
  iteration: number;
  x: number[];
  f: number;
  rho: number;
  deltas: number[];
  counts: number[];
  r: number | null;
}

/** A callback may retune element weights for later iterations. */
export type IterationCallback = (
  state: CallbackState,
) => { weights?: number[] } | null | undefined | void;

/** Run record, field for field what the solver reports. */
export interface RunRecord {
  best_x: number[];
  best_f: number;
  f_start: number;
  counts: number[];
  t_wst: number;
  t_avg: number;
  termination: string;
  iterations: number;
  trajectory: Array<[number, number]>;
  iteration_log: Array<Record<string, unknown>>;
  events: Array<Record<string, unknown>>;
  n: number;
  q: number;
  element_dims: number[];
  seed: number;
  structured: boolean;
  meta: Record<string, unknown>;
}
