import { spawn } from "node:child_process";
import { createInterface } from "node:readline";

import type {
  CallbackState,
  Element,
  IterationCallback,
  Problem,
  RunRecord,
  Transform,
} from "./types.js";

interface ServerMessage {
  op: string;
  id?: number;
  [key: string]: unknown;
}

/** Finite numbers pass through; anything else becomes null (poison). */
function jsonValue(value: number): number | null {
  return Number.isFinite(value) ? value : null;
}

function transformTable(element: Element): Transform | null {
  const t = element.transform;
  if (t === undefined || typeof t === "string") {
    return null;
  }
  return t;
}

export interface SolveRequestBody {
  problem: {
    dimension: number;
    elements: Array<{
      indices: number[];
      weight: number;
      transform: string | null;
    }>;
    whitebox: boolean;
  };
  x0: number[];
  options: Record<string, unknown>;
  callback: boolean;
}

/**
 * Spawn one solver process, feed it the solve request, and answer its
 * evaluation requests until the run record arrives.
 */
export function runSolveSession(
  python: string,
  body: SolveRequestBody,
  problem: Problem,
  callback?: IterationCallback,
): Promise<RunRecord> {
  return new Promise((resolve, reject) => {
    const child = spawn(python, ["-m", "sepdfo.cli", "serve"], {
      stdio: ["pipe", "pipe", "inherit"],
    });
    let settled = false;
    const fail = (error: Error) => {
      if (!settled) {
        settled = true;
        child.kill();
        reject(error);
      }
    };
    child.on("error", (error) =>
      fail(new Error(`failed to start ${python}: ${error.message}`)),
    );
    child.on("exit", (code) => {
      if (!settled && code !== 0) {
        fail(new Error(`solver process exited with code ${code}`));
      }
    });

    const send = (message: Record<string, unknown>) => {
      child.stdin.write(JSON.stringify(message) + "\n");
    };

    const lines = createInterface({ input: child.stdout });
    lines.on("line", (line) => {
      let message: ServerMessage;
      try {
        message = JSON.parse(line) as ServerMessage;
      } catch {
        fail(new Error(`bad message from solver: ${line}`));
        return;
      }
      try {
        handle(message);
      } catch (error) {
        fail(error instanceof Error ? error : new Error(String(error)));
      }
    });

    const handle = (message: ServerMessage) => {
      switch (message.op) {
        case "eval": {
          const index = message.element as number;
          const element = problem.elements[index];
          if (element === undefined) {
            throw new Error(`solver asked for unknown element ${index}`);
          }
          let value: number | null;
          try {
            value = jsonValue(element.evaluate(message.point as number[]));
          } catch {
            value = null; // a throwing callable poisons the trial
          }
          send({ op: "value", id: message.id, value });
          break;
        }
        case "transform": {
          const index = message.element as number;
          const table = transformTable(problem.elements[index]!);
          if (table === null) {
            throw new Error(`solver asked for missing transform ${index}`);
          }
          const order = message.order as number;
          const t = message.t as number;
          const fn =
            order === 0 ? table.value : order === 1 ? table.deriv : table.deriv2;
          send({ op: "transform_result", id: message.id, value: fn.call(table, t) });
          break;
        }
        case "whitebox": {
          const whitebox = problem.whitebox;
          if (!whitebox) {
            throw new Error("solver asked for a missing analytic part");
          }
          const x = message.x as number[];
          let value: number | number[];
          if (message.kind === "value") {
            value = whitebox.value(x);
          } else if (message.kind === "grad") {
            value = Array.from(whitebox.grad(x));
          } else {
            value = Array.from(whitebox.hvp(x, message.v as number[]));
          }
          send({ op: "whitebox_result", id: message.id, value });
          break;
        }
        case "callback": {
          const reply: Record<string, unknown> = {
            op: "callback_result",
            id: message.id,
          };
          if (callback) {
            const update = callback(message.state as CallbackState);
            if (update && update.weights) {
              reply.weights = update.weights;
            }
          }
          send(reply);
          break;
        }
        case "done": {
          settled = true;
          child.stdin.end();
          resolve(message.record as unknown as RunRecord);
          break;
        }
        case "error": {
          throw new Error(`solver error: ${message.message as string}`);
        }
        default:
          throw new Error(`unexpected message op: ${message.op}`);
      }
    };

    send({ op: "solve", ...body });
  });
}
