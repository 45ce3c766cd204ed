"""Line-oriented JSON protocol serving solves to foreign-language clients.

The client writes one ``solve`` request on stdin; the server answers with
``eval`` (and optionally ``transform``, ``whitebox``, ``callback``) requests
that the client must respond to, and finishes with a ``done`` message
carrying the run record. One JSON object per line in both directions. See
docs/rpc_protocol.md for the full message reference.
"""

from __future__ import annotations

import json
import math
import sys
from typing import Optional

import numpy as np

from .driver import CallbackInfo, RunRecord, SolverOptions, minimize
from .problem import ElementSpec, ProblemSpec, Transform, TRANSFORMS, Whitebox

__all__ = ["serve", "OPTION_KEYS"]

#: The documented option keys accepted in a solve request.
OPTION_KEYS = {
    "rho_start": float,
    "rho_end": float,
    "max_element_evals": int,
    "xi": float,
    "restarts": int,
    "structured": bool,
    "capacity": int,
    "seed": int,
    "max_iterations": int,
}


class _ProtocolError(Exception):
    pass


def _jsonsafe(value):
    """Strict-JSON form: non-finite floats become null (JSON has no NaN)."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonsafe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonsafe(v) for v in value]
    return value


class _Channel:
    """One JSON object per line, requests paired with typed responses."""

    def __init__(self, stdin, stdout):
        self.stdin = stdin
        self.stdout = stdout
        self.next_id = 0

    def send(self, message: dict) -> None:
        self.stdout.write(
            json.dumps(_jsonsafe(message), sort_keys=True, allow_nan=False) + "\n"
        )
        self.stdout.flush()

    def read(self) -> dict:
        line = self.stdin.readline()
        if not line:
            raise _ProtocolError("client closed the stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise _ProtocolError(f"bad JSON from client: {exc}") from exc

    def request(self, message: dict, expect: str) -> dict:
        self.next_id += 1
        message = dict(message, id=self.next_id)
        self.send(message)
        reply = self.read()
        if reply.get("op") != expect or reply.get("id") != self.next_id:
            raise _ProtocolError(
                f"expected {expect} reply to id {self.next_id}, got {reply!r}"
            )
        return reply


def _parse_options(raw: dict) -> SolverOptions:
    unknown = set(raw) - set(OPTION_KEYS)
    if unknown:
        raise _ProtocolError(f"unknown option keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        caster = OPTION_KEYS[key]
        if caster is bool:
            if not isinstance(value, bool):
                raise _ProtocolError(f"option {key} must be a boolean")
            kwargs[key] = value
        else:
            kwargs[key] = caster(value)
    return SolverOptions(**kwargs)


def _remote_transform(channel: _Channel, element: int) -> Transform:
    def call(order: int, t: float) -> float:
        reply = channel.request(
            {"op": "transform", "element": element, "order": order, "t": t},
            "transform_result",
        )
        return float(reply["value"])

    return Transform(
        value=lambda t: call(0, t),
        deriv=lambda t: call(1, t),
        deriv2=lambda t: call(2, t),
        name="remote",
    )


def _build_problem(channel: _Channel, payload: dict) -> ProblemSpec:
    elements = []
    for i, ed in enumerate(payload["elements"]):
        transform: Optional[Transform] = None
        spec = ed.get("transform")
        if spec == "callable":
            transform = _remote_transform(channel, i)
        elif spec is not None:
            if spec not in TRANSFORMS:
                raise _ProtocolError(f"unknown transform name: {spec!r}")
            transform = TRANSFORMS[spec]

        def evaluator(u, _i=i):
            reply = channel.request(
                {"op": "eval", "element": _i, "point": [float(v) for v in u]},
                "value",
            )
            value = reply.get("value")
            # JSON has no NaN/inf literal; clients send null for those.
            return math.nan if value is None else float(value)

        elements.append(
            ElementSpec(
                index_set=ed["indices"],
                evaluator=evaluator,
                weight=float(ed.get("weight", 1.0)),
                transform=transform,
            )
        )
    whitebox = None
    if payload.get("whitebox"):
        whitebox = _remote_whitebox(channel)
    return ProblemSpec(
        dimension=int(payload["dimension"]), elements=elements, whitebox=whitebox
    )


def _remote_whitebox(channel: _Channel) -> Whitebox:
    def call(kind: str, x, v=None):
        message = {"op": "whitebox", "kind": kind, "x": [float(t) for t in x]}
        if v is not None:
            message["v"] = [float(t) for t in v]
        return channel.request(message, "whitebox_result")["value"]

    return Whitebox(
        value=lambda x: float(call("value", x)),
        grad=lambda x: np.asarray(call("grad", x), dtype=float),
        hvp=lambda x, v: np.asarray(call("hvp", x, v), dtype=float),
    )


def _callback_bridge(channel: _Channel):
    def callback(info: CallbackInfo):
        reply = channel.request(
            {
                "op": "callback",
                "state": {
                    "iteration": info.iteration,
                    "x": [float(v) for v in info.x],
                    "f": info.f,
                    "rho": info.rho,
                    "deltas": [float(v) for v in info.deltas],
                    "counts": [int(v) for v in info.counts],
                    "r": info.r if info.r is None or np.isfinite(info.r) else None,
                },
            },
            "callback_result",
        )
        weights = reply.get("weights")
        if weights is not None:
            return {"weights": [float(w) for w in weights]}
        return None

    return callback


def serve(stdin=None, stdout=None) -> int:
    """Serve exactly one solve request on the given streams."""
    channel = _Channel(stdin or sys.stdin, stdout or sys.stdout)
    try:
        request = channel.read()
        if request.get("op") != "solve":
            raise _ProtocolError("first message must be a solve request")
        options = _parse_options(request.get("options", {}))
        problem = _build_problem(channel, request["problem"])
        x_start = np.asarray(request["x0"], dtype=float)
        callback = _callback_bridge(channel) if request.get("callback") else None
        record: RunRecord = minimize(problem, x_start, options, callback)
        channel.send({"op": "done", "record": record.to_dict()})
        return 0
    except _ProtocolError as exc:
        channel.send({"op": "error", "message": str(exc)})
        return 1
    except (ValueError, IndexError, KeyError, TypeError) as exc:
        channel.send({"op": "error", "message": f"{type(exc).__name__}: {exc}"})
        return 1
