"""External tool interface: a registry of schema-checked tools plus the two
built-ins, an arithmetic calculator and a key-value knowledge store.

`invoke` is total: every failure mode (unknown tool, bad arguments, timeout,
handler exception) comes back as a ToolResult error value so the orchestrator
can always log it into the belief state. Elapsed time is counted in logical
ticks, keeping transcripts deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import jsonschema

from .calc import calc_eval
from .core import EngineError, LogicalClock, ToolQuery


class DuplicateTool(EngineError):
    def __init__(self, name: str):
        super().__init__(f"tool {name!r} already registered")
        self.name = name


@dataclass(frozen=True)
class ToolSpec:
    name: str
    argument_schema: Mapping[str, Any]
    result_schema: Mapping[str, Any]
    description: str
    timeout_ticks: int = 10


@dataclass(frozen=True)
class ToolOutput:
    """What a handler returns: a JSON payload plus its logical-tick cost."""
    payload: Mapping[str, Any]
    ticks: int = 1


ToolHandler = Callable[[Mapping[str, Any]], "ToolOutput | Mapping[str, Any]"]


@dataclass(frozen=True)
class ToolResult:
    query_id: str
    status: str  # "ok" | "error"
    payload: Mapping[str, Any] | None = None
    error_kind: str | None = None  # unknown_tool | invalid_arguments | timeout | handler_error
    error_message: str | None = None
    elapsed: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "status": self.status,
                "payload": dict(self.payload) if self.payload is not None else None,
                "error_kind": self.error_kind, "error_message": self.error_message,
                "elapsed": self.elapsed}

    @staticmethod
    def from_json(obj: Mapping) -> "ToolResult":
        payload = obj.get("payload")
        return ToolResult(obj["query_id"], obj["status"],
                          dict(payload) if payload is not None else None,
                          obj.get("error_kind"), obj.get("error_message"),
                          obj.get("elapsed", 0))


class ToolRegistry:
    """Named tools with argument/result schemas. Populate during setup; treat
    as immutable afterwards (handlers may run concurrently across episodes).
    """

    def __init__(self) -> None:
        self._tools: dict[str, tuple[ToolSpec, ToolHandler]] = {}

    def register(self, spec: ToolSpec, handler: ToolHandler) -> "ToolRegistry":
        if spec.name in self._tools:
            raise DuplicateTool(spec.name)
        self._tools[spec.name] = (spec, handler)
        return self

    def names(self) -> list[str]:
        return sorted(self._tools)

    def specs(self) -> list[ToolSpec]:
        return [self._tools[name][0] for name in self.names()]

    def get(self, name: str) -> tuple[ToolSpec, ToolHandler] | None:
        return self._tools.get(name)


def register_tool(registry: ToolRegistry, spec: ToolSpec,
                  handler: ToolHandler) -> ToolRegistry:
    return registry.register(spec, handler)


def invoke(registry: ToolRegistry, query: ToolQuery,
           clock: LogicalClock | None = None) -> ToolResult:
    """Dispatch one query. Argument validation precedes handler execution;
    the result payload is validated against the declared result schema."""
    entry = registry.get(query.tool_name)
    if entry is None:
        return ToolResult(query.query_id, "error", error_kind="unknown_tool",
                          error_message=f"no tool named {query.tool_name!r}",
                          elapsed=_advance(clock, 1))
    spec, handler = entry
    try:
        jsonschema.validate(dict(query.arguments), dict(spec.argument_schema))
    except jsonschema.ValidationError as err:
        return ToolResult(query.query_id, "error", error_kind="invalid_arguments",
                          error_message=err.message, elapsed=_advance(clock, 1))
    try:
        raw = handler(dict(query.arguments))
    except Exception as err:  # noqa: BLE001 - the boundary must be total
        return ToolResult(query.query_id, "error", error_kind="handler_error",
                          error_message=f"{type(err).__name__}: {err}",
                          elapsed=_advance(clock, 1))
    out = raw if isinstance(raw, ToolOutput) else ToolOutput(payload=raw)
    if out.ticks > spec.timeout_ticks:
        return ToolResult(query.query_id, "error", error_kind="timeout",
                          error_message=f"handler took {out.ticks} ticks "
                                        f"(budget {spec.timeout_ticks})",
                          elapsed=_advance(clock, spec.timeout_ticks))
    try:
        jsonschema.validate(dict(out.payload), dict(spec.result_schema))
    except jsonschema.ValidationError as err:
        return ToolResult(query.query_id, "error", error_kind="handler_error",
                          error_message=f"result schema violation: {err.message}",
                          elapsed=_advance(clock, out.ticks))
    return ToolResult(query.query_id, "ok", payload=dict(out.payload),
                      elapsed=_advance(clock, out.ticks))


def _advance(clock: LogicalClock | None, ticks: int) -> int:
    if clock is not None:
        clock.advance(ticks)
    return ticks


# ---------------------------------------------------------------------------
# Built-in tools


CALCULATOR_SPEC = ToolSpec(
    name="calculator",
    argument_schema={"type": "object",
                     "properties": {"expr": {"type": "string"}},
                     "required": ["expr"], "additionalProperties": False},
    result_schema={"type": "object",
                   "properties": {"value": {"type": "number"}},
                   "required": ["value"], "additionalProperties": False},
    description="Evaluate an arithmetic expression (+, -, *, /, ^, parentheses).",
)


def calculator_handler(args: Mapping[str, Any]) -> dict:
    return {"value": calc_eval(args["expr"])}


KB_SPEC = ToolSpec(
    name="kb",
    argument_schema={"type": "object",
                     "properties": {"key": {"type": "string"}},
                     "required": ["key"], "additionalProperties": False},
    result_schema={"type": "object",
                   "properties": {"found": {"type": "boolean"}, "value": {}},
                   "required": ["found", "value"], "additionalProperties": False},
    description="Look up a key in the knowledge store; reports found=false on misses.",
)


def load_kb(source: str | Path | Mapping[str, Any]) -> dict[str, Any]:
    """Load a knowledge store from a JSON file of key -> value (or pass a dict)."""
    if isinstance(source, Mapping):
        return dict(source)
    data = json.loads(Path(source).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise EngineError("kb store file must hold a single JSON object")
    return data


def kb_lookup(store: Mapping[str, Any], key: str) -> tuple[bool, Any]:
    """Exact-match lookup distinguishing "found null" from "absent"."""
    if key in store:
        return True, store[key]
    return False, None


def make_kb_handler(store: Mapping[str, Any]) -> ToolHandler:
    def handler(args: Mapping[str, Any]) -> dict:
        found, value = kb_lookup(store, args["key"])
        return {"found": found, "value": value}
    return handler


def make_builtin_registry(kb_store: Mapping[str, Any] | None = None) -> ToolRegistry:
    registry = ToolRegistry()
    registry.register(CALCULATOR_SPEC, calculator_handler)
    registry.register(KB_SPEC, make_kb_handler(kb_store or {}))
    return registry
