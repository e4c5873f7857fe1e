"""Neural agent plumbing: prompt construction from the belief state, pluggable
generation backends (a deterministic scripted backend for reproducible runs,
an HTTP backend for real models), and the line-oriented move protocol.

The move grammar is strict on purpose: one directive per response, parsed
totally (malformation is a value, never an exception), so the orchestrator can
log whatever comes back.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from typing import Any, Mapping

import requests

from .core import (
    BeliefEvent,
    BeliefState,
    EngineError,
    EventKind,
    Schema,
    SchemaMismatch,
    canonical_json,
)
from .tools import ToolRegistry
from .tree import ForestTrace, RuleTrace, SymbolicVerdict

KNOWN_SLOTS = ("input_summary", "belief_digest", "tree_verdict",
               "tool_results", "task_instruction")

MOVE_GRAMMAR_ID = "moves/1"

GRAMMAR_INSTRUCTIONS = {
    MOVE_GRAMMAR_ID: (
        "Respond with exactly one directive line:\n"
        "  ANSWER: <label> | RATIONALE: <text>\n"
        "  TOOL: <name> | ARGS: <json object>\n"
        "  CHECK: <json assignment> | CLAIM: <label>\n"
        "  PLAN: 1. <step> 2. <step> ...\n"
    ),
}


class MissingSlot(EngineError):
    def __init__(self, slot: str):
        super().__init__(f"prompt slot {slot!r} cannot be resolved from the belief state")
        self.slot = slot


class BackendTimeout(EngineError):
    pass


class BackendHTTPError(EngineError):
    def __init__(self, status: int, message: str):
        super().__init__(f"backend HTTP error (status {status}): {message}")
        self.status = status


class NoRuleMatched(EngineError):
    pass


# ---------------------------------------------------------------------------
# Agent moves


@dataclass(frozen=True)
class Answer:
    label: str
    rationale: str


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: Mapping[str, Any]


@dataclass(frozen=True)
class HypothesisCheck:
    assignment: Mapping[str, Any]
    claimed_label: str


@dataclass(frozen=True)
class Plan:
    steps: tuple[str, ...]


AgentMove = Answer | ToolCall | HypothesisCheck | Plan


@dataclass(frozen=True)
class NeuralResponse:
    raw_text: str
    parsed: AgentMove | None
    parse_status: str  # "ok" | "malformed"
    parse_reason: str | None = None

    def __post_init__(self) -> None:
        if (self.parse_status == "ok") != (self.parsed is not None):
            raise EngineError("parse_status ok iff a parsed move is present")

    def to_json(self) -> dict:
        return {"raw_text": self.raw_text,
                "parsed": move_to_json(self.parsed) if self.parsed else None,
                "parse_status": self.parse_status,
                "parse_reason": self.parse_reason}


def move_to_json(move: AgentMove) -> dict:
    if isinstance(move, Answer):
        return {"move": "answer", "label": move.label, "rationale": move.rationale}
    if isinstance(move, ToolCall):
        return {"move": "tool_call", "tool_name": move.tool_name,
                "arguments": dict(move.arguments)}
    if isinstance(move, HypothesisCheck):
        return {"move": "hypothesis_check", "assignment": dict(move.assignment),
                "claimed_label": move.claimed_label}
    return {"move": "plan", "steps": list(move.steps)}


def move_from_json(obj: Mapping) -> AgentMove:
    kind = obj["move"]
    if kind == "answer":
        return Answer(obj["label"], obj["rationale"])
    if kind == "tool_call":
        return ToolCall(obj["tool_name"], dict(obj["arguments"]))
    if kind == "hypothesis_check":
        return HypothesisCheck(dict(obj["assignment"]), obj["claimed_label"])
    return Plan(tuple(obj["steps"]))


def format_move(move: AgentMove) -> str:
    """Emit a move in the directive grammar (the inverse of parse_move)."""
    if isinstance(move, Answer):
        return f"ANSWER: {move.label} | RATIONALE: {move.rationale}"
    if isinstance(move, ToolCall):
        return f"TOOL: {move.tool_name} | ARGS: {json.dumps(dict(move.arguments), sort_keys=True)}"
    if isinstance(move, HypothesisCheck):
        return (f"CHECK: {json.dumps(dict(move.assignment), sort_keys=True)}"
                f" | CLAIM: {move.claimed_label}")
    return "PLAN: " + " ".join(f"{i + 1}. {s}" for i, s in enumerate(move.steps))


# ---------------------------------------------------------------------------
# Prompt templates


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    role_preamble: str
    slots: tuple[str, ...]
    task_instruction: str | None = None
    response_grammar_id: str = MOVE_GRAMMAR_ID

    def __post_init__(self) -> None:
        for slot in self.slots:
            if slot not in KNOWN_SLOTS:
                raise EngineError(f"unknown prompt slot {slot!r}")
        if self.response_grammar_id not in GRAMMAR_INSTRUCTIONS:
            raise EngineError(f"unknown response grammar {self.response_grammar_id!r}")

    def to_json(self) -> dict:
        return {"id": self.id, "role_preamble": self.role_preamble,
                "slots": list(self.slots), "task_instruction": self.task_instruction,
                "response_grammar_id": self.response_grammar_id}

    @staticmethod
    def from_json(obj: Mapping) -> "PromptTemplate":
        return PromptTemplate(obj["id"], obj["role_preamble"], tuple(obj["slots"]),
                              obj.get("task_instruction"),
                              obj.get("response_grammar_id", MOVE_GRAMMAR_ID))


DEFAULT_TEMPLATE = PromptTemplate(
    id="default",
    role_preamble=("You are the neural reasoning agent in a neuro-symbolic "
                   "pipeline. Use the context below and reply with one "
                   "directive line."),
    slots=("input_summary", "belief_digest"),
)


def render_trace_lines(verdict_payload: Mapping[str, Any]) -> list[str]:
    """Root-to-leaf rendering of a verdict's rule trace for prompt text."""
    trace = verdict_payload.get("trace", {})
    lines: list[str] = []
    if trace.get("kind") == "tree":
        for step in trace.get("steps", []):
            pred = step["predicate"]
            lines.append(f"step {step['node_id']}: {_render_predicate(pred, step['feature_name'])}"
                         f" observed={step['observed']!r} -> {step['branch']}")
    elif trace.get("kind") == "forest":
        tally = trace.get("tally", {})
        lines.append("forest votes: " + ", ".join(f"{k}={v}" for k, v in sorted(tally.items())))
    lines.append(f"verdict: {verdict_payload['outcome']}"
                 f" (confidence {verdict_payload['confidence']:.2f})")
    return lines


def _render_predicate(pred: Mapping[str, Any], feature_name: str) -> str:
    if pred["kind"] == "numeric_le":
        return f"{feature_name} <= {pred['threshold']!r}"
    if pred["kind"] == "categorical_in":
        return f"{feature_name} in {{{', '.join(pred['categories'])}}}"
    return f"{feature_name} is {pred['value']}"


def event_summary(event: BeliefEvent) -> str:
    """Compact one-line rendering of a belief event, used in prompt context
    and in text trace exports."""
    p = event.payload
    if event.kind is EventKind.TREE_VERDICT:
        return f"verdict outcome={p['outcome']} confidence={p['confidence']:.2f}"
    if event.kind is EventKind.NEURAL_RESPONSE:
        if p.get("parse_status") == "ok":
            return f"llm move={p['parsed']['move']}"
        return f"llm malformed ({p.get('parse_reason')})"
    if event.kind is EventKind.TOOL_RESULT:
        if p.get("status") == "ok":
            return f"tool {p['query_id']} ok {canonical_json(p['payload'])}"
        return (f"tool {p['query_id']} error({p.get('error_kind')})"
                f" {p.get('error_message')}")
    if event.kind is EventKind.CONFLICT_RESOLUTION:
        return f"resolution winner={p['winner']} answer={p['answer']}"
    return f"finalized answer={p['answer']} winner={p.get('winner')}"


def _resolve_slot(slot: str, template: PromptTemplate, belief: BeliefState) -> str:
    if slot == "input_summary":
        x = belief.input
        lines = [f"source_id: {x.source_id}"]
        lines += [f"value[{i}]: {v!r}" for i, v in enumerate(x.values)]
        if x.text_abstraction:
            lines.append(f"text: {x.text_abstraction}")
        return "\n".join(lines)
    if slot == "belief_digest":
        lines = []
        for i, (event, record) in enumerate(zip(belief.events, belief.provenance)):
            lines.append(f"{i}. [{record.actor.value}] {event_summary(event)}"
                         f" digest={record.payload_digest[:12]}")
        return "\n".join(lines) if lines else "(no events yet)"
    if slot == "tree_verdict":
        event = belief.latest(EventKind.TREE_VERDICT)
        if event is None:
            raise MissingSlot(slot)
        return "\n".join(render_trace_lines(event.payload))
    if slot == "tool_results":
        events = belief.events_of(EventKind.TOOL_RESULT)
        if not events:
            raise MissingSlot(slot)
        lines = []
        for e in events:
            p = e.payload
            if p.get("status") == "ok":
                lines.append(f"{p['query_id']}: ok {json.dumps(p['payload'], sort_keys=True)}")
            else:
                lines.append(f"{p['query_id']}: error({p.get('error_kind')})"
                             f" {p.get('error_message')}")
        return "\n".join(lines)
    if slot == "task_instruction":
        if template.task_instruction is None:
            raise MissingSlot(slot)
        return template.task_instruction
    raise MissingSlot(slot)


def render_prompt(template: PromptTemplate, belief: BeliefState,
                  registry: ToolRegistry | None = None) -> str:
    """Deterministic prompt text: preamble, one section per slot (belief events
    summarized oldest-first so the newest sits last), the tool roster when a
    registry is supplied, and the response grammar instructions."""
    parts = [template.role_preamble]
    for slot in template.slots:
        parts.append(f"## {slot}\n{_resolve_slot(slot, template, belief)}")
    if registry is not None:
        roster = "\n".join(f"- {spec.name}: {spec.description}"
                           for spec in registry.specs())
        parts.append(f"## available tools\n{roster}")
    parts.append("## response format\n" + GRAMMAR_INSTRUCTIONS[template.response_grammar_id])
    return "\n\n".join(parts)


# ---------------------------------------------------------------------------
# Backends


@dataclass(frozen=True)
class ScriptedRule:
    pattern: str
    response: str
    regex: bool = False

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.pattern, prompt) is not None
        return self.pattern in prompt


@dataclass(frozen=True)
class ScriptedBackend:
    """First-match-wins rule table; the workhorse for reproducible runs."""
    rules: tuple[ScriptedRule, ...]
    default: str | None = None

    def to_json(self) -> dict:
        return {"kind": "scripted",
                "rules": [{"pattern": r.pattern, "response": r.response,
                           "regex": r.regex} for r in self.rules],
                "default": self.default}

    @staticmethod
    def from_json(obj: Mapping) -> "ScriptedBackend":
        return ScriptedBackend(
            rules=tuple(ScriptedRule(r["pattern"], r["response"], r.get("regex", False))
                        for r in obj["rules"]),
            default=obj.get("default"))


@dataclass(frozen=True)
class RemoteBackend:
    """HTTP completion backend: POST {model, prompt, temperature, max_tokens},
    expect {text}. Temperature is pinned to 0 for reproducibility."""
    endpoint: str
    model: str
    auth_token_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    max_tokens: int = 512
    provider: str = "plain"

    def to_json(self) -> dict:
        return {"kind": "remote", "endpoint": self.endpoint, "model": self.model,
                "auth_token_env": self.auth_token_env, "timeout": self.timeout,
                "max_retries": self.max_retries, "temperature": self.temperature,
                "max_tokens": self.max_tokens, "provider": self.provider}

    @staticmethod
    def from_json(obj: Mapping) -> "RemoteBackend":
        return RemoteBackend(obj["endpoint"], obj["model"],
                             obj.get("auth_token_env"), obj.get("timeout", 30.0),
                             obj.get("max_retries", 2), obj.get("temperature", 0.0),
                             obj.get("max_tokens", 512), obj.get("provider", "plain"))


BackendConfig = ScriptedBackend | RemoteBackend


def backend_from_json(obj: Mapping) -> BackendConfig:
    if obj.get("kind") == "scripted":
        return ScriptedBackend.from_json(obj)
    if obj.get("kind") == "remote":
        return RemoteBackend.from_json(obj)
    raise EngineError(f"unknown backend kind {obj.get('kind')!r}")


def generate(backend: BackendConfig, prompt: str) -> str:
    """One completion for the prompt. Scripted backends apply their rule table
    first-match-wins; remote backends retry per configuration."""
    if isinstance(backend, ScriptedBackend):
        for rule in backend.rules:
            if rule.matches(prompt):
                return rule.response
        if backend.default is not None:
            return backend.default
        raise NoRuleMatched("no scripted rule matched and no default is set")
    return _generate_remote(backend, prompt)


def _generate_remote(backend: RemoteBackend, prompt: str) -> str:
    headers = {}
    if backend.auth_token_env:
        token = os.environ.get(backend.auth_token_env, "")
        headers["Authorization"] = f"Bearer {token}"
    body = {"model": backend.model, "prompt": prompt,
            "temperature": backend.temperature, "max_tokens": backend.max_tokens}
    last_error: EngineError | None = None
    for _ in range(max(1, backend.max_retries)):
        try:
            resp = requests.post(backend.endpoint, json=body, headers=headers,
                                 timeout=backend.timeout)
        except requests.Timeout:
            last_error = BackendTimeout(f"no response within {backend.timeout}s")
            continue
        except requests.RequestException as err:
            last_error = BackendHTTPError(0, str(err))
            continue
        if resp.status_code != 200:
            last_error = BackendHTTPError(resp.status_code, resp.text[:200])
            continue
        try:
            return str(resp.json()["text"])
        except Exception as err:  # noqa: BLE001
            last_error = BackendHTTPError(resp.status_code,
                                          f"malformed response body: {err}")
    assert last_error is not None
    raise last_error


# ---------------------------------------------------------------------------
# Move parsing


def parse_move(raw_text: str, grammar_id: str = MOVE_GRAMMAR_ID) -> NeuralResponse:
    """Total parser for the directive protocol; the first recognized directive
    line wins, anything else yields a malformed value."""
    if grammar_id not in GRAMMAR_INSTRUCTIONS:
        return _malformed(raw_text, f"unknown grammar {grammar_id!r}")
    for line in raw_text.splitlines():
        line = line.strip()
        if line.startswith("ANSWER:"):
            return _parse_answer(raw_text, line)
        if line.startswith("TOOL:"):
            return _parse_tool(raw_text, line)
        if line.startswith("CHECK:"):
            return _parse_check(raw_text, line)
        if line.startswith("PLAN:"):
            return _parse_plan(raw_text, line)
    return _malformed(raw_text, "no directive")


def _malformed(raw: str, reason: str) -> NeuralResponse:
    return NeuralResponse(raw_text=raw, parsed=None, parse_status="malformed",
                          parse_reason=reason)


def _ok(raw: str, move: AgentMove) -> NeuralResponse:
    return NeuralResponse(raw_text=raw, parsed=move, parse_status="ok")


def _parse_answer(raw: str, line: str) -> NeuralResponse:
    body = line[len("ANSWER:"):]
    if "|" not in body:
        return _malformed(raw, "ANSWER missing '| RATIONALE:' part")
    label_part, rest = body.split("|", 1)
    rest = rest.strip()
    if not rest.startswith("RATIONALE:"):
        return _malformed(raw, "ANSWER missing RATIONALE")
    label = label_part.strip()
    if not label:
        return _malformed(raw, "empty answer label")
    return _ok(raw, Answer(label, rest[len("RATIONALE:"):].strip()))


def _parse_tool(raw: str, line: str) -> NeuralResponse:
    body = line[len("TOOL:"):]
    if "|" not in body:
        return _malformed(raw, "TOOL missing '| ARGS:' part")
    name_part, rest = body.split("|", 1)
    rest = rest.strip()
    if not rest.startswith("ARGS:"):
        return _malformed(raw, "TOOL missing ARGS")
    name = name_part.strip()
    if not name:
        return _malformed(raw, "empty tool name")
    try:
        args = json.loads(rest[len("ARGS:"):].strip())
    except json.JSONDecodeError as err:
        return _malformed(raw, f"bad ARGS json: {err.msg}")
    if not isinstance(args, dict):
        return _malformed(raw, "ARGS must be a json object")
    return _ok(raw, ToolCall(name, args))


def _parse_check(raw: str, line: str) -> NeuralResponse:
    body = line[len("CHECK:"):]
    if "|" not in body:
        return _malformed(raw, "CHECK missing '| CLAIM:' part")
    json_part, rest = body.split("|", 1)
    rest = rest.strip()
    if not rest.startswith("CLAIM:"):
        return _malformed(raw, "CHECK missing CLAIM")
    try:
        assignment = json.loads(json_part.strip())
    except json.JSONDecodeError as err:
        return _malformed(raw, f"bad CHECK json: {err.msg}")
    if not isinstance(assignment, dict):
        return _malformed(raw, "CHECK assignment must be a json object")
    claim = rest[len("CLAIM:"):].strip()
    if not claim:
        return _malformed(raw, "empty claim label")
    return _ok(raw, HypothesisCheck(assignment, claim))


_PLAN_STEP = re.compile(r"\d+\.\s*")


def _parse_plan(raw: str, line: str) -> NeuralResponse:
    body = line[len("PLAN:"):].strip()
    pieces = [p.strip() for p in _PLAN_STEP.split(body) if p.strip()]
    if not pieces:
        return _malformed(raw, "PLAN with no steps")
    return _ok(raw, Plan(tuple(pieces)))


# ---------------------------------------------------------------------------
# Verdict verbalization


def verbalize_verdict(verdict: SymbolicVerdict, schema: Schema) -> str:
    """Deterministic English rendering of a verdict: one sentence per trace
    step, then the outcome with its confidence. This is the fallback renderer;
    any backend-polished variant must preserve the outcome string verbatim."""
    trace = verdict.trace
    if isinstance(trace, RuleTrace):
        names = set(schema.feature_names)
        sentences = []
        for step in trace.steps:
            if step.feature_name not in names:
                raise SchemaMismatch(f"trace feature {step.feature_name!r} is not in the schema")
            sentences.append(_step_sentence(step))
        if not sentences:
            return (f"Outcome {verdict.outcome} "
                    f"(confidence {verdict.confidence:.2f}) at the root leaf.")
        sentences.append(f"Outcome {verdict.outcome} (confidence {verdict.confidence:.2f}).")
        return " ".join(sentences)
    assert isinstance(trace, ForestTrace)
    votes = ", ".join(f"{lab}={n}" for lab, n in sorted(trace.tally.items()))
    return (f"Trees voted {votes}. Outcome {verdict.outcome} "
            f"(confidence {verdict.confidence:.2f}).")


def _step_sentence(step) -> str:
    pred = step.predicate
    side = "left" if step.branch == "left" else "right"
    if pred.kind == "numeric_le":
        rel = "<=" if step.branch == "left" else ">"
        return (f"Because {step.feature_name} = {step.observed!r} which is "
                f"{rel} {pred.threshold!r}, took the {side} branch.")
    if pred.kind == "categorical_in":
        inside = "in" if step.branch == "left" else "not in"
        cats = ", ".join(pred.categories or ())
        return (f"Because {step.feature_name} = {step.observed!r} which is "
                f"{inside} {{{cats}}}, took the {side} branch.")
    match = "matches" if step.branch == "left" else "does not match"
    return (f"Because {step.feature_name} = {step.observed!r} which {match} "
            f"{pred.value}, took the {side} branch.")
