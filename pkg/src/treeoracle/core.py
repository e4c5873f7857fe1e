"""Shared domain types: schemas, structured inputs, the belief state, provenance
records, and the action vocabulary spoken by every other module.

All values here are plain, JSON-serializable data. Serialization is canonical
(field-name-sorted, explicit nulls) so that content digests are reproducible
across runs and implementations.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping, Optional


class EngineError(Exception):
    """Base class for all domain errors raised by this package."""


# ---------------------------------------------------------------------------
# Canonical serialization and digests


def canonical_json(obj: Any) -> str:
    """Render ``obj`` as canonical JSON: sorted keys, compact separators,
    explicit nulls, no NaN/Infinity."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


def canonical_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")


def digest(payload: bytes) -> str:
    """Content hash (SHA-256 hex) of an event payload. Total and deterministic."""
    return hashlib.sha256(payload).hexdigest()


def digest_json(obj: Any) -> str:
    """Digest of the canonical serialization of ``obj``."""
    return digest(canonical_bytes(obj))


def hash_unit(text: str) -> float:
    """Deterministic hash of ``text`` to a float in [0, 1)."""
    h = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2**64


# ---------------------------------------------------------------------------
# Feature schema


class FeatureKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"


# A feature value is a finite float, a vocabulary symbol, a bool, or None
# (missing). Missing values exist only upstream of the tree oracle.
FeatureValue = Optional[object]


class SchemaError(EngineError):
    pass


class TypeMismatch(EngineError):
    def __init__(self, feature: str, value: object):
        super().__init__(f"feature {feature!r}: value {value!r} not coercible to declared kind")
        self.feature = feature


class UnknownCategory(EngineError):
    def __init__(self, feature: str, symbol: object):
        super().__init__(f"feature {feature!r}: symbol {symbol!r} not in declared vocabulary")
        self.feature = feature


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: FeatureKind
    vocabulary: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if (self.kind is FeatureKind.CATEGORICAL) != (self.vocabulary is not None):
            raise SchemaError(
                f"feature {self.name!r}: vocabulary present iff kind is categorical")
        if self.vocabulary is not None and len(self.vocabulary) == 0:
            raise SchemaError(f"feature {self.name!r}: empty vocabulary")

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind.value,
                "vocabulary": list(self.vocabulary) if self.vocabulary else None}

    @staticmethod
    def from_json(obj: Mapping) -> "FeatureSpec":
        vocab = obj.get("vocabulary")
        return FeatureSpec(obj["name"], FeatureKind(obj["kind"]),
                           tuple(vocab) if vocab else None)


@dataclass(frozen=True)
class LabelSpec:
    """Classification target: a name plus its ordered label vocabulary.

    The vocabulary order is the global tie-break order for verdicts.
    """
    name: str
    vocabulary: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.vocabulary) == 0:
            raise SchemaError("label vocabulary must be non-empty")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise SchemaError("label vocabulary has duplicates")

    def to_json(self) -> dict:
        return {"name": self.name, "vocabulary": list(self.vocabulary)}

    @staticmethod
    def from_json(obj: Mapping) -> "LabelSpec":
        return LabelSpec(obj["name"], tuple(obj["vocabulary"]))


def _coerce_value(spec: FeatureSpec, value: object) -> FeatureValue:
    """Coerce a raw scalar to the declared kind, or raise. Never silent."""
    if value is None:
        return None
    if spec.kind is FeatureKind.NUMERIC:
        if isinstance(value, bool):
            raise TypeMismatch(spec.name, value)
        if isinstance(value, (int, float)):
            out = float(value)
        elif isinstance(value, str):
            try:
                out = float(value)
            except ValueError:
                raise TypeMismatch(spec.name, value) from None
        else:
            raise TypeMismatch(spec.name, value)
        if not math.isfinite(out):
            raise TypeMismatch(spec.name, value)
        return out
    if spec.kind is FeatureKind.BOOLEAN:
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "1"):
                return True
            if low in ("false", "0"):
                return False
        raise TypeMismatch(spec.name, value)
    # categorical
    if not isinstance(value, str):
        raise TypeMismatch(spec.name, value)
    assert spec.vocabulary is not None
    if value not in spec.vocabulary:
        raise UnknownCategory(spec.name, value)
    return value


@dataclass(frozen=True)
class Schema:
    """Ordered feature declarations plus the classification label.

    The feature order defines the feature index used everywhere downstream.
    """
    features: tuple[FeatureSpec, ...]
    label: LabelSpec

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def feature_index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise UnknownFeature(name)

    def coerce(self, index: int, value: object) -> FeatureValue:
        return _coerce_value(self.features[index], value)

    def validate_label(self, label: str) -> str:
        if label not in self.label.vocabulary:
            raise UnknownCategory(self.label.name, label)
        return label

    def to_json(self) -> dict:
        return {"features": [f.to_json() for f in self.features],
                "label": self.label.to_json()}

    @staticmethod
    def from_json(obj: Mapping) -> "Schema":
        return Schema(tuple(FeatureSpec.from_json(f) for f in obj["features"]),
                      LabelSpec.from_json(obj["label"]))

    @property
    def digest(self) -> str:
        return digest_json(self.to_json())


class UnknownFeature(EngineError):
    def __init__(self, name: str):
        super().__init__(f"unknown feature {name!r}")
        self.feature = name


class SchemaMismatch(EngineError):
    pass


@dataclass(frozen=True)
class StructuredInput:
    """The perception agent's output: schema-ordered typed values plus an
    optional free-text abstraction. ``source_id`` identifies the raw record
    and is preserved through the whole pipeline for provenance."""
    values: tuple[FeatureValue, ...]
    text_abstraction: str | None
    source_id: str

    def value(self, schema: Schema, name: str) -> FeatureValue:
        return self.values[schema.feature_index(name)]

    def to_json(self) -> dict:
        return {"values": list(self.values),
                "text_abstraction": self.text_abstraction,
                "source_id": self.source_id}

    @staticmethod
    def from_json(obj: Mapping) -> "StructuredInput":
        return StructuredInput(tuple(obj["values"]), obj["text_abstraction"],
                               obj["source_id"])


def validate_input(x: StructuredInput, schema: Schema) -> None:
    """Check a structured input is in canonical schema form (numerics are
    finite floats, symbols in vocabulary, booleans real bools); raises
    SchemaMismatch otherwise."""
    if len(x.values) != len(schema.features):
        raise SchemaMismatch(
            f"expected {len(schema.features)} values, got {len(x.values)}")
    for spec, v in zip(schema.features, x.values):
        if v is None:
            continue
        if spec.kind is FeatureKind.NUMERIC:
            if type(v) is float and math.isfinite(v):
                continue
        elif spec.kind is FeatureKind.BOOLEAN:
            if type(v) is bool:
                continue
        else:
            if type(v) is str and v in (spec.vocabulary or ()):
                continue
        raise SchemaMismatch(
            f"feature {spec.name!r}: value {v!r} not in canonical {spec.kind.value} form")


# ---------------------------------------------------------------------------
# Actions


class Actor(str, Enum):
    PERCEPTION = "perception"
    TREE = "tree"
    LLM = "llm"
    TOOL = "tool"
    ORCHESTRATOR = "orchestrator"


class ActionKind(str, Enum):
    CALL_TREE = "call_tree"
    CALL_LLM = "call_llm"
    CALL_TOOL = "call_tool"
    RESOLVE_CONFLICT = "resolve_conflict"
    FINALIZE = "finalize"


@dataclass(frozen=True)
class ToolQuery:
    """A structured query q dispatched to the external tool interface."""
    tool_name: str
    arguments: Mapping[str, Any]
    query_id: str

    def to_json(self) -> dict:
        return {"tool_name": self.tool_name,
                "arguments": dict(self.arguments),
                "query_id": self.query_id}

    @staticmethod
    def from_json(obj: Mapping) -> "ToolQuery":
        return ToolQuery(obj["tool_name"], dict(obj["arguments"]), obj["query_id"])


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    prompt_template_id: str | None = None
    tool_query: ToolQuery | None = None
    answer: str | None = None

    def __post_init__(self) -> None:
        if self.kind is ActionKind.FINALIZE and not self.answer:
            raise EngineError("Finalize must carry a non-empty answer")
        if self.kind is ActionKind.CALL_TOOL and self.tool_query is None:
            raise EngineError("CallTool must carry a ToolQuery")

    @staticmethod
    def call_tree() -> "Action":
        return Action(ActionKind.CALL_TREE)

    @staticmethod
    def call_llm(prompt_template_id: str) -> "Action":
        return Action(ActionKind.CALL_LLM, prompt_template_id=prompt_template_id)

    @staticmethod
    def call_tool(query: ToolQuery) -> "Action":
        return Action(ActionKind.CALL_TOOL, tool_query=query)

    @staticmethod
    def resolve_conflict() -> "Action":
        return Action(ActionKind.RESOLVE_CONFLICT)

    @staticmethod
    def finalize(answer: str) -> "Action":
        return Action(ActionKind.FINALIZE, answer=answer)

    def to_json(self) -> dict:
        return {"kind": self.kind.value,
                "prompt_template_id": self.prompt_template_id,
                "tool_query": self.tool_query.to_json() if self.tool_query else None,
                "answer": self.answer}

    @staticmethod
    def from_json(obj: Mapping) -> "Action":
        tq = obj.get("tool_query")
        return Action(ActionKind(obj["kind"]),
                      prompt_template_id=obj.get("prompt_template_id"),
                      tool_query=ToolQuery.from_json(tq) if tq else None,
                      answer=obj.get("answer"))


# ---------------------------------------------------------------------------
# Belief state and provenance


class EventKind(str, Enum):
    TREE_VERDICT = "tree_verdict"
    NEURAL_RESPONSE = "neural_response"
    TOOL_RESULT = "tool_result"
    CONFLICT_RESOLUTION = "conflict_resolution"
    FINALIZATION = "finalization"


@dataclass(frozen=True)
class BeliefEvent:
    """One entry of the belief state: a module output in canonical JSON form."""
    kind: EventKind
    payload: Mapping[str, Any]

    @property
    def payload_digest(self) -> str:
        return digest_json({"kind": self.kind.value, "payload": self.payload})

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "payload": self.payload}

    @staticmethod
    def from_json(obj: Mapping) -> "BeliefEvent":
        return BeliefEvent(EventKind(obj["kind"]), dict(obj["payload"]))


@dataclass(frozen=True)
class ProvenanceRecord:
    step_index: int
    actor: Actor
    action: Action
    payload_digest: str
    timestamp: int  # logical clock tick, not wall time

    def to_json(self) -> dict:
        return {"step_index": self.step_index, "actor": self.actor.value,
                "action": self.action.to_json(),
                "payload_digest": self.payload_digest,
                "timestamp": self.timestamp}

    @staticmethod
    def from_json(obj: Mapping) -> "ProvenanceRecord":
        return ProvenanceRecord(obj["step_index"], Actor(obj["actor"]),
                                Action.from_json(obj["action"]),
                                obj["payload_digest"], obj["timestamp"])


class LogicalClock:
    """Monotone tick counter; keeps transcripts free of wall-clock time."""

    def __init__(self, start: int = 0):
        self._now = start

    @property
    def now(self) -> int:
        return self._now

    def tick(self) -> int:
        self._now += 1
        return self._now

    def advance(self, ticks: int) -> int:
        self._now += max(0, ticks)
        return self._now


@dataclass(frozen=True)
class BeliefState:
    """The orchestrator's context c: the structured input plus an append-only,
    provenance-stamped event list. Appends return a new state sharing the
    prefix, so prior entries can never be mutated."""
    input: StructuredInput
    events: tuple[BeliefEvent, ...] = ()
    provenance: tuple[ProvenanceRecord, ...] = ()

    def __post_init__(self) -> None:
        if len(self.events) != len(self.provenance):
            raise EngineError("events and provenance must stay aligned")

    def append(self, event: BeliefEvent, actor: Actor, action: Action,
               timestamp: int) -> "BeliefState":
        record = ProvenanceRecord(
            step_index=len(self.events), actor=actor, action=action,
            payload_digest=event.payload_digest, timestamp=timestamp)
        return replace(self, events=self.events + (event,),
                       provenance=self.provenance + (record,))

    def events_of(self, kind: EventKind) -> list[BeliefEvent]:
        return [e for e in self.events if e.kind is kind]

    def latest(self, kind: EventKind) -> BeliefEvent | None:
        for e in reversed(self.events):
            if e.kind is kind:
                return e
        return None

    def to_json(self) -> dict:
        return {"input": self.input.to_json(),
                "events": [e.to_json() for e in self.events],
                "provenance": [p.to_json() for p in self.provenance]}

    @staticmethod
    def from_json(obj: Mapping) -> "BeliefState":
        return BeliefState(
            StructuredInput.from_json(obj["input"]),
            tuple(BeliefEvent.from_json(e) for e in obj["events"]),
            tuple(ProvenanceRecord.from_json(p) for p in obj["provenance"]))
