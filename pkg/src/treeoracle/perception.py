"""Perception agent: validates, imputes, and encodes raw tabular/JSON records
into schema-conformant structured inputs. Downstream modules never see a
missing value; every rejection is an explicit error, never a silent coercion.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .core import (
    EngineError,
    FeatureKind,
    FeatureValue,
    Schema,
    StructuredInput,
    UnknownFeature,
    digest_json,
)


class MissingFeature(EngineError):
    def __init__(self, feature: str):
        super().__init__(f"feature {feature!r} absent and policy is reject")
        self.feature = feature


class EmptyColumn(EngineError):
    def __init__(self, feature: str):
        super().__init__(f"cannot fit imputer: feature {feature!r} entirely missing")
        self.feature = feature


@dataclass(frozen=True)
class RawRecord:
    """An unnormalized record x0: a flat key-value map plus optional free text."""
    values: Mapping[str, object]
    text: str | None = None
    source_id: str | None = None

    def derived_source_id(self) -> str:
        if self.source_id is not None:
            return self.source_id
        return digest_json({"values": dict(self.values), "text": self.text})[:16]

    def to_json(self) -> dict:
        return {"values": dict(self.values), "text": self.text,
                "source_id": self.source_id}

    @staticmethod
    def from_json(obj: Mapping) -> "RawRecord":
        return RawRecord(dict(obj["values"]), obj.get("text"), obj.get("source_id"))


REJECT = "reject"
FILL_CONSTANT = "fill_constant"
FILL_MEDIAN = "fill_median"
FILL_MODE = "fill_mode"


@dataclass(frozen=True)
class ImputationRule:
    kind: str
    constant: object | None = None

    def __post_init__(self) -> None:
        if self.kind not in (REJECT, FILL_CONSTANT, FILL_MEDIAN, FILL_MODE):
            raise EngineError(f"unknown imputation rule {self.kind!r}")


@dataclass(frozen=True)
class ImputationPolicy:
    """Per-feature missing-data rules. fill_median is numeric-only and
    fill_mode categorical/boolean-only; both require fitting."""
    rules: Mapping[str, ImputationRule]

    @staticmethod
    def reject_all(schema: Schema) -> "ImputationPolicy":
        return ImputationPolicy({f.name: ImputationRule(REJECT) for f in schema.features})

    def rule_for(self, name: str) -> ImputationRule:
        if name not in self.rules:
            raise UnknownFeature(name)
        return self.rules[name]

    def validate_against(self, schema: Schema) -> None:
        for spec in schema.features:
            rule = self.rule_for(spec.name)
            if rule.kind == FILL_MEDIAN and spec.kind is not FeatureKind.NUMERIC:
                raise EngineError(f"fill_median on non-numeric feature {spec.name!r}")
            if rule.kind == FILL_MODE and spec.kind is FeatureKind.NUMERIC:
                raise EngineError(f"fill_mode on numeric feature {spec.name!r}")


@dataclass(frozen=True)
class FittedImputer:
    """An imputation policy plus the statistics it needs at apply time."""
    policy: ImputationPolicy
    fills: Mapping[str, FeatureValue] = field(default_factory=dict)

    def fill_for(self, name: str) -> FeatureValue:
        rule = self.policy.rule_for(name)
        if rule.kind == FILL_CONSTANT:
            return rule.constant
        if rule.kind in (FILL_MEDIAN, FILL_MODE):
            if name not in self.fills:
                raise EngineError(f"imputer not fitted for feature {name!r}")
            return self.fills[name]
        raise MissingFeature(name)


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def _mode(values: list) -> object:
    counts = Counter(values)
    top = max(counts.values())
    # deterministic tie-break: lexicographically smallest rendering
    tied = [v for v, c in counts.items() if c == top]
    return sorted(tied, key=str)[0]


def fit_imputer(records: Iterable[RawRecord], schema: Schema,
                policy: ImputationPolicy) -> FittedImputer:
    """Fit median/mode statistics from the non-missing training values.

    Raises EmptyColumn when a fill_median/fill_mode feature has no observed
    value at all.
    """
    policy.validate_against(schema)
    records = list(records)
    if not records:
        raise EngineError("fit_imputer requires a non-empty dataset")
    fills: dict[str, FeatureValue] = {}
    for i, spec in enumerate(schema.features):
        rule = policy.rule_for(spec.name)
        if rule.kind not in (FILL_MEDIAN, FILL_MODE):
            continue
        observed = []
        for rec in records:
            raw = rec.values.get(spec.name)
            if raw is None:
                continue
            observed.append(schema.coerce(i, raw))
        if not observed:
            raise EmptyColumn(spec.name)
        fills[spec.name] = _median(observed) if rule.kind == FILL_MEDIAN else _mode(observed)
    return FittedImputer(policy, fills)


def normalize(record: RawRecord, schema: Schema,
              imputer: FittedImputer | ImputationPolicy | None = None) -> StructuredInput:
    """Encode a raw record as a StructuredInput: coerce each declared feature
    to its kind, apply the missing-data policy, and copy free text verbatim.
    """
    if imputer is None:
        imputer = FittedImputer(ImputationPolicy.reject_all(schema))
    elif isinstance(imputer, ImputationPolicy):
        imputer.validate_against(schema)
        imputer = FittedImputer(imputer)
    else:
        imputer.policy.validate_against(schema)

    out: list[FeatureValue] = []
    for i, spec in enumerate(schema.features):
        raw = record.values.get(spec.name)
        if raw is None:
            raw = imputer.fill_for(spec.name)
        out.append(schema.coerce(i, raw))
    return StructuredInput(values=tuple(out), text_abstraction=record.text,
                           source_id=record.derived_source_id())


def as_record(x: StructuredInput, schema: Schema) -> RawRecord:
    """Re-serialize a structured input as a raw record (normalize's inverse)."""
    return RawRecord(values={spec.name: v for spec, v in zip(schema.features, x.values)},
                     text=x.text_abstraction, source_id=x.source_id)


# ---------------------------------------------------------------------------
# External record formats


def records_from_json_lines(text: str) -> list[RawRecord]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        out.append(record_from_json_object(obj))
    return out


def record_from_json_object(obj: Mapping, text_field: str = "text",
                            id_field: str = "source_id") -> RawRecord:
    values = {k: v for k, v in obj.items() if k not in (text_field, id_field)}
    return RawRecord(values=values, text=obj.get(text_field),
                     source_id=obj.get(id_field))


def records_from_csv(text: str, text_field: str = "text",
                     id_field: str = "source_id") -> list[RawRecord]:
    """Parse CSV rows (RFC-4180, header required); an empty cell is missing."""
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        values = {k: (None if v == "" else v) for k, v in row.items()
                  if k not in (text_field, id_field)}
        text_val = row.get(text_field) or None
        out.append(RawRecord(values=values, text=text_val,
                             source_id=row.get(id_field) or None))
    return out
