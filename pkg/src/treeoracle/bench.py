"""Synthetic benchmark generation and the three-way ablation runner: an
LLM-only baseline, LLM plus post-hoc trace checking, and the fully
orchestrated pipeline, compared on byte-identical instances. The harness
reproduces the comparative methodology (the ordering), not any absolute
benchmark numbers.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .agent import ScriptedBackend, ScriptedRule
from .calc import calc_eval
from .core import (
    EngineError,
    EventKind,
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    Schema,
    hash_unit,
)
from .orchestrator import (
    DEFAULT_CONFLICT_RULES,
    DEFAULT_POLICY,
    LLM_ONLY_POLICY,
    LLM_PLUS_TRACE_POLICY,
    Budget,
    ConflictPolicy,
    ConflictRuleEntry,
    EpisodeConfig,
    EpisodeTranscript,
    LLM_WINS_UNDETERMINED,
    RuleBasedPolicy,
    TREE_WINS,
    run_episode,
)
from .perception import RawRecord, normalize
from .tools import make_builtin_registry
from .tree import Dataset, TrainParams, train_cart, training_accuracy

ENTAILMENT = "entailment"
ARITHMETIC = "arithmetic"

ARM_LLM_ONLY = "llm_only"
ARM_LLM_PLUS_TRACE = "llm_plus_trace"
ARM_FULL = "full"
ARMS = (ARM_LLM_ONLY, ARM_LLM_PLUS_TRACE, ARM_FULL)


@dataclass(frozen=True)
class TaskInstance:
    instance_id: str
    family: str
    record: RawRecord
    truth: str
    difficulty: Mapping[str, Any]
    seed: int

    def to_json(self) -> dict:
        return {"instance_id": self.instance_id, "family": self.family,
                "record": self.record.to_json(), "truth": self.truth,
                "difficulty": dict(self.difficulty), "seed": self.seed}

    @staticmethod
    def from_json(obj: Mapping) -> "TaskInstance":
        return TaskInstance(obj["instance_id"], obj["family"],
                            RawRecord.from_json(obj["record"]), obj["truth"],
                            dict(obj["difficulty"]), obj["seed"])


@dataclass(frozen=True)
class Suite:
    family: str
    schema: Schema
    instances: tuple[TaskInstance, ...]
    train_records: tuple[RawRecord, ...]
    train_labels: tuple[str, ...]
    concept: Mapping[str, Any] | None
    seed: int

    def to_json(self) -> dict:
        return {"family": self.family, "schema": self.schema.to_json(),
                "instances": [t.to_json() for t in self.instances],
                "train_records": [r.to_json() for r in self.train_records],
                "train_labels": list(self.train_labels),
                "concept": self.concept, "seed": self.seed}

    @staticmethod
    def from_json(obj: Mapping) -> "Suite":
        return Suite(obj["family"], Schema.from_json(obj["schema"]),
                     tuple(TaskInstance.from_json(t) for t in obj["instances"]),
                     tuple(RawRecord.from_json(r) for r in obj["train_records"]),
                     tuple(obj["train_labels"]), obj.get("concept"), obj["seed"])


def instances_to_jsonl(suite: Suite) -> str:
    return "\n".join(json.dumps(t.to_json(), sort_keys=True)
                     for t in suite.instances) + "\n"


def instances_from_jsonl(text: str) -> list[TaskInstance]:
    return [TaskInstance.from_json(json.loads(line))
            for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Entailment suite: boolean concepts expressible as depth-d decision trees


def _sample_concept(rng: random.Random, depth: int, k: int,
                    used: frozenset[int] = frozenset()) -> dict:
    if depth == 0:
        return {"label": rng.choice(("no", "yes"))}
    feature = rng.choice([i for i in range(k) if i not in used])
    return {"feature": feature,
            "left": _sample_concept(rng, depth - 1, k, used | {feature}),
            "right": _sample_concept(rng, depth - 1, k, used | {feature})}


def _concept_labels(node: Mapping) -> set[str]:
    if "label" in node:
        return {node["label"]}
    return _concept_labels(node["left"]) | _concept_labels(node["right"])


def eval_concept(node: Mapping, values: Sequence[bool]) -> str:
    """Walk the generating concept: a True feature goes left."""
    while "label" not in node:
        node = node["left"] if values[node["feature"]] else node["right"]
    return node["label"]


def entailment_schema(k: int) -> Schema:
    return Schema(tuple(FeatureSpec(f"b{i}", FeatureKind.BOOLEAN) for i in range(k)),
                  LabelSpec("entailed", ("no", "yes")))


def gen_entailment_suite(n: int, depth_d: int, k: int, seed: int) -> Suite:
    """n labeled instances of a random boolean concept expressible as a
    depth-d tree over k boolean features, plus the full truth table as the
    clean training split (so an exact oracle tree is guaranteed)."""
    if not 1 <= depth_d <= k <= 12:
        raise EngineError("require 1 <= depth_d <= k <= 12")
    rng = random.Random(seed)
    concept = _sample_concept(rng, depth_d, k)
    while len(_concept_labels(concept)) < 2:
        concept = _sample_concept(rng, depth_d, k)
    schema = entailment_schema(k)

    instances = []
    for i in range(n):
        values = tuple(rng.random() < 0.5 for _ in range(k))
        record = RawRecord({f"b{j}": v for j, v in enumerate(values)},
                           source_id=f"ent-s{seed}-i{i:05d}")
        instances.append(TaskInstance(
            instance_id=record.source_id, family=ENTAILMENT, record=record,
            truth=eval_concept(concept, values),
            difficulty={"depth": depth_d, "k": k}, seed=seed))

    train_records = []
    train_labels = []
    for bits in range(2 ** k):
        values = tuple(bool((bits >> j) & 1) for j in range(k))
        train_records.append(RawRecord({f"b{j}": v for j, v in enumerate(values)},
                                       source_id=f"train-{bits:04d}"))
        train_labels.append(eval_concept(concept, values))
    return Suite(family=ENTAILMENT, schema=schema, instances=tuple(instances),
                 train_records=tuple(train_records), train_labels=tuple(train_labels),
                 concept=concept, seed=seed)


# ---------------------------------------------------------------------------
# Arithmetic suite: templated word problems with a chained expression


_ADD_TEMPLATES = ("{name} gains {v} more.", "Then {v} arrive.", "{name} finds {v} extra.")
_MUL_TEMPLATES = ("The count is multiplied by {v}.", "Everything {v}-tuples.")
_SUB_TEMPLATES = ("{name} loses {v}.", "Then {v} go away.")


def gen_arithmetic_suite(n: int, steps_s: int, value_range: tuple[int, int],
                         seed: int) -> Suite:
    """Word problems whose answers require steps_s chained operations; ground
    truth comes from calc_eval on the generator's own expression."""
    if not 1 <= steps_s <= 6:
        raise EngineError("steps_s must be in [1, 6]")
    lo, hi = value_range
    if not (0 < lo <= hi):
        raise EngineError("value range must satisfy 0 < lo <= hi")
    rng = random.Random(seed)
    schema = Schema((), LabelSpec("answer", ("0",)))  # label vocab unused here
    instances = []
    for i in range(n):
        name = rng.choice(("Ada", "Bo", "Cy"))
        start = rng.randint(lo, hi)
        expr = str(start)
        text = [f"{name} has {start} items."]
        total = float(start)
        for _ in range(steps_s):
            op = rng.choice(("add", "mul", "sub"))
            if op == "mul":
                v = rng.randint(2, 4)
                expr = f"({expr})*{v}"
                text.append(rng.choice(_MUL_TEMPLATES).format(name=name, v=v))
            elif op == "sub" and total >= 2:
                v = rng.randint(1, max(1, int(total) - 1))
                expr = f"({expr})-{v}"
                text.append(rng.choice(_SUB_TEMPLATES).format(name=name, v=v))
            else:
                v = rng.randint(lo, hi)
                expr = f"({expr})+{v}"
                text.append(rng.choice(_ADD_TEMPLATES).format(name=name, v=v))
            total = calc_eval(expr)
        truth_value = calc_eval(expr)
        assert truth_value == int(truth_value)
        text.append(f"How many items does {name} have?")
        record = RawRecord({}, text=" ".join(text), source_id=f"ari-s{seed}-i{i:05d}")
        instances.append(TaskInstance(
            instance_id=record.source_id, family=ARITHMETIC, record=record,
            truth=str(int(truth_value)),
            difficulty={"steps": steps_s, "expr": expr}, seed=seed))
    return Suite(family=ARITHMETIC, schema=schema, instances=tuple(instances),
                 train_records=(), train_labels=(), concept=None, seed=seed)


# ---------------------------------------------------------------------------
# Scripted LLM construction


def wrong_answer(instance: TaskInstance) -> str:
    """The deterministic wrong label injected for hallucinated instances."""
    if instance.family == ENTAILMENT:
        return "no" if instance.truth == "yes" else "yes"
    return str(int(instance.truth) + 1)


def scripted_llm_for_suite(suite: Suite, error_rate: float, seed: int) -> ScriptedBackend:
    """A rule table answering each instance correctly with probability
    1 - error_rate; errors are chosen by a seeded hash of the instance id, so
    the whole backend is reproducible."""
    if not 0.0 <= error_rate <= 1.0:
        raise EngineError("error_rate must lie in [0, 1]")
    rules = []
    for instance in suite.instances:
        wrong = hash_unit(f"{seed}:{instance.instance_id}") < error_rate
        label = wrong_answer(instance) if wrong else instance.truth
        rules.append(ScriptedRule(
            pattern=instance.instance_id,
            response=f"ANSWER: {label} | RATIONALE: scripted"))
    return ScriptedBackend(rules=tuple(rules),
                           default="ANSWER: unknown | RATIONALE: no scripted rule matched")


# ---------------------------------------------------------------------------
# Ablation arms


@dataclass(frozen=True)
class AblationConfig:
    arm: str
    policy: RuleBasedPolicy
    conflict_rules: ConflictPolicy
    budget: Budget

    def __post_init__(self) -> None:
        if self.arm not in ARMS:
            raise EngineError(f"unknown ablation arm {self.arm!r}")


# post-hoc trace checking: the tree overrides only at full confidence,
# otherwise the LLM answer stands
POSTHOC_CONFLICT_RULES = ConflictPolicy((
    ConflictRuleEntry(TREE_WINS, theta=1.0),
    ConflictRuleEntry(LLM_WINS_UNDETERMINED, theta=1.0),
))


def make_arm_configs(budget: Budget | None = None) -> tuple[AblationConfig, ...]:
    """The three arms; by construction they differ only in dispatch policy and
    conflict rules."""
    budget = budget or Budget(max_steps=6, max_tool_calls=2, max_llm_calls=2)
    return (
        AblationConfig(ARM_LLM_ONLY, LLM_ONLY_POLICY, DEFAULT_CONFLICT_RULES, budget),
        AblationConfig(ARM_LLM_PLUS_TRACE, LLM_PLUS_TRACE_POLICY,
                       POSTHOC_CONFLICT_RULES, budget),
        AblationConfig(ARM_FULL, DEFAULT_POLICY, DEFAULT_CONFLICT_RULES, budget),
    )


@dataclass(frozen=True)
class ArmMetrics:
    accuracy: float
    mean_steps: float
    mean_tool_calls: float
    mean_trace_length: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise EngineError("accuracy must lie in [0, 1]")

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "mean_steps": self.mean_steps,
                "mean_tool_calls": self.mean_tool_calls,
                "mean_trace_length": self.mean_trace_length}


@dataclass(frozen=True)
class MetricsReport:
    family: str
    arms: Mapping[str, ArmMetrics]
    instance_count: int
    seed: int

    def to_json(self) -> dict:
        return {"family": self.family,
                "arms": {name: m.to_json() for name, m in sorted(self.arms.items())},
                "instance_count": self.instance_count, "seed": self.seed}

    def render_text(self) -> str:
        """Accuracy table in the row/column layout of the three-setting
        benchmark comparison."""
        header = (f"| Suite | {ARM_LLM_ONLY} (%) | {ARM_LLM_PLUS_TRACE} (%) "
                  f"| {ARM_FULL} (%) |")
        sep = "|" + "---|" * 4
        row = (f"| {self.family} (n={self.instance_count}, seed={self.seed}) | "
               + " | ".join(f"{self.arms[a].accuracy * 100:.1f}" for a in ARMS)
               + " |")
        return "\n".join([header, sep, row]) + "\n"


# ---------------------------------------------------------------------------
# Routing micro-tasks for policy training


def make_routing_task_generator(k: int = 3, depth: int = 2,
                                llm_error_rate: float = 1.0,
                                budget: Budget | None = None):
    """Task generator for the dispatch-policy curriculum: each episode is one
    entailment instance with an exact oracle tree; the scripted backend
    answers it wrongly with the given probability. With error rate 1 and a
    two-step budget this is the degenerate routing bandit: calling the tree
    answers correctly, calling the LLM wastes the episode."""
    budget = budget or Budget(max_steps=2, max_tool_calls=1, max_llm_calls=1)
    cache: dict[int, tuple] = {}

    def generator(stage, episode_index: int, rng: random.Random):
        concept_depth = min(max(1, getattr(stage, "concept_depth", depth)), k)
        if concept_depth not in cache:
            suite = gen_entailment_suite(n=0, depth_d=concept_depth, k=k,
                                         seed=1000 + concept_depth)
            model, train_ds = train_suite_oracle(suite)
            if training_accuracy(model, train_ds) != 1.0:
                raise EngineError("routing task requires an exact oracle tree")
            cache[concept_depth] = (suite, model)
        suite, model = cache[concept_depth]
        values = tuple(rng.random() < 0.5 for _ in range(k))
        truth = eval_concept(suite.concept, values)
        record = RawRecord({f"b{j}": v for j, v in enumerate(values)},
                           source_id=f"route-{stage.index}-{episode_index}")
        wrong = "no" if truth == "yes" else "yes"
        label = wrong if rng.random() < llm_error_rate else truth
        backend = ScriptedBackend(
            rules=(), default=f"ANSWER: {label} | RATIONALE: scripted")
        config = EpisodeConfig(schema=suite.schema, backend=backend, model=model,
                               budget=budget, registry=make_builtin_registry())
        return record, truth, config

    return generator


def _trace_length(transcript: EpisodeTranscript) -> int:
    event = transcript.belief.latest(EventKind.TREE_VERDICT)
    if event is None:
        return 0
    trace = event.payload.get("trace", {})
    if trace.get("kind") == "tree":
        return len(trace.get("steps", ()))
    return max((len(t.get("steps", ())) for t in trace.get("per_tree", ())), default=0)


def train_suite_oracle(suite: Suite, max_depth: int | None = None):
    """Fit the oracle tree on the suite's clean split."""
    k = len(suite.schema.features)
    rows = tuple(normalize(r, suite.schema) for r in suite.train_records)
    dataset = Dataset(suite.schema, rows, suite.train_labels)
    params = TrainParams(criterion="gini", max_depth=max_depth or max(1, k),
                         min_leaf=1, min_split_gain=0.0)
    return train_cart(dataset, params), dataset


def run_ablation(suite: Suite, configs: Sequence[AblationConfig],
                 backend: ScriptedBackend, seed: int) -> MetricsReport:
    """Run every arm over byte-identical instances (sorted by id) and report
    per-arm accuracy and cost metrics. Requires an exact oracle tree on the
    suite's clean split."""
    model, train_ds = train_suite_oracle(suite)
    acc = training_accuracy(model, train_ds)
    if acc != 1.0:
        raise EngineError(f"oracle tree reached only {acc:.3f} training accuracy")
    registry = make_builtin_registry()
    instances = sorted(suite.instances, key=lambda t: t.instance_id)

    arms: dict[str, ArmMetrics] = {}
    for config in configs:
        hits = 0
        steps = tools = tracelen = 0
        for instance in instances:
            episode = EpisodeConfig(
                schema=suite.schema, backend=backend, model=model,
                policy=config.policy, conflict_rules=config.conflict_rules,
                budget=config.budget, registry=registry, seed=seed)
            transcript = run_episode(instance.record, episode)
            if transcript.terminal_status == "answered" \
                    and transcript.final_answer == instance.truth:
                hits += 1
            steps += transcript.counters["steps"]
            tools += transcript.counters["tool_calls"]
            tracelen += _trace_length(transcript)
        n = len(instances)
        arms[config.arm] = ArmMetrics(
            accuracy=hits / n, mean_steps=steps / n, mean_tool_calls=tools / n,
            mean_trace_length=tracelen / n)
    return MetricsReport(family=suite.family, arms=arms,
                         instance_count=len(instances), seed=seed)
