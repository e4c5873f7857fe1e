"""Central orchestrator: folds module outputs into the belief state, dispatches
the next action under a rule-based or learned policy, resolves tree/LLM
conflicts via priority rules, enforces budgets, and logs provenance for every
step. Episodes with a scripted backend and a fixed seed are byte-reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

from .agent import (
    DEFAULT_TEMPLATE,
    MOVE_GRAMMAR_ID,
    Answer,
    BackendConfig,
    HypothesisCheck,
    NeuralResponse,
    PromptTemplate,
    ToolCall,
    event_summary,
    generate,
    move_from_json,
    parse_move,
    render_prompt,
)
from .core import (
    Action,
    ActionKind,
    Actor,
    BeliefEvent,
    BeliefState,
    EngineError,
    EventKind,
    LogicalClock,
    Schema,
    ToolQuery,
    canonical_bytes,
)
from .perception import FittedImputer, RawRecord, normalize
from .tools import ToolOutput, ToolRegistry, ToolSpec, invoke, make_builtin_registry
from .tree import Model, SymbolicVerdict, check_consistency, predict_with_trace

TRANSCRIPT_FORMAT = "oracle-episode/1"


class NoAdmissibleAction(EngineError):
    pass


# ---------------------------------------------------------------------------
# Budget


@dataclass(frozen=True)
class Budget:
    max_steps: int = 8
    max_tool_calls: int = 3
    max_llm_calls: int = 3

    def __post_init__(self) -> None:
        if min(self.max_steps, self.max_tool_calls, self.max_llm_calls) < 1:
            raise EngineError("all budget fields must be >= 1")

    def to_json(self) -> dict:
        return {"max_steps": self.max_steps, "max_tool_calls": self.max_tool_calls,
                "max_llm_calls": self.max_llm_calls}

    @staticmethod
    def from_json(obj: Mapping) -> "Budget":
        return Budget(obj["max_steps"], obj["max_tool_calls"], obj["max_llm_calls"])


# ---------------------------------------------------------------------------
# Conflict rules

TREE_WINS = "tree_wins_if_confidence_ge"
LLM_WINS_UNDETERMINED = "llm_wins_if_tree_undetermined"
AGREEMENT_PASSES = "agreement_passes"
ESCALATE = "escalate_to_tool"

# A verdict counts as "undetermined" when its confidence does not exceed this.
UNDETERMINED_DEFAULT = 0.5


@dataclass(frozen=True)
class ConflictRuleEntry:
    kind: str
    theta: float | None = None
    tool_name: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in (TREE_WINS, LLM_WINS_UNDETERMINED, AGREEMENT_PASSES, ESCALATE):
            raise EngineError(f"unknown conflict rule kind {self.kind!r}")
        if self.kind == TREE_WINS and self.theta is None:
            raise EngineError("tree_wins_if_confidence_ge requires theta")
        if self.kind == ESCALATE and not self.tool_name:
            raise EngineError("escalate_to_tool requires a tool name")

    def is_total(self) -> bool:
        if self.kind == TREE_WINS:
            return (self.theta or 0.0) <= 0.0
        if self.kind == LLM_WINS_UNDETERMINED:
            return (self.theta if self.theta is not None else UNDETERMINED_DEFAULT) >= 1.0
        return False

    def to_json(self) -> dict:
        return {"kind": self.kind, "theta": self.theta, "tool_name": self.tool_name}

    @staticmethod
    def from_json(obj: Mapping) -> "ConflictRuleEntry":
        return ConflictRuleEntry(obj["kind"], obj.get("theta"), obj.get("tool_name"))


@dataclass(frozen=True)
class ConflictPolicy:
    entries: tuple[ConflictRuleEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise EngineError("conflict rule list must be non-empty")
        if not self.entries[-1].is_total():
            raise EngineError("final conflict rule must be total")

    def to_json(self) -> list:
        return [e.to_json() for e in self.entries]

    @staticmethod
    def from_json(obj: Sequence[Mapping]) -> "ConflictPolicy":
        return ConflictPolicy(tuple(ConflictRuleEntry.from_json(e) for e in obj))


DEFAULT_CONFLICT_RULES = ConflictPolicy((
    ConflictRuleEntry(TREE_WINS, theta=0.9),
    ConflictRuleEntry(LLM_WINS_UNDETERMINED, theta=UNDETERMINED_DEFAULT),
    ConflictRuleEntry(TREE_WINS, theta=0.0),
))


@dataclass(frozen=True)
class Resolution:
    answer: str
    winner: str  # "tree" | "llm" | "agreement"
    justification: str

    def to_json(self) -> dict:
        return {"answer": self.answer, "winner": self.winner,
                "justification": self.justification}


Escalator = Callable[[str, Mapping[str, Any]], Optional[str]]


def resolve_conflict(y_tree: SymbolicVerdict, y_llm: Answer,
                     rules: ConflictPolicy = DEFAULT_CONFLICT_RULES,
                     escalate: Escalator | None = None) -> Resolution:
    """Equal outcomes pass as agreement; otherwise the first applicable
    priority entry decides. The validated-total final entry guarantees a
    resolution for every input."""
    conf = y_tree.confidence
    if y_tree.outcome == y_llm.label:
        return Resolution(y_tree.outcome, "agreement",
                          f"tree and llm agree on {y_tree.outcome!r}")
    for entry in rules.entries:
        if entry.kind == TREE_WINS:
            theta = entry.theta or 0.0
            if conf >= theta:
                return Resolution(
                    y_tree.outcome, "tree",
                    f"rule {TREE_WINS}(theta={theta}): tree confidence "
                    f"{conf:.4f} >= {theta} beats llm answer {y_llm.label!r}")
        elif entry.kind == LLM_WINS_UNDETERMINED:
            theta = entry.theta if entry.theta is not None else UNDETERMINED_DEFAULT
            if conf <= theta:
                return Resolution(
                    y_llm.label, "llm",
                    f"rule {LLM_WINS_UNDETERMINED}(theta={theta}): tree confidence "
                    f"{conf:.4f} <= {theta}, llm answer {y_llm.label!r} wins")
        elif entry.kind == AGREEMENT_PASSES:
            continue  # outcomes differ here by construction
        else:  # escalate_to_tool
            if escalate is None:
                continue
            try:
                picked = escalate(entry.tool_name or "",
                                  {"tree": y_tree.outcome, "tree_confidence": conf,
                                   "llm": y_llm.label})
            except Exception:  # noqa: BLE001 - escalation failure is non-fatal
                picked = None
            if picked == y_tree.outcome:
                return Resolution(picked, "tree",
                                  f"rule {ESCALATE}({entry.tool_name}): tool sided "
                                  f"with the tree")
            if picked == y_llm.label:
                return Resolution(picked, "llm",
                                  f"rule {ESCALATE}({entry.tool_name}): tool sided "
                                  f"with the llm")
    raise AssertionError("unreachable: final conflict rule is total")


# ---------------------------------------------------------------------------
# Dispatch policies

# fixed action order shared with the learned policy's weight rows
ACTION_ORDER = (ActionKind.CALL_TREE, ActionKind.CALL_LLM,
                ActionKind.CALL_TOOL, ActionKind.FINALIZE)

CONDITIONS = ("always", "no_tree_verdict", "pending_tool", "awaiting_llm",
              "unresolved_conflict")
RULE_ACTIONS = ("call_tree", "call_llm", "call_tool", "resolve_conflict", "finalize")


@dataclass(frozen=True)
class DispatchRule:
    when: str
    do: str

    def __post_init__(self) -> None:
        if self.when not in CONDITIONS:
            raise EngineError(f"unknown dispatch condition {self.when!r}")
        if self.do not in RULE_ACTIONS:
            raise EngineError(f"unknown dispatch action {self.do!r}")

    def to_json(self) -> dict:
        return {"when": self.when, "do": self.do}


@dataclass(frozen=True)
class RuleBasedPolicy:
    rules: tuple[DispatchRule, ...]
    template_id: str = "default"

    def __post_init__(self) -> None:
        if not self.rules or self.rules[-1] != DispatchRule("always", "finalize"):
            raise EngineError(
                "rule list must end with the unconditional finalize fallback")

    def to_json(self) -> dict:
        return {"kind": "rule_based", "rules": [r.to_json() for r in self.rules],
                "template_id": self.template_id}


@dataclass
class LearnedPolicy:
    """Softmax-linear dispatch. Serving uses the argmax; training samples and
    records (features, action, mask) into `recorder`."""
    params: Any  # policy_learning.PolicyParams
    template_id: str = "default"
    sample: bool = False
    rng: random.Random | None = None
    recorder: list | None = None

    def to_json(self) -> dict:
        return {"kind": "learned", "params": self.params.to_json(),
                "template_id": self.template_id}


DispatchPolicy = RuleBasedPolicy | LearnedPolicy


DEFAULT_POLICY = RuleBasedPolicy((
    DispatchRule("no_tree_verdict", "call_tree"),
    DispatchRule("pending_tool", "call_tool"),
    DispatchRule("awaiting_llm", "call_llm"),
    DispatchRule("unresolved_conflict", "resolve_conflict"),
    DispatchRule("always", "finalize"),
))

LLM_ONLY_POLICY = RuleBasedPolicy((
    DispatchRule("pending_tool", "call_tool"),
    DispatchRule("awaiting_llm", "call_llm"),
    DispatchRule("always", "finalize"),
))

# post-hoc checking: the LLM answers first, the tree is consulted afterwards
LLM_PLUS_TRACE_POLICY = RuleBasedPolicy((
    DispatchRule("pending_tool", "call_tool"),
    DispatchRule("awaiting_llm", "call_llm"),
    DispatchRule("no_tree_verdict", "call_tree"),
    DispatchRule("unresolved_conflict", "resolve_conflict"),
    DispatchRule("always", "finalize"),
))

TREE_ONLY_POLICY = RuleBasedPolicy((
    DispatchRule("no_tree_verdict", "call_tree"),
    DispatchRule("always", "finalize"),
))

POLICY_PRESETS: dict[str, RuleBasedPolicy] = {
    "default": DEFAULT_POLICY,
    "llm_only": LLM_ONLY_POLICY,
    "llm_plus_trace": LLM_PLUS_TRACE_POLICY,
    "tree_only": TREE_ONLY_POLICY,
}

# malformed LLM output is retried once, then the policy falls through
MAX_MALFORMED_ATTEMPTS = 2


# ---------------------------------------------------------------------------
# Belief inspection helpers


def _counters(belief: BeliefState) -> dict[str, int]:
    return {"steps": len(belief.events),
            "tool_calls": len(belief.events_of(EventKind.TOOL_RESULT)),
            "llm_calls": len(belief.events_of(EventKind.NEURAL_RESPONSE))}


def latest_verdict(belief: BeliefState) -> SymbolicVerdict | None:
    event = belief.latest(EventKind.TREE_VERDICT)
    return SymbolicVerdict.from_json(event.payload) if event else None


def latest_llm_answer(belief: BeliefState) -> Answer | None:
    for event in reversed(belief.events):
        if event.kind is EventKind.NEURAL_RESPONSE:
            parsed = event.payload.get("parsed")
            if parsed and parsed.get("move") == "answer":
                move = move_from_json(parsed)
                assert isinstance(move, Answer)
                return move
    return None


def pending_tool_query(belief: BeliefState) -> ToolQuery | None:
    """The latest LLM tool/check request that has no matching result yet."""
    for idx in range(len(belief.events) - 1, -1, -1):
        event = belief.events[idx]
        if event.kind is not EventKind.NEURAL_RESPONSE:
            continue
        parsed = event.payload.get("parsed")
        if not parsed:
            return None
        move = move_from_json(parsed)
        if isinstance(move, ToolCall):
            query = ToolQuery(move.tool_name, move.arguments, f"q{idx}")
        elif isinstance(move, HypothesisCheck):
            query = ToolQuery("hypothesis_check",
                              {"assignment": dict(move.assignment),
                               "claimed_label": move.claimed_label}, f"q{idx}")
        else:
            return None
        for later in belief.events[idx + 1:]:
            if later.kind is EventKind.TOOL_RESULT \
                    and later.payload.get("query_id") == query.query_id:
                return None
        return query
    return None


def _malformed_count(belief: BeliefState) -> int:
    return sum(1 for e in belief.events_of(EventKind.NEURAL_RESPONSE)
               if e.payload.get("parse_status") == "malformed")


def _latest_resolution(belief: BeliefState) -> Mapping[str, Any] | None:
    event = belief.latest(EventKind.CONFLICT_RESOLUTION)
    return event.payload if event else None


def _condition_holds(name: str, belief: BeliefState, budget: Budget) -> bool:
    if name == "always":
        return True
    if name == "no_tree_verdict":
        return belief.latest(EventKind.TREE_VERDICT) is None
    if name == "pending_tool":
        return pending_tool_query(belief) is not None
    if name == "awaiting_llm":
        return (latest_llm_answer(belief) is None
                and pending_tool_query(belief) is None
                and _malformed_count(belief) < MAX_MALFORMED_ATTEMPTS)
    if name == "unresolved_conflict":
        verdict = latest_verdict(belief)
        answer = latest_llm_answer(belief)
        return (verdict is not None and answer is not None
                and verdict.outcome != answer.label
                and _latest_resolution(belief) is None)
    raise EngineError(f"unknown condition {name!r}")


def final_answer_detail(belief: BeliefState,
                        rules: ConflictPolicy = DEFAULT_CONFLICT_RULES
                        ) -> tuple[str, str, str] | None:
    """(answer, winner, justification) for finalization, or None when the
    belief state holds nothing to answer with."""
    resolution = _latest_resolution(belief)
    if resolution is not None:
        return (resolution["answer"], resolution["winner"],
                resolution["justification"])
    verdict = latest_verdict(belief)
    answer = latest_llm_answer(belief)
    if verdict is not None and answer is not None:
        res = resolve_conflict(verdict, answer, rules)
        return res.answer, res.winner, res.justification
    if verdict is not None:
        return verdict.outcome, "tree", "only the tree produced an answer"
    if answer is not None:
        return answer.label, "llm", "only the llm produced an answer"
    return None


# ---------------------------------------------------------------------------
# Dispatch


def _budget_left(kind: ActionKind, counters: Mapping[str, int], budget: Budget) -> bool:
    if kind is ActionKind.CALL_LLM:
        return counters["llm_calls"] < budget.max_llm_calls
    if kind is ActionKind.CALL_TOOL:
        return counters["tool_calls"] < budget.max_tool_calls
    return True


def _build_action(do: str, belief: BeliefState, template_id: str,
                  rules: ConflictPolicy) -> Action | None:
    if do == "call_tree":
        return Action.call_tree()
    if do == "call_llm":
        return Action.call_llm(template_id)
    if do == "call_tool":
        query = pending_tool_query(belief)
        return Action.call_tool(query) if query else None
    if do == "resolve_conflict":
        return Action.resolve_conflict()
    detail = final_answer_detail(belief, rules)
    if detail is None:
        return None
    return Action.finalize(detail[0])


_KIND_TO_DO = {ActionKind.CALL_TREE: "call_tree", ActionKind.CALL_LLM: "call_llm",
               ActionKind.CALL_TOOL: "call_tool", ActionKind.FINALIZE: "finalize"}


def dispatch(belief: BeliefState, policy: DispatchPolicy, budget: Budget,
             conflict_rules: ConflictPolicy = DEFAULT_CONFLICT_RULES,
             model_available: bool = True) -> Action:
    """Next action under the policy. Rule-based policies take the first
    matching rule; learned policies take the argmax of the masked action
    distribution (sampling instead when the policy is in training mode).
    Actions whose specific budget is exhausted are skipped."""
    counters = _counters(belief)
    if isinstance(policy, RuleBasedPolicy):
        for rule in policy.rules:
            if not _condition_holds(rule.when, belief, budget):
                continue
            kind = {"call_tree": ActionKind.CALL_TREE, "call_llm": ActionKind.CALL_LLM,
                    "call_tool": ActionKind.CALL_TOOL,
                    "resolve_conflict": ActionKind.RESOLVE_CONFLICT,
                    "finalize": ActionKind.FINALIZE}[rule.do]
            if not _budget_left(kind, counters, budget):
                continue
            if kind is ActionKind.CALL_TREE and not model_available:
                continue
            action = _build_action(rule.do, belief, policy.template_id, conflict_rules)
            if action is not None:
                return action
        raise NoAdmissibleAction("no dispatch rule yielded an admissible action")

    from .policy_learning import action_distribution, featurize_state

    mask = []
    for kind in ACTION_ORDER:
        ok = _budget_left(kind, counters, budget)
        if kind is ActionKind.CALL_TREE:
            ok = ok and model_available
        elif kind is ActionKind.CALL_TOOL:
            ok = ok and pending_tool_query(belief) is not None
        elif kind is ActionKind.FINALIZE:
            ok = ok and final_answer_detail(belief, conflict_rules) is not None
        mask.append(ok)
    if not any(mask):
        raise NoAdmissibleAction("all actions masked")
    features = featurize_state(belief, budget)
    probs = action_distribution(policy.params, features, mask)
    if policy.sample:
        rng = policy.rng or random.Random(0)
        idx = rng.choices(range(len(ACTION_ORDER)), weights=list(probs))[0]
    else:
        idx = max(range(len(ACTION_ORDER)), key=lambda i: (probs[i], -i))
    if policy.recorder is not None:
        policy.recorder.append((tuple(features), idx, tuple(mask)))
    action = _build_action(_KIND_TO_DO[ACTION_ORDER[idx]], belief,
                           policy.template_id, conflict_rules)
    assert action is not None  # masking guarantees buildability
    return action


# ---------------------------------------------------------------------------
# Belief update


def update_belief(belief: BeliefState, event: BeliefEvent, actor: Actor,
                  action: Action, clock: LogicalClock | None = None) -> BeliefState:
    """Append one event with its provenance stamp; prior entries are shared
    untouched, so the fold over an event list equals iterated appends."""
    timestamp = clock.tick() if clock is not None else len(belief.events) + 1
    return belief.append(event, actor, action, timestamp)


# ---------------------------------------------------------------------------
# Episode loop


@dataclass(frozen=True)
class EpisodeConfig:
    schema: Schema
    backend: BackendConfig
    model: Model | None = None
    policy: DispatchPolicy = DEFAULT_POLICY
    conflict_rules: ConflictPolicy = DEFAULT_CONFLICT_RULES
    budget: Budget = Budget()
    registry: ToolRegistry | None = None
    templates: Mapping[str, PromptTemplate] = field(
        default_factory=lambda: {"default": DEFAULT_TEMPLATE})
    imputer: FittedImputer | None = None
    grammar_id: str = MOVE_GRAMMAR_ID
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model is not None and self.model.schema.digest != self.schema.digest:
            raise EngineError("model schema digest does not match episode schema")


@dataclass(frozen=True)
class EpisodeTranscript:
    belief: BeliefState
    actions: tuple[Action, ...]
    final_answer: str | None
    counters: Mapping[str, int]
    terminal_status: str  # "answered" | "budget_exhausted" | "error"
    seed: int
    error_index: int | None = None

    def __post_init__(self) -> None:
        want = {
            "steps": len(self.actions),
            "tool_calls": sum(1 for a in self.actions if a.kind is ActionKind.CALL_TOOL),
            "llm_calls": sum(1 for a in self.actions if a.kind is ActionKind.CALL_LLM),
        }
        if dict(self.counters) != want:
            raise EngineError("transcript counters do not match the action sequence")
        answered = bool(self.actions) and self.actions[-1].kind is ActionKind.FINALIZE
        if (self.terminal_status == "answered") != answered:
            raise EngineError("terminal_status answered iff last action is Finalize")

    def to_json(self) -> dict:
        return {"format": TRANSCRIPT_FORMAT,
                "belief": self.belief.to_json(),
                "actions": [a.to_json() for a in self.actions],
                "final_answer": self.final_answer,
                "counters": dict(self.counters),
                "terminal_status": self.terminal_status,
                "seed": self.seed,
                "error_index": self.error_index}

    @staticmethod
    def from_json(obj: Mapping) -> "EpisodeTranscript":
        if obj.get("format") != TRANSCRIPT_FORMAT:
            raise EngineError(f"expected transcript format {TRANSCRIPT_FORMAT}")
        return EpisodeTranscript(
            belief=BeliefState.from_json(obj["belief"]),
            actions=tuple(Action.from_json(a) for a in obj["actions"]),
            final_answer=obj["final_answer"],
            counters=dict(obj["counters"]),
            terminal_status=obj["terminal_status"],
            seed=obj["seed"],
            error_index=obj.get("error_index"))


HYPOTHESIS_TOOL_SPEC = ToolSpec(
    name="hypothesis_check",
    argument_schema={"type": "object",
                     "properties": {"assignment": {"type": "object"},
                                    "claimed_label": {"type": "string"}},
                     "required": ["assignment", "claimed_label"],
                     "additionalProperties": False},
    result_schema={"type": "object"},
    description="Check a partial assignment + claimed label against the tree oracle.",
)


def _episode_registry(config: EpisodeConfig) -> ToolRegistry:
    registry = ToolRegistry()
    base = config.registry if config.registry is not None else make_builtin_registry()
    for spec in base.specs():
        entry = base.get(spec.name)
        assert entry is not None
        registry.register(spec, entry[1])
    if config.model is not None and registry.get("hypothesis_check") is None:
        model = config.model

        def handler(args: Mapping[str, Any]) -> dict:
            from .tree import DecisionTree
            if not isinstance(model, DecisionTree):
                raise EngineError("hypothesis checks require a single tree model")
            report = check_consistency(model, args["assignment"], args["claimed_label"])
            return {"status": report.status,
                    "reachable_leaves": [list(t) for t in report.reachable_leaves]}

        registry.register(HYPOTHESIS_TOOL_SPEC, handler)
    return registry


def run_episode(record: RawRecord, config: EpisodeConfig) -> EpisodeTranscript:
    """Normalize the raw record, then loop dispatch -> execute -> fold until
    finalization or budget exhaustion. Every module output, including malformed
    LLM moves and tool errors, lands in the belief state."""
    clock = LogicalClock()
    x = normalize(record, config.schema, config.imputer)
    belief = BeliefState(input=x)
    registry = _episode_registry(config)
    if isinstance(config.policy, LearnedPolicy) and config.policy.sample \
            and config.policy.rng is None:
        config.policy.rng = random.Random(config.seed)

    actions: list[Action] = []
    status: str | None = None
    final_answer: str | None = None
    error_index: int | None = None

    while True:
        if len(actions) >= config.budget.max_steps:
            status = "budget_exhausted"
            break
        try:
            action = dispatch(belief, config.policy, config.budget,
                              config.conflict_rules,
                              model_available=config.model is not None)
        except NoAdmissibleAction:
            status = "error"
            error_index = _causal_index(belief)
            break

        if action.kind is ActionKind.CALL_TREE:
            assert config.model is not None
            verdict = predict_with_trace(config.model, x)
            event = BeliefEvent(EventKind.TREE_VERDICT, verdict.to_json())
            actor = Actor.TREE
        elif action.kind is ActionKind.CALL_LLM:
            response = _run_llm(action, belief, config, registry)
            event = BeliefEvent(EventKind.NEURAL_RESPONSE, response.to_json())
            actor = Actor.LLM
        elif action.kind is ActionKind.CALL_TOOL:
            assert action.tool_query is not None
            result = invoke(registry, action.tool_query, clock)
            event = BeliefEvent(EventKind.TOOL_RESULT, result.to_json())
            actor = Actor.TOOL
        elif action.kind is ActionKind.RESOLVE_CONFLICT:
            verdict = latest_verdict(belief)
            answer = latest_llm_answer(belief)
            assert verdict is not None and answer is not None
            resolution = resolve_conflict(verdict, answer, config.conflict_rules,
                                          escalate=_make_escalator(registry))
            event = BeliefEvent(EventKind.CONFLICT_RESOLUTION, resolution.to_json())
            actor = Actor.ORCHESTRATOR
        else:  # finalize
            detail = final_answer_detail(belief, config.conflict_rules)
            assert detail is not None and detail[0] == action.answer
            event = BeliefEvent(EventKind.FINALIZATION,
                                {"answer": detail[0], "winner": detail[1],
                                 "justification": detail[2]})
            actor = Actor.ORCHESTRATOR
            status = "answered"
            final_answer = detail[0]

        belief = update_belief(belief, event, actor, action, clock)
        actions.append(action)
        if status is not None:
            break

    return EpisodeTranscript(
        belief=belief, actions=tuple(actions), final_answer=final_answer,
        counters=_counters(belief), terminal_status=status or "error",
        seed=config.seed, error_index=error_index)


def _run_llm(action: Action, belief: BeliefState, config: EpisodeConfig,
             registry: ToolRegistry) -> NeuralResponse:
    template = config.templates.get(action.prompt_template_id or "default")
    if template is None:
        return NeuralResponse("", None, "malformed",
                              f"unknown prompt template {action.prompt_template_id!r}")
    try:
        prompt = render_prompt(template, belief, registry)
    except EngineError as err:
        return NeuralResponse("", None, "malformed", f"prompt: {err}")
    try:
        raw = generate(config.backend, prompt)
    except EngineError as err:
        return NeuralResponse("", None, "malformed", f"backend: {err}")
    return parse_move(raw, config.grammar_id)


def _make_escalator(registry: ToolRegistry) -> Escalator:
    def escalate(tool_name: str, payload: Mapping[str, Any]) -> str | None:
        entry = registry.get(tool_name)
        if entry is None:
            return None
        # out-of-band consultation: the handler runs directly, no belief event
        try:
            raw = entry[1](dict(payload))
        except Exception:  # noqa: BLE001
            return None
        out = raw.payload if isinstance(raw, ToolOutput) else raw
        answer = out.get("answer") if isinstance(out, Mapping) else None
        return str(answer) if answer is not None else None
    return escalate


def _causal_index(belief: BeliefState) -> int | None:
    for idx in range(len(belief.events) - 1, -1, -1):
        event = belief.events[idx]
        if event.kind is EventKind.NEURAL_RESPONSE \
                and event.payload.get("parse_status") == "malformed":
            return idx
    return len(belief.events) - 1 if belief.events else None


# ---------------------------------------------------------------------------
# Trace export


def export_trace(transcript: EpisodeTranscript, format: str = "json") -> bytes:
    """Canonical JSON, or a one-line-per-event text rendering; both carry
    every provenance digest."""
    if format == "json":
        return canonical_bytes(transcript.to_json())
    if format != "text":
        raise EngineError(f"unknown trace format {format!r}")
    lines = [
        f"episode format={TRANSCRIPT_FORMAT} status={transcript.terminal_status}"
        f" answer={transcript.final_answer} seed={transcript.seed}",
        "counters " + " ".join(f"{k}={v}" for k, v in sorted(transcript.counters.items())),
    ]
    for record, event in zip(transcript.belief.provenance, transcript.belief.events):
        lines.append(
            f"step {record.step_index} [{record.actor.value}] {record.action.kind.value}"
            f" -> {event_summary(event)} digest={record.payload_digest}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def import_trace(data: bytes) -> EpisodeTranscript:
    import json
    return EpisodeTranscript.from_json(json.loads(data.decode("utf-8")))
