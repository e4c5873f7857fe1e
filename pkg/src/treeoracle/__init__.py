"""treeoracle: a neuro-symbolic reasoning engine built around decision-tree
oracles. Trees answer with auditable rule traces and support what-if,
nearest-counterfactual, and consistency queries; an orchestrator folds tree,
LLM, and tool outputs into an append-only belief state under rule-based or
REINFORCE-trained dispatch policies; a synthetic-benchmark harness reproduces
the three-arm ablation ordering; an HTTP service and CLI expose the pipeline.
"""

from .agent import (
    AgentMove,
    Answer,
    BackendConfig,
    HypothesisCheck,
    NeuralResponse,
    Plan,
    PromptTemplate,
    RemoteBackend,
    ScriptedBackend,
    ScriptedRule,
    ToolCall,
    format_move,
    generate,
    parse_move,
    render_prompt,
    verbalize_verdict,
)
from .calc import calc_eval
from .core import (
    Action,
    ActionKind,
    Actor,
    BeliefEvent,
    BeliefState,
    EngineError,
    EventKind,
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    LogicalClock,
    ProvenanceRecord,
    Schema,
    SchemaMismatch,
    StructuredInput,
    ToolQuery,
    digest,
)
from .orchestrator import (
    Budget,
    ConflictPolicy,
    ConflictRuleEntry,
    DispatchPolicy,
    DispatchRule,
    EpisodeConfig,
    EpisodeTranscript,
    LearnedPolicy,
    Resolution,
    RuleBasedPolicy,
    dispatch,
    export_trace,
    import_trace,
    resolve_conflict,
    run_episode,
    update_belief,
)
from .perception import (
    FittedImputer,
    ImputationPolicy,
    ImputationRule,
    RawRecord,
    fit_imputer,
    normalize,
)
from .policy_learning import (
    CurriculumStage,
    PolicyParams,
    RewardSpec,
    action_distribution,
    episode_return,
    featurize_state,
    reinforce_update,
    train_policy,
)
from .tools import (
    ToolRegistry,
    ToolResult,
    ToolSpec,
    invoke,
    kb_lookup,
    load_kb,
    make_builtin_registry,
    register_tool,
)
from .tree import (
    Dataset,
    DecisionTree,
    Forest,
    RuleTrace,
    SplitPredicate,
    SymbolicVerdict,
    TrainParams,
    WhatIfResult,
    best_split,
    check_consistency,
    deserialize_model,
    impurity,
    nearest_counterfactual,
    predict_with_trace,
    serialize_model,
    train_cart,
    train_forest,
    what_if,
)

__version__ = "0.1.0"
