"""One full orchestrated episode: the dispatcher consults the tree, asks the
(scripted) LLM, routes its calculator request through the tool interface, and
finalizes with a provenance-stamped transcript.

Run: python3 demos/03_orchestrated_episode.py
"""

from treeoracle import (
    Budget,
    Dataset,
    EpisodeConfig,
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    RawRecord,
    Schema,
    ScriptedBackend,
    ScriptedRule,
    TrainParams,
    export_trace,
    normalize,
    run_episode,
    train_cart,
)

schema = Schema(
    features=(FeatureSpec("dose_mg", FeatureKind.NUMERIC),),
    label=LabelSpec("risk", ("safe", "toxic")),
)
rows = [({"dose_mg": d}, "safe" if d < 400 else "toxic")
        for d in (100, 200, 300, 450, 500, 600)]
dataset = Dataset(schema,
                  tuple(normalize(RawRecord(v), schema) for v, _ in rows),
                  tuple(label for _, label in rows))
tree = train_cart(dataset, TrainParams(max_depth=2))

# The scripted backend stands in for a real model: first it asks the
# calculator for the cumulative dose, then (seeing the tool result in its
# context) commits to an answer. Rules are matched first-match-wins.
backend = ScriptedBackend(rules=(
    ScriptedRule('"value":450', "ANSWER: toxic | RATIONALE: 3 x 150mg exceeds 400"),
    ScriptedRule("source_id", 'TOOL: calculator | ARGS: {"expr":"3*150"}'),
))

config = EpisodeConfig(schema=schema, backend=backend, model=tree,
                       budget=Budget(max_steps=8, max_tool_calls=2,
                                     max_llm_calls=3),
                       seed=7)
transcript = run_episode(RawRecord({"dose_mg": 450}), config)

print(export_trace(transcript, "text").decode())
print(f"final answer: {transcript.final_answer}"
      f" ({transcript.terminal_status} in {transcript.counters['steps']} steps)")
