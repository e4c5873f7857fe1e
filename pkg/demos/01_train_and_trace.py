"""Train a triage tree on a tiny vitals table and read the rule trace that
justifies each verdict.

Run: python3 demos/01_train_and_trace.py
"""

from treeoracle import (
    Dataset,
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    RawRecord,
    Schema,
    TrainParams,
    normalize,
    predict_with_trace,
    train_cart,
    verbalize_verdict,
)

schema = Schema(
    features=(
        FeatureSpec("heart_rate", FeatureKind.NUMERIC),
        FeatureSpec("temp_c", FeatureKind.NUMERIC),
        FeatureSpec("on_oxygen", FeatureKind.BOOLEAN),
    ),
    label=LabelSpec("triage", ("low", "urgent")),
)

rows = [
    ({"heart_rate": 72, "temp_c": 36.8, "on_oxygen": False}, "low"),
    ({"heart_rate": 80, "temp_c": 37.1, "on_oxygen": False}, "low"),
    ({"heart_rate": 95, "temp_c": 37.4, "on_oxygen": False}, "low"),
    ({"heart_rate": 118, "temp_c": 38.9, "on_oxygen": False}, "urgent"),
    ({"heart_rate": 125, "temp_c": 39.4, "on_oxygen": True}, "urgent"),
    ({"heart_rate": 132, "temp_c": 38.2, "on_oxygen": True}, "urgent"),
]

dataset = Dataset(
    schema,
    tuple(normalize(RawRecord(values), schema) for values, _ in rows),
    tuple(label for _, label in rows),
)

tree = train_cart(dataset, TrainParams(criterion="gini", max_depth=3))
print(f"tree depth {tree.depth()}, {tree.n_leaves} leaves\n")

patient = normalize(RawRecord({"heart_rate": 121, "temp_c": 38.5,
                               "on_oxygen": False}), schema)
verdict = predict_with_trace(tree, patient)

print(f"verdict: {verdict.outcome} (confidence {verdict.confidence:.2f})")
print("rule trace, root to leaf:")
for step in verdict.trace.steps:
    print(f"  node {step.node_id}: {step.predicate.render(step.feature_name)}"
          f"  observed={step.observed!r}  -> {step.branch}")
print()
print(verbalize_verdict(verdict, schema))
