"""Probe a trained tree with what-if modifications and ask for the cheapest
change of features that flips the verdict.

Run: python3 demos/02_whatif_counterfactual.py
"""

from treeoracle import (
    Dataset,
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    RawRecord,
    Schema,
    TrainParams,
    check_consistency,
    nearest_counterfactual,
    normalize,
    train_cart,
    what_if,
)

schema = Schema(
    features=(FeatureSpec("income", FeatureKind.NUMERIC),
              FeatureSpec("debt", FeatureKind.NUMERIC)),
    label=LabelSpec("decision", ("deny", "approve")),
)

rows = [
    ({"income": 20, "debt": 40}, "deny"),
    ({"income": 25, "debt": 15}, "deny"),
    ({"income": 35, "debt": 45}, "deny"),
    ({"income": 55, "debt": 10}, "approve"),
    ({"income": 70, "debt": 25}, "approve"),
    ({"income": 85, "debt": 5}, "approve"),
]
dataset = Dataset(schema,
                  tuple(normalize(RawRecord(v), schema) for v, _ in rows),
                  tuple(label for _, label in rows))
tree = train_cart(dataset, TrainParams(max_depth=3))

applicant = normalize(RawRecord({"income": 30, "debt": 20}), schema)

# what-if: manually probe a raise
probe = what_if(tree, applicant, {"income": 60.0})
print(f"before: {probe.before.outcome} | after income=60: {probe.after.outcome}")
print(f"decision route diverges at trace step {probe.changed_steps.divergence_index}\n")

# nearest counterfactual: the cheapest flip, weighting debt changes as easier
cf = nearest_counterfactual(tree, applicant, "approve",
                            cost={"income": 2.0, "debt": 1.0})
print(f"cheapest path to 'approve' (cost {cf.cost:.3f}):")
for name, value in cf.modifications.items():
    print(f"  set {name} = {value}")

# consistency: is 'approve' even reachable with income pinned low?
report = check_consistency(tree, {"income": 30.0}, "approve")
print(f"\nclaim 'approve' with income pinned at 30: {report.status}")
print(f"reachable leaves: {list(report.reachable_leaves)}")
