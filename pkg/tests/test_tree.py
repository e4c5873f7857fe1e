from __future__ import annotations

import json
import random

import pytest

from oracle_helpers import (
    brute_force_best_split,
    brute_force_counterfactual_cost,
    leaf_regions,
    oracle_gini,
    random_dataset,
    random_input,
    region_contains,
    replay_trace,
)
from treeoracle.core import (
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    Schema,
    SchemaMismatch,
    StructuredInput,
    UnknownFeature,
)
from treeoracle.tree import (
    Dataset,
    Forest,
    MalformedModel,
    SplitPredicate,
    TrainParams,
    best_split,
    check_consistency,
    deserialize_model,
    impurity,
    nearest_counterfactual,
    predict_with_trace,
    serialize_model,
    train_cart,
    train_forest,
    training_accuracy,
    what_if,
)


def numeric_schema(k: int = 1, labels=("A", "B")) -> Schema:
    return Schema(tuple(FeatureSpec(f"x{i}", FeatureKind.NUMERIC) for i in range(k)),
                  LabelSpec("y", tuple(labels)))


def numeric_dataset(xs, labels, k: int = 1) -> Dataset:
    schema = numeric_schema(k, sorted(set(labels)))
    rows = tuple(StructuredInput(tuple(float(v) for v in (x if isinstance(x, tuple) else (x,))),
                                 None, f"r{i}")
                 for i, x in enumerate(xs))
    return Dataset(schema, rows, tuple(labels))


def xor_dataset() -> Dataset:
    schema = Schema((FeatureSpec("a", FeatureKind.BOOLEAN),
                     FeatureSpec("b", FeatureKind.BOOLEAN)),
                    LabelSpec("y", ("no", "yes")))
    rows, labels = [], []
    for i, (a, b) in enumerate([(False, False), (False, True), (True, False), (True, True)]):
        rows.append(StructuredInput((a, b), None, f"r{i}"))
        labels.append("yes" if a != b else "no")
    return Dataset(schema, tuple(rows), tuple(labels))


# ---------------------------------------------------------------------------
# impurity


def test_impurity_pure_node_is_zero() -> None:
    assert impurity(["A", "A", "A"], "gini") == 0.0
    assert impurity(["A", "A", "A"], "entropy") == 0.0


def test_impurity_symmetric_binary() -> None:
    assert impurity(["A", "B"], "gini") == 0.5
    assert impurity(["A", "B"], "entropy") == 1.0


def test_impurity_two_thirds_split_matches_oracle() -> None:
    labels = ["A", "B", "B"] * 4
    assert impurity(labels, "gini") == pytest.approx(4.0 / 9.0, rel=1e-15)
    assert impurity(labels, "gini") == pytest.approx(oracle_gini(labels), rel=1e-15)


# ---------------------------------------------------------------------------
# best_split


def test_best_split_midpoint_example() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    got = best_split(ds, range(ds.k), "gini")
    assert got is not None
    pred, gain = got
    assert pred == SplitPredicate(0, "numeric_le", threshold=5.5)
    assert gain == pytest.approx(0.5, abs=1e-15)


def test_best_split_pure_labels_returns_none() -> None:
    ds = numeric_dataset([1, 2, 3], ["A", "A", "A"])
    assert best_split(ds, range(ds.k), "gini") is None


def test_best_split_tie_breaks_to_lower_feature_index() -> None:
    # two identical features: both give the same gain; feature 0 must win
    ds = numeric_dataset([(1, 1), (2, 2), (9, 9), (10, 10)],
                         ["A", "A", "B", "B"], k=2)
    got = best_split(ds, range(2), "gini")
    assert got is not None
    assert got[0].feature_index == 0


def test_best_split_threshold_tie_breaks_low() -> None:
    # labels alternate so several thresholds give equal gain
    ds = numeric_dataset([1, 2, 3, 4], ["A", "B", "A", "B"])
    got = best_split(ds, range(1), "gini")
    assert got is not None
    # oracle agrees on the exact winner
    f, kind, key, gain = brute_force_best_split(ds, "gini")
    assert got[0].feature_index == f
    assert got[0].threshold == key
    assert got[1] == pytest.approx(gain, abs=1e-12)


def test_best_split_respects_min_split_gain() -> None:
    ds = numeric_dataset([1, 2, 3, 4], ["A", "B", "A", "B"])
    assert best_split(ds, range(1), "gini", min_split_gain=0.4) is None


def test_best_split_categorical_one_vs_rest() -> None:
    schema = Schema((FeatureSpec("c", FeatureKind.CATEGORICAL, ("u", "v", "w")),),
                    LabelSpec("y", ("A", "B")))
    rows = tuple(StructuredInput((c,), None, f"r{i}")
                 for i, c in enumerate(["u", "u", "v", "w"]))
    ds = Dataset(schema, rows, ("A", "A", "B", "B"))
    got = best_split(ds, range(1), "gini")
    assert got is not None
    assert got[0] == SplitPredicate(0, "categorical_in", categories=("u",))
    assert got[1] == pytest.approx(0.5, abs=1e-15)


def test_best_split_boolean() -> None:
    ds = xor_dataset()
    got = best_split(ds, range(2), "gini")
    assert got is not None
    assert got[0].kind == "boolean_is"
    assert got[0].feature_index == 0  # zero-gain tie resolved by feature order
    assert got[1] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(25))
def test_best_split_equals_brute_force_on_random_data(seed: int) -> None:
    rng = random.Random(seed)
    ds = random_dataset(rng, m_max=60, k_max=5)
    got = best_split(ds, range(ds.k), "gini")
    want = brute_force_best_split(ds, "gini")
    if want is None:
        assert got is None
        return
    assert got is not None
    f, kind, key, gain = want
    pred, got_gain = got
    assert pred.feature_index == f
    assert pred.kind == kind
    if kind == "numeric_le":
        assert pred.threshold == key
    elif kind == "categorical_in":
        assert pred.categories == (key,)
    assert got_gain == pytest.approx(gain, abs=1e-12)


# ---------------------------------------------------------------------------
# train_cart


def test_train_cart_separable_is_depth_one_and_exact() -> None:
    ds = numeric_dataset([1, 2, 3, 7, 8, 9], ["A", "A", "A", "B", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=4))
    assert tree.depth() == 1
    assert training_accuracy(tree, ds) == 1.0
    # exhaustive enumeration confirms the root split
    f, kind, key, _ = brute_force_best_split(ds, "gini")
    assert tree.nodes[tree.root].predicate.threshold == key


def test_train_cart_xor_needs_depth_two() -> None:
    ds = xor_dataset()
    deep = train_cart(ds, TrainParams(max_depth=2))
    assert deep.depth() == 2
    assert training_accuracy(deep, ds) == 1.0
    stump = train_cart(ds, TrainParams(max_depth=1))
    assert training_accuracy(stump, ds) <= 0.5


def test_train_cart_single_row_is_point_mass_leaf() -> None:
    ds = numeric_dataset([5], ["A"])
    tree = train_cart(ds, TrainParams())
    assert len(tree.nodes) == 1
    assert tree.nodes[0].distribution == {"A": 1.0}
    assert tree.nodes[0].n_train == 1


def test_train_cart_min_leaf_blocks_sparse_splits() -> None:
    ds = numeric_dataset([1, 2, 3, 4, 5, 6], ["A", "B", "B", "B", "B", "B"])
    tree = train_cart(ds, TrainParams(min_leaf=2))
    for node in tree.nodes:
        if node.is_leaf:
            assert node.n_train >= 2


def test_train_cart_depth_never_exceeds_max_depth() -> None:
    rng = random.Random(3)
    for _ in range(10):
        ds = random_dataset(rng, m_max=80, k_max=4)
        params = TrainParams(max_depth=rng.randint(1, 4))
        tree = train_cart(ds, params)
        assert tree.depth() <= params.max_depth


def test_train_cart_entropy_criterion_learns_separable() -> None:
    ds = numeric_dataset([1, 2, 3, 7, 8, 9], ["A", "A", "A", "B", "B", "B"])
    tree = train_cart(ds, TrainParams(criterion="entropy", max_depth=3))
    assert training_accuracy(tree, ds) == 1.0


# ---------------------------------------------------------------------------
# forests


def test_forest_of_one_without_bootstrap_equals_cart() -> None:
    ds = numeric_dataset([1, 2, 9, 10, 4, 6], ["A", "A", "B", "B", "A", "B"])
    params = TrainParams(max_depth=4)
    forest = train_forest(ds, 1, params, feature_subsample_count=ds.k,
                          master_seed=9, bootstrap=False)
    solo = train_cart(ds, params)
    assert serialize_model(forest.trees[0]) == serialize_model(solo)


def test_forest_same_seed_is_byte_identical() -> None:
    rng = random.Random(11)
    ds = random_dataset(rng, m_max=60, k_max=4)
    a = train_forest(ds, 5, TrainParams(max_depth=3), master_seed=42)
    b = train_forest(ds, 5, TrainParams(max_depth=3), master_seed=42)
    assert serialize_model(a) == serialize_model(b)
    c = train_forest(ds, 5, TrainParams(max_depth=3), master_seed=43)
    assert serialize_model(c) != serialize_model(a)


def test_forest_separable_reaches_full_accuracy_and_votes_tally() -> None:
    ds = numeric_dataset(list(range(1, 11)),
                         ["A"] * 5 + ["B"] * 5)
    forest = train_forest(ds, 15, TrainParams(max_depth=3), master_seed=1)
    assert training_accuracy(forest, ds) == 1.0
    # independent tally: majority vote over per-tree predictions
    for row in ds.rows:
        verdict = predict_with_trace(forest, row)
        votes = {}
        for t in forest.trees:
            o = predict_with_trace(t, row).outcome
            votes[o] = votes.get(o, 0) + 1
        top = max(sorted(votes), key=lambda lab: votes[lab])
        assert verdict.outcome == top
        assert verdict.confidence == pytest.approx(votes[top] / 15)
        assert verdict.trace.tally == votes


# ---------------------------------------------------------------------------
# predict_with_trace


def test_predict_single_leaf_has_empty_trace() -> None:
    ds = numeric_dataset([5, 6], ["A", "A"])
    tree = train_cart(ds, TrainParams())
    verdict = predict_with_trace(tree, ds.rows[0])
    assert verdict.trace.steps == ()
    assert verdict.outcome == "A"
    assert verdict.confidence == 1.0


def test_predict_stump_records_threshold_step() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    x = StructuredInput((3.0,), None, "q")
    verdict = predict_with_trace(tree, x)
    assert verdict.outcome == "A"
    assert len(verdict.trace.steps) == 1
    step = verdict.trace.steps[0]
    assert step.predicate.threshold == 5.5
    assert step.observed == 3.0
    assert step.branch == "left"


def test_predict_xor_reaches_four_distinct_leaves() -> None:
    ds = xor_dataset()
    tree = train_cart(ds, TrainParams(max_depth=2))
    leaf_ids = set()
    for row, label in zip(ds.rows, ds.labels):
        verdict = predict_with_trace(tree, row)
        assert verdict.outcome == label
        assert len(verdict.trace.steps) == 2
        leaf_ids.add(verdict.trace.leaf_id)
    assert len(leaf_ids) == 4


def test_predict_rejects_schema_mismatch() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams())
    with pytest.raises(SchemaMismatch):
        predict_with_trace(tree, StructuredInput((1.0, 2.0), None, "bad"))
    with pytest.raises(SchemaMismatch):
        predict_with_trace(tree, StructuredInput((None,), None, "missing"))


def test_trace_faithfulness_on_random_trees() -> None:
    rng = random.Random(21)
    for _ in range(20):
        ds = random_dataset(rng, m_max=80, k_max=4)
        tree = train_cart(ds, TrainParams(max_depth=rng.randint(1, 5)))
        for _ in range(25):
            x = random_input(rng, ds.schema)
            verdict = predict_with_trace(tree, x)
            assert replay_trace(tree, x, verdict.trace) == verdict.outcome


def test_partition_property_every_point_in_exactly_one_region() -> None:
    rng = random.Random(5)
    for _ in range(10):
        ds = random_dataset(rng, m_max=60, k_max=3)
        tree = train_cart(ds, TrainParams(max_depth=4))
        regions = leaf_regions(tree)
        for _ in range(50):
            x = random_input(rng, ds.schema)
            containing = [leaf for leaf, region in regions if region_contains(region, x)]
            assert len(containing) == 1
            assert containing[0] == predict_with_trace(tree, x).trace.leaf_id


# ---------------------------------------------------------------------------
# what_if


def test_what_if_empty_modifications_is_identity() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    x = StructuredInput((3.0,), None, "q")
    res = what_if(tree, x, {})
    assert res.before == res.after
    assert res.changed_steps.divergence_index is None
    assert res.changed_steps.before_tail == ()


def test_what_if_stump_crossing_flips_outcome() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    x = StructuredInput((3.0,), None, "q")
    res = what_if(tree, x, {"x0": 9.0})
    assert res.before.outcome == "A"
    assert res.after.outcome == "B"
    assert res.changed_steps.divergence_index == 0


def test_what_if_second_level_divergence() -> None:
    # depth-2 tree: x0 splits first, then x1 inside each side
    ds = numeric_dataset([(0, 0), (0, 10), (10, 0), (10, 10)] * 3,
                         ["A", "B", "B", "A"] * 3, k=2)
    tree = train_cart(ds, TrainParams(max_depth=2))
    assert tree.depth() == 2
    x = StructuredInput((0.0, 0.0), None, "q")
    before = predict_with_trace(tree, x)
    second_feature = before.trace.steps[1].predicate.feature_index
    name = ds.schema.features[second_feature].name
    res = what_if(tree, x, {name: 10.0})
    assert res.changed_steps.divergence_index == 1
    assert res.after.outcome != res.before.outcome


def test_what_if_unknown_feature_and_bad_value() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams())
    x = StructuredInput((3.0,), None, "q")
    with pytest.raises(UnknownFeature):
        what_if(tree, x, {"nope": 1.0})
    with pytest.raises(SchemaMismatch):
        what_if(tree, x, {"x0": "high"})


# ---------------------------------------------------------------------------
# nearest_counterfactual


def test_counterfactual_identity_when_already_target() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    res = nearest_counterfactual(tree, StructuredInput((3.0,), None, "q"), "A")
    assert res is not None
    assert res.modifications == {}
    assert res.cost == 0.0


def test_counterfactual_stump_moves_just_past_threshold() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    res = nearest_counterfactual(tree, StructuredInput((3.0,), None, "q"), "B")
    assert res is not None
    eps = 1e-6 * (10.0 - 1.0)
    assert res.modifications == {"x0": pytest.approx(5.5 + eps)}
    assert res.cost == pytest.approx(2.5 + eps)


def test_counterfactual_none_when_label_unreachable() -> None:
    ds = numeric_dataset([1, 2], ["A", "A"], k=1)
    schema = Schema(ds.schema.features, LabelSpec("y", ("A", "B")))
    ds2 = Dataset(schema, ds.rows, ds.labels)
    tree = train_cart(ds2, TrainParams())
    assert nearest_counterfactual(tree, ds2.rows[0], "B") is None


def test_counterfactual_picks_cheaper_of_two_target_leaves() -> None:
    # depth-2 tree with two B leaves at different distances from x
    # x0 <= 5: left -> {x1 <= 5 -> A, x1 > 5 -> B}; x0 > 5 -> B
    schema = numeric_schema(2, ("A", "B"))
    rows, labels = [], []
    pts = [((2.0, 2.0), "A"), ((3.0, 3.0), "A"),
           ((2.0, 8.0), "B"), ((3.0, 9.0), "B"),
           ((8.0, 2.0), "B"), ((9.0, 8.0), "B")]
    for i, (xy, lab) in enumerate(pts):
        rows.append(StructuredInput(xy, None, f"r{i}"))
        labels.append(lab)
    ds = Dataset(schema, tuple(rows), tuple(labels))
    tree = train_cart(ds, TrainParams(max_depth=2))
    x = StructuredInput((4.5, 2.0), None, "q")
    assert predict_with_trace(tree, x).outcome == "A"
    res = nearest_counterfactual(tree, x, "B")
    want = brute_force_counterfactual_cost(tree, x, "B")
    assert res is not None and want is not None
    assert res.cost == pytest.approx(want, abs=1e-9)
    # applying the modification actually reaches the target label
    moved = what_if(tree, x, res.modifications)
    assert moved.after.outcome == "B"


@pytest.mark.parametrize("seed", range(15))
def test_counterfactual_matches_brute_force_on_random_trees(seed: int) -> None:
    rng = random.Random(seed)
    ds = random_dataset(rng, m_max=60, k_max=4)
    tree = train_cart(ds, TrainParams(max_depth=4))
    x = random_input(rng, ds.schema)
    weights = {i: rng.choice([0.5, 1.0, 2.0]) for i in range(ds.k)}
    named = {ds.schema.features[i].name: w for i, w in weights.items()}
    for target in ds.schema.label.vocabulary:
        got = nearest_counterfactual(tree, x, target, named)
        want = brute_force_counterfactual_cost(tree, x, target, weights)
        if want is None:
            assert got is None
        else:
            assert got is not None
            assert got.cost == pytest.approx(want, abs=1e-9)


# ---------------------------------------------------------------------------
# check_consistency


def test_consistency_full_assignment_reduces_to_prediction() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    report = check_consistency(tree, {"x0": 3.0}, "A")
    assert report.status == "consistent"
    assert report.supporting is not None and report.refuting is None
    report2 = check_consistency(tree, {"x0": 3.0}, "B")
    assert report2.status == "inconsistent"
    assert report2.refuting is not None and report2.supporting is None


def test_consistency_empty_assignment_undetermined() -> None:
    ds = numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"])
    tree = train_cart(ds, TrainParams(max_depth=1))
    report = check_consistency(tree, {}, "A")
    assert report.status == "undetermined"
    assert report.supporting is not None and report.refuting is not None


def test_consistency_xor_partial_assignment() -> None:
    ds = xor_dataset()
    tree = train_cart(ds, TrainParams(max_depth=2))
    root_feature = ds.schema.features[tree.nodes[tree.root].predicate.feature_index].name
    report = check_consistency(tree, {root_feature: True}, "yes")
    assert report.status == "undetermined"
    assert len(report.reachable_leaves) == 2
    assert report.supporting is not None and report.refuting is not None


# ---------------------------------------------------------------------------
# serialization


def test_serialize_roundtrip_is_byte_identical() -> None:
    tree = train_cart(xor_dataset(), TrainParams(max_depth=2))
    blob = serialize_model(tree)
    again = deserialize_model(blob)
    assert serialize_model(again) == blob


def test_serialize_forest_roundtrip_votes_match() -> None:
    rng = random.Random(2)
    ds = random_dataset(rng, m_max=50, k_max=3)
    forest = train_forest(ds, 3, TrainParams(max_depth=3), master_seed=5)
    again = deserialize_model(serialize_model(forest))
    assert isinstance(again, Forest)
    for _ in range(100):
        x = random_input(rng, ds.schema)
        assert predict_with_trace(again, x).outcome == predict_with_trace(forest, x).outcome


def test_deserialize_rejects_bad_distribution_sum() -> None:
    tree = train_cart(numeric_dataset([1, 2], ["A", "B"]), TrainParams())
    doc = json.loads(serialize_model(tree))
    for node in doc["tree"]["nodes"]:
        if node["type"] == "leaf":
            node["distribution"] = {"A": 0.9}
            break
    with pytest.raises(MalformedModel):
        deserialize_model(json.dumps(doc).encode())


def test_deserialize_rejects_two_parents() -> None:
    tree = train_cart(numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"]),
                      TrainParams(max_depth=1))
    doc = json.loads(serialize_model(tree))
    root = doc["tree"]["nodes"][doc["tree"]["root"]]
    root["right"] = root["left"]
    with pytest.raises(MalformedModel):
        deserialize_model(json.dumps(doc).encode())


def test_deserialize_rejects_wrong_format() -> None:
    with pytest.raises(MalformedModel):
        deserialize_model(b'{"format": "other/9"}')
    with pytest.raises(MalformedModel):
        deserialize_model(b"not json")


def test_model_json_field_names_frozen() -> None:
    """Golden check on the wire format: these names are part of the contract."""
    tree = train_cart(numeric_dataset([1, 2, 9, 10], ["A", "A", "B", "B"]),
                      TrainParams(max_depth=1))
    doc = json.loads(serialize_model(tree))
    assert doc["format"] == "oracle-tree/1"
    assert set(doc) == {"format", "kind", "tree"}
    t = doc["tree"]
    assert set(t) == {"schema", "schema_digest", "params", "root", "nodes",
                      "feature_ranges"}
    internal = t["nodes"][t["root"]]
    assert set(internal) == {"type", "predicate", "left", "right"}
    assert set(internal["predicate"]) == {"feature_index", "kind", "threshold",
                                          "categories", "value"}
    leaf = next(n for n in t["nodes"] if n["type"] == "leaf")
    assert set(leaf) == {"type", "distribution", "n_train"}


def test_training_is_deterministic() -> None:
    rng = random.Random(13)
    ds = random_dataset(rng, m_max=100, k_max=5)
    a = train_cart(ds, TrainParams(max_depth=5))
    b = train_cart(ds, TrainParams(max_depth=5))
    assert serialize_model(a) == serialize_model(b)
