from __future__ import annotations

import itertools
import math

import pytest

from treeoracle.calc import calc_eval
from treeoracle.core import EngineError, hash_unit
from treeoracle.bench import (
    ARM_FULL,
    ARM_LLM_ONLY,
    ARM_LLM_PLUS_TRACE,
    Suite,
    eval_concept,
    gen_arithmetic_suite,
    gen_entailment_suite,
    instances_from_jsonl,
    instances_to_jsonl,
    make_arm_configs,
    run_ablation,
    scripted_llm_for_suite,
    train_suite_oracle,
    wrong_answer,
)
from treeoracle.tree import training_accuracy


# ---------------------------------------------------------------------------
# gen_entailment_suite


def test_entailment_depth1_k1_is_feature_or_negation() -> None:
    suite = gen_entailment_suite(n=50, depth_d=1, k=1, seed=2)
    as_bool = {"yes": True, "no": False}
    direct = [as_bool[t.truth] == t.record.values["b0"] for t in suite.instances]
    assert all(direct) or not any(direct)


def test_entailment_depth2_truth_table_has_all_combinations() -> None:
    suite = gen_entailment_suite(n=100, depth_d=2, k=2, seed=5)
    # enumerate the truth table independently from the emitted concept
    combos = set()
    for values in itertools.product([False, True], repeat=2):
        label = eval_concept(suite.concept, values)
        combos.add((values, label))
    assert len(combos) == 4
    seen = {(tuple(t.record.values[f"b{j}"] for j in range(2)), t.truth)
            for t in suite.instances}
    assert seen <= combos


def test_entailment_same_seed_identical() -> None:
    a = gen_entailment_suite(n=30, depth_d=3, k=6, seed=9)
    b = gen_entailment_suite(n=30, depth_d=3, k=6, seed=9)
    assert a.to_json() == b.to_json()
    c = gen_entailment_suite(n=30, depth_d=3, k=6, seed=10)
    assert c.to_json() != a.to_json()


def test_entailment_ground_truth_reverifies_against_concept() -> None:
    suite = gen_entailment_suite(n=200, depth_d=3, k=6, seed=1)
    for t in suite.instances:
        values = [t.record.values[f"b{j}"] for j in range(6)]
        assert t.truth == eval_concept(suite.concept, values)


def test_entailment_clean_split_trains_exact_oracle() -> None:
    suite = gen_entailment_suite(n=10, depth_d=3, k=5, seed=3)
    model, train_ds = train_suite_oracle(suite)
    assert training_accuracy(model, train_ds) == 1.0


def test_entailment_parameter_validation() -> None:
    with pytest.raises(EngineError):
        gen_entailment_suite(n=1, depth_d=5, k=3, seed=0)
    with pytest.raises(EngineError):
        gen_entailment_suite(n=1, depth_d=1, k=13, seed=0)


# ---------------------------------------------------------------------------
# gen_arithmetic_suite


def test_arithmetic_single_step_template() -> None:
    suite = gen_arithmetic_suite(n=5, steps_s=1, value_range=(2, 9), seed=4)
    for t in suite.instances:
        assert t.truth == str(int(calc_eval(t.difficulty["expr"])))
        assert t.record.text is not None
        assert "items" in t.record.text


def test_arithmetic_chained_truth_matches_calc_eval() -> None:
    suite = gen_arithmetic_suite(n=50, steps_s=3, value_range=(2, 9), seed=8)
    for t in suite.instances:
        assert float(t.truth) == calc_eval(t.difficulty["expr"])


def test_arithmetic_empty_suite() -> None:
    suite = gen_arithmetic_suite(n=0, steps_s=2, value_range=(2, 5), seed=0)
    assert suite.instances == ()


def test_arithmetic_validates_steps() -> None:
    with pytest.raises(EngineError):
        gen_arithmetic_suite(n=1, steps_s=7, value_range=(1, 5), seed=0)


# ---------------------------------------------------------------------------
# scripted_llm_for_suite


def test_scripted_llm_zero_error_all_correct() -> None:
    suite = gen_entailment_suite(n=40, depth_d=2, k=4, seed=6)
    backend = scripted_llm_for_suite(suite, 0.0, seed=6)
    for t, rule in zip(sorted(suite.instances, key=lambda i: i.instance_id),
                       sorted(backend.rules, key=lambda r: r.pattern)):
        assert rule.pattern == t.instance_id
        assert rule.response == f"ANSWER: {t.truth} | RATIONALE: scripted"


def test_scripted_llm_full_error_all_wrong() -> None:
    suite = gen_entailment_suite(n=40, depth_d=2, k=4, seed=6)
    backend = scripted_llm_for_suite(suite, 1.0, seed=6)
    truths = {t.instance_id: t.truth for t in suite.instances}
    for rule in backend.rules:
        label = rule.response.split("ANSWER:")[1].split("|")[0].strip()
        assert label != truths[rule.pattern]


def test_scripted_llm_error_rate_within_three_sigma() -> None:
    suite = gen_entailment_suite(n=1000, depth_d=3, k=6, seed=7)
    backend = scripted_llm_for_suite(suite, 0.3, seed=7)
    truths = {t.instance_id: t.truth for t in suite.instances}
    wrong = 0
    for rule in backend.rules:
        label = rule.response.split("ANSWER:")[1].split("|")[0].strip()
        wrong += label != truths[rule.pattern]
    sigma = math.sqrt(1000 * 0.3 * 0.7)
    assert abs(wrong - 300) <= 3 * sigma


def test_scripted_llm_is_reproducible_hash_based() -> None:
    suite = gen_entailment_suite(n=20, depth_d=2, k=4, seed=1)
    a = scripted_llm_for_suite(suite, 0.5, seed=1)
    b = scripted_llm_for_suite(suite, 0.5, seed=1)
    assert a == b
    for t, rule in zip(suite.instances, a.rules):
        expect_wrong = hash_unit(f"1:{t.instance_id}") < 0.5
        label = rule.response.split("ANSWER:")[1].split("|")[0].strip()
        assert (label != t.truth) == expect_wrong


# ---------------------------------------------------------------------------
# run_ablation


def test_ablation_zero_error_all_arms_perfect() -> None:
    suite = gen_entailment_suite(n=60, depth_d=2, k=4, seed=11)
    backend = scripted_llm_for_suite(suite, 0.0, seed=11)
    report = run_ablation(suite, make_arm_configs(), backend, seed=11)
    for arm in (ARM_LLM_ONLY, ARM_LLM_PLUS_TRACE, ARM_FULL):
        assert report.arms[arm].accuracy == 1.0


def test_ablation_tree_corrects_every_injected_error() -> None:
    suite = gen_entailment_suite(n=120, depth_d=3, k=6, seed=12)
    backend = scripted_llm_for_suite(suite, 0.3, seed=12)
    report = run_ablation(suite, make_arm_configs(), backend, seed=12)
    # per-instance audit: expected llm_only accuracy equals the injected rate
    truths = {t.instance_id: t.truth for t in suite.instances}
    correct = 0
    for rule in backend.rules:
        label = rule.response.split("ANSWER:")[1].split("|")[0].strip()
        correct += label == truths[rule.pattern]
    assert report.arms[ARM_LLM_ONLY].accuracy == pytest.approx(correct / 120)
    assert report.arms[ARM_FULL].accuracy == 1.0
    assert report.arms[ARM_LLM_PLUS_TRACE].accuracy == 1.0


def test_ablation_monotone_under_exact_oracle() -> None:
    for seed, eps in ((0, 0.1), (1, 0.3), (2, 0.5)):
        suite = gen_entailment_suite(n=80, depth_d=3, k=6, seed=seed)
        backend = scripted_llm_for_suite(suite, eps, seed=seed)
        report = run_ablation(suite, make_arm_configs(), backend, seed=seed)
        a = {arm: report.arms[arm].accuracy for arm in report.arms}
        assert a[ARM_FULL] >= a[ARM_LLM_PLUS_TRACE] >= a[ARM_LLM_ONLY]


def test_ablation_identical_seeds_identical_reports() -> None:
    suite = gen_entailment_suite(n=40, depth_d=2, k=4, seed=13)
    backend = scripted_llm_for_suite(suite, 0.2, seed=13)
    r1 = run_ablation(suite, make_arm_configs(), backend, seed=13)
    r2 = run_ablation(suite, make_arm_configs(), backend, seed=13)
    assert r1.to_json() == r2.to_json()


def test_ablation_text_table_structure() -> None:
    suite = gen_entailment_suite(n=20, depth_d=2, k=4, seed=14)
    backend = scripted_llm_for_suite(suite, 0.0, seed=14)
    report = run_ablation(suite, make_arm_configs(), backend, seed=14)
    table = report.render_text()
    lines = table.strip().splitlines()
    assert len(lines) == 3  # header, separator, one row
    assert "llm_only" in lines[0] and "full" in lines[0]
    assert "entailment" in lines[2]


def test_metrics_report_json_round_trip_values() -> None:
    suite = gen_entailment_suite(n=20, depth_d=2, k=4, seed=15)
    backend = scripted_llm_for_suite(suite, 0.0, seed=15)
    report = run_ablation(suite, make_arm_configs(), backend, seed=15)
    doc = report.to_json()
    assert doc["instance_count"] == 20
    assert set(doc["arms"]) == {ARM_LLM_ONLY, ARM_LLM_PLUS_TRACE, ARM_FULL}
    for metrics in doc["arms"].values():
        assert 0.0 <= metrics["accuracy"] <= 1.0


# ---------------------------------------------------------------------------
# serialization


def test_instances_jsonl_round_trip() -> None:
    suite = gen_entailment_suite(n=12, depth_d=2, k=3, seed=16)
    text = instances_to_jsonl(suite)
    again = instances_from_jsonl(text)
    assert tuple(again) == suite.instances


def test_suite_json_round_trip() -> None:
    suite = gen_arithmetic_suite(n=6, steps_s=2, value_range=(2, 6), seed=17)
    again = Suite.from_json(suite.to_json())
    assert again == suite


def test_wrong_answer_deterministic() -> None:
    suite = gen_entailment_suite(n=4, depth_d=1, k=2, seed=18)
    for t in suite.instances:
        assert wrong_answer(t) != t.truth
        assert wrong_answer(t) in ("yes", "no")
