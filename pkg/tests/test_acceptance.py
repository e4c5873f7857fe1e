"""Acceptance gate: every criterion runs at its stated tolerance and prints
one PASS/FAIL line (run with `pytest -s tests/test_acceptance.py` to see them).
"""

from __future__ import annotations

import functools
import json
import math
import random
import time

import numpy as np
import pytest

from oracle_helpers import (
    brute_force_best_split,
    brute_force_counterfactual_cost,
    leaf_regions,
    random_dataset,
    random_input,
    replay_trace,
)
from treeoracle.calc import DivisionByZero, calc_eval
from treeoracle.core import (
    FeatureKind,
    FeatureSpec,
    LabelSpec,
    Schema,
    StructuredInput,
)
from treeoracle.tree import (
    Dataset,
    TrainParams,
    best_split,
    nearest_counterfactual,
    predict_with_trace,
    train_cart,
)

from test_calc import random_expr


def acceptance(name: str):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL "
                      f"({time.perf_counter() - started:.1f}s)")
                raise
            print(f"\nACCEPTANCE {name}: PASS "
                  f"({time.perf_counter() - started:.1f}s)")
        return wrapper
    return decorate


# ---------------------------------------------------------------------------
# 1. Ablation-ordering reproduction


@acceptance("ablation-ordering")
def test_ablation_ordering_twenty_seeds() -> None:
    from treeoracle.bench import (
        gen_entailment_suite,
        make_arm_configs,
        run_ablation,
        scripted_llm_for_suite,
    )
    started = time.perf_counter()
    for seed in range(20):
        suite = gen_entailment_suite(n=500, depth_d=3, k=6, seed=seed)
        backend = scripted_llm_for_suite(suite, error_rate=0.3, seed=seed)
        report = run_ablation(suite, make_arm_configs(), backend, seed=seed)
        acc = {arm: report.arms[arm].accuracy for arm in report.arms}
        assert acc["full"] >= acc["llm_plus_trace"] >= acc["llm_only"], \
            f"seed {seed}: ordering violated {acc}"
        assert acc["full"] - acc["llm_only"] >= 0.25, \
            f"seed {seed}: margin {acc['full'] - acc['llm_only']:.3f} < 0.25"
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"ablation runtime {elapsed:.1f}s exceeds 60s"


# ---------------------------------------------------------------------------
# 2. Tree correctness vs brute force


def _columns_for_points(schema: Schema, rng: np.random.Generator, n: int):
    cols = []
    for spec in schema.features:
        if spec.kind is FeatureKind.NUMERIC:
            cols.append(np.round(rng.uniform(-12, 12, size=n), 2))
        elif spec.kind is FeatureKind.BOOLEAN:
            cols.append(rng.uniform(size=n) < 0.5)
        else:
            cols.append(rng.integers(0, len(spec.vocabulary), size=n))
    return cols


def _region_masks(schema: Schema, regions, cols, n: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.zeros(n, dtype=int)
    assigned = np.full(n, -1, dtype=int)
    for leaf_id, region in regions:
        mask = np.ones(n, dtype=bool)
        for f, cons in region.items():
            spec = schema.features[f]
            col = cols[f]
            if cons[0] == "num":
                _, lo, hi = cons
                mask &= (col > lo) & (col <= hi)
            elif cons[0] == "cat":
                allowed = {spec.vocabulary.index(c) for c in cons[1]}
                mask &= np.isin(col, list(allowed))
            else:
                mask &= col == cons[1]
        counts += mask
        assigned[mask] = leaf_id
    return counts, assigned


@acceptance("tree-vs-brute-force")
def test_tree_correctness_vs_brute_force() -> None:
    started = time.perf_counter()
    rng = random.Random(2024)
    nprng = np.random.default_rng(2024)
    for case in range(100):
        ds = random_dataset(rng, m_max=200, k_max=5)
        got = best_split(ds, range(ds.k), "gini")
        want = brute_force_best_split(ds, "gini")
        if want is None:
            assert got is None
        else:
            f, kind, key, gain = want
            assert got is not None, f"case {case}: implementation found no split"
            pred, got_gain = got
            assert (pred.feature_index, pred.kind) == (f, kind)
            if kind == "numeric_le":
                assert pred.threshold == key
            elif kind == "categorical_in":
                assert pred.categories == (key,)
            assert got_gain == pytest.approx(gain, abs=1e-12)

        tree = train_cart(ds, TrainParams(max_depth=6))
        regions = leaf_regions(tree)
        n = 10_000
        cols = _columns_for_points(ds.schema, nprng, n)
        counts, assigned = _region_masks(ds.schema, regions, cols, n)
        assert counts.min() == 1 and counts.max() == 1, \
            f"case {case}: region partition violated"
        for i in range(n):
            values = []
            for spec, col in zip(ds.schema.features, cols):
                if spec.kind is FeatureKind.NUMERIC:
                    values.append(float(col[i]))
                elif spec.kind is FeatureKind.BOOLEAN:
                    values.append(bool(col[i]))
                else:
                    values.append(spec.vocabulary[int(col[i])])
            verdict = predict_with_trace(
                tree, StructuredInput(tuple(values), None, f"p{i}"))
            assert verdict.trace.leaf_id == assigned[i], \
                f"case {case}: leaf-region lookup disagrees at point {i}"
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"brute-force comparison took {elapsed:.1f}s (limit 30s)"


# ---------------------------------------------------------------------------
# 3. Trace faithfulness


@acceptance("trace-faithfulness")
def test_trace_faithfulness_ten_thousand_pairs() -> None:
    rng = random.Random(7)
    failures = 0
    for _ in range(100):
        ds = random_dataset(rng, m_max=120, k_max=5)
        tree = train_cart(ds, TrainParams(max_depth=rng.randint(1, 6)))
        for _ in range(100):
            x = random_input(rng, ds.schema)
            verdict = predict_with_trace(tree, x)
            if replay_trace(tree, x, verdict.trace) != verdict.outcome:
                failures += 1
    assert failures == 0


# ---------------------------------------------------------------------------
# 4. Complexity contract


def _balanced_separable(m: int, seed: int) -> tuple[Dataset, int]:
    """m rows over k = log2(m) - 2 numeric features; the label encodes all
    feature bits, so the exact concept is a complete depth-k tree."""
    b = int(math.log2(m))
    k = max(1, b - 2)
    rng = random.Random(seed)
    schema = Schema(
        tuple(FeatureSpec(f"f{i}", FeatureKind.NUMERIC) for i in range(k)),
        LabelSpec("y", tuple(f"c{i:04d}" for i in range(2 ** k))))
    rows, labels = [], []
    for i in range(m):
        cls = i % (2 ** k)
        values = tuple(float((cls >> f) & 1) + rng.uniform(0.0, 0.4)
                       for f in range(k))
        rows.append(StructuredInput(values, None, f"r{i}"))
        labels.append(schema.label.vocabulary[cls])
    return Dataset(schema, tuple(rows), tuple(labels)), k


@acceptance("complexity-contract")
def test_complexity_contract() -> None:
    units = []
    for b in range(6, 15):
        m = 2 ** b
        ds, k = _balanced_separable(m, seed=b)
        best = math.inf
        for _ in range(2 if m <= 4096 else 1):
            t0 = time.perf_counter()
            tree = train_cart(ds, TrainParams(criterion="gini", max_depth=32))
            best = min(best, time.perf_counter() - t0)
        bound = math.ceil(math.log2(m)) + 1
        sample = ds.rows if m <= 2048 else ds.rows[::m // 2048]
        for row in sample:
            steps = len(predict_with_trace(tree, row).trace.steps)
            assert steps <= bound, f"m={m}: trace length {steps} > {bound}"
        units.append(best / (m * k * math.log2(m)))
    spread = max(units) / min(units)
    assert spread <= 2.0, f"training-time growth spread {spread:.2f}x exceeds 2x"


# ---------------------------------------------------------------------------
# 5. Counterfactual optimality


@acceptance("counterfactual-optimality")
def test_counterfactual_matches_region_projection_oracle() -> None:
    started = time.perf_counter()
    rng = random.Random(11)
    done = 0
    while done < 50:
        ds = random_dataset(rng, m_max=80, k_max=4)
        tree = train_cart(ds, TrainParams(max_depth=4))
        if tree.n_leaves > 16:
            continue
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
                assert abs(got.cost - want) <= 1e-9
        done += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"counterfactual check took {elapsed:.1f}s (limit 10s)"


# ---------------------------------------------------------------------------
# 6. REINFORCE convergence


def _bandit_oracle_converges(seed: int, lr: float = 0.1, episodes: int = 500) -> float:
    """Independent two-armed-bandit REINFORCE simulation: softmax over two
    logits on a bias feature, rewards +0.98 (tree) / -0.02 (llm), the same
    update rule and baseline schedule as the real trainer."""
    rng = random.Random(seed)
    logits = [0.0, 0.0]
    baseline = 0.0
    beta = 0.05
    for _ in range(episodes):
        z = max(logits)
        exps = [math.exp(l - z) for l in logits]
        total = sum(exps)
        probs = [e / total for e in exps]
        arm = 0 if rng.random() < probs[0] else 1
        reward = 0.98 if arm == 0 else -0.02
        advantage = reward - baseline
        for i in range(2):
            grad = (1.0 if i == arm else 0.0) - probs[i]
            logits[i] += lr * grad * advantage
        baseline = (1 - beta) * baseline + beta * reward
    z = max(logits)
    exps = [math.exp(l - z) for l in logits]
    return exps[0] / sum(exps)


@acceptance("reinforce-convergence")
def test_reinforce_bandit_and_gradient() -> None:
    from treeoracle.bench import make_routing_task_generator
    from treeoracle.core import BeliefState
    from treeoracle.orchestrator import Budget
    from treeoracle.policy_learning import (
        CurriculumStage,
        PolicyParams,
        RewardSpec,
        action_distribution,
        featurize_state,
        grad_log_prob,
        log_prob,
        train_policy,
    )

    # analytic gradient vs central finite differences on 100 random fixtures
    nprng = np.random.default_rng(42)
    h = 1e-5
    for _ in range(100):
        params = PolicyParams(nprng.normal(scale=2.0, size=(4, 7)))
        s = nprng.uniform(size=7)
        mask = [bool(v) for v in nprng.uniform(size=4) < 0.8]
        if not any(mask):
            mask[0] = True
        action = int(nprng.choice([i for i, ok in enumerate(mask) if ok]))
        analytic = grad_log_prob(params, s, action, mask)
        i = int(nprng.integers(4))
        j = int(nprng.integers(7))
        wp = params.weights.copy(); wp[i, j] += h
        wm = params.weights.copy(); wm[i, j] -= h
        fd = (log_prob(PolicyParams(wp), s, action, mask)
              - log_prob(PolicyParams(wm), s, action, mask)) / (2 * h)
        assert abs(analytic[i, j] - fd) <= 1e-6

    # degenerate routing bandit: 10/10 seeds above 0.95, matching the oracle
    budget = Budget(max_steps=2, max_tool_calls=1, max_llm_calls=1)
    fresh = featurize_state(
        BeliefState(input=StructuredInput((True, True, True), None, "x")), budget)
    mask = [True, True, False, False]
    for seed in range(10):
        oracle_p = _bandit_oracle_converges(seed)
        assert oracle_p > 0.95, f"oracle sim failed to converge on seed {seed}"
        generator = make_routing_task_generator(k=3, depth=2, llm_error_rate=1.0)
        params, _ = train_policy(generator, [CurriculumStage(0, 500, 2)],
                                 RewardSpec(), seed=seed, learning_rate=0.1)
        p_tree = action_distribution(params, fresh, mask)[0]
        assert p_tree > 0.95, f"seed {seed}: P(CallTree)={p_tree:.4f}"


# ---------------------------------------------------------------------------
# 7. Calculator oracle


@acceptance("calculator-oracle")
def test_calculator_oracle() -> None:
    assert calc_eval("2+3*4") == 14.0
    assert calc_eval("2^3^2") == 512.0
    with pytest.raises(DivisionByZero):
        calc_eval("1/0")
    rng = random.Random(314)
    checked = 0
    while checked < 10_000:
        text, want = random_expr(rng, rng.randint(1, 5))
        if not math.isfinite(want) or abs(want) > 1e14:
            continue
        got = calc_eval(text)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
        checked += 1


# ---------------------------------------------------------------------------
# 8. Episode reproducibility (two runs; CLI and HTTP surfaces)


@acceptance("episode-reproducibility")
def test_episode_reproducibility_across_surfaces(tmp_path) -> None:
    from fastapi.testclient import TestClient

    from treeoracle.cli import main
    from treeoracle.service import ServiceConfig, create_app

    schema = {
        "features": [{"name": "x0", "kind": "numeric", "vocabulary": None}],
        "label": {"name": "y", "vocabulary": ["A", "B"]},
    }
    csv_data = "x0,y\n1,A\n2,A\n3,A\n7,B\n8,B\n9,B\n"
    overrides = {
        "policy": "default",
        "backend": {"kind": "scripted", "rules": [],
                    "default": "ANSWER: A | RATIONALE: scripted"},
        "seed": 5,
    }
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    (tmp_path / "data.csv").write_text(csv_data)
    (tmp_path / "record.json").write_text(json.dumps({"x0": 2.0}))
    (tmp_path / "episode.json").write_text(json.dumps(overrides))

    assert main(["train", "--schema", str(tmp_path / "schema.json"),
                 "--data", str(tmp_path / "data.csv"),
                 "--out", str(tmp_path / "model.json"), "--max-depth", "3"]) == 0
    cli_transcripts = []
    for run in range(2):
        out = tmp_path / f"t{run}.json"
        assert main(["query", "--model", str(tmp_path / "model.json"),
                     "--record", str(tmp_path / "record.json"),
                     "--episode-config", str(tmp_path / "episode.json"),
                     "--seed", "5", "--out", str(out)]) == 0
        cli_transcripts.append(out.read_bytes())
    assert cli_transcripts[0] == cli_transcripts[1], "CLI runs differ"

    client = TestClient(create_app(ServiceConfig()))
    train_body = {
        "schema": schema,
        "rows": [{"x0": v, "y": lab} for v, lab in
                 [(1, "A"), (2, "A"), (3, "A"), (7, "B"), (8, "B"), (9, "B")]],
        "params": {"max_depth": 3},
    }
    model_id = client.post("/v1/train", json=train_body).json()["model_id"]
    http_transcripts = []
    for _run in range(2):
        resp = client.post("/v1/query", json={
            "model_id": model_id, "record": {"x0": 2.0}, "overrides": overrides})
        assert resp.status_code == 200, resp.text
        episode_id = resp.json()["episode_id"]
        trace = client.get(f"/v1/trace/{episode_id}?format=json")
        http_transcripts.append(trace.content)
    assert http_transcripts[0] == http_transcripts[1], "HTTP runs differ"
    assert cli_transcripts[0] == http_transcripts[0], \
        "CLI and HTTP transcripts are not byte-identical"


# ---------------------------------------------------------------------------
# 9. Belief-state laws under fuzzing


@acceptance("belief-state-laws")
def test_belief_state_laws_fuzzed_episodes() -> None:
    from treeoracle.agent import ScriptedBackend, ScriptedRule
    from treeoracle.orchestrator import (
        DEFAULT_POLICY,
        LLM_ONLY_POLICY,
        LLM_PLUS_TRACE_POLICY,
        Budget,
        EpisodeConfig,
        LearnedPolicy,
        run_episode,
    )
    from treeoracle.perception import RawRecord
    from treeoracle.policy_learning import PolicyParams

    rng = random.Random(99)
    nprng = np.random.default_rng(99)
    pool = [
        "ANSWER: A | RATIONALE: r",
        "ANSWER: B | RATIONALE: r",
        'TOOL: calculator | ARGS: {"expr":"2*3"}',
        'TOOL: calculator | ARGS: {"expr":"1/0"}',
        'TOOL: ghost | ARGS: {}',
        'CHECK: {"x0": 1.0} | CLAIM: A',
        "PLAN: 1. a 2. b",
        "no directive here",
    ]
    ds = None
    tree = None
    for episode in range(1000):
        if episode % 100 == 0:
            ds = random_dataset(rng, m_max=40, k_max=3,
                                kinds=(FeatureKind.NUMERIC,))
            tree = train_cart(ds, TrainParams(max_depth=3))
        rules = tuple(ScriptedRule(f"q{i}", rng.choice(pool)) for i in range(2))
        backend = ScriptedBackend(rules=rules, default=rng.choice(pool))
        if rng.random() < 0.3:
            policy = LearnedPolicy(
                params=PolicyParams(nprng.normal(scale=2.0, size=(4, 7))),
                sample=True, rng=random.Random(episode))
        else:
            policy = rng.choice([DEFAULT_POLICY, LLM_ONLY_POLICY,
                                 LLM_PLUS_TRACE_POLICY])
        budget = Budget(max_steps=rng.randint(1, 8),
                        max_tool_calls=rng.randint(1, 3),
                        max_llm_calls=rng.randint(1, 3))
        config = EpisodeConfig(schema=ds.schema, backend=backend, model=tree,
                               policy=policy, budget=budget, seed=episode)
        record = RawRecord(
            {spec.name: rng.uniform(-11, 11) for spec in ds.schema.features})
        transcript = run_episode(record, config)
        # budget safety
        assert transcript.counters["steps"] <= budget.max_steps
        assert transcript.counters["tool_calls"] <= budget.max_tool_calls
        assert transcript.counters["llm_calls"] <= budget.max_llm_calls
        # append-only alignment: provenance indices increase and digests match
        events = transcript.belief.events
        provenance = transcript.belief.provenance
        assert len(events) == len(provenance)
        assert len(events) == len(transcript.actions)
        timestamps = [p.timestamp for p in provenance]
        assert timestamps == sorted(timestamps)
        for i, (event, record_) in enumerate(zip(events, provenance)):
            assert record_.step_index == i
            assert record_.payload_digest == event.payload_digest
        assert transcript.terminal_status in ("answered", "budget_exhausted",
                                              "error")
