"""Tree-based symbolic reasoner: CART induction, random forests, prediction
with rule traces, what-if and nearest-counterfactual queries, and
hypothesis-consistency checks.

Split selection under gini compares candidate scores with exact integer
arithmetic, so results are reproducible and match exhaustive enumeration
bit-for-bit; entropy scores are floating point with a fixed accumulation
order. Numeric thresholds are midpoints between consecutive distinct sorted
values; categorical splits are one-category-vs-rest. Ties break on
(lower feature index, lower threshold / lexicographically smaller category).
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .core import (
    EngineError,
    FeatureKind,
    FeatureValue,
    Schema,
    SchemaMismatch,
    StructuredInput,
    UnknownFeature,
    canonical_bytes,
    validate_input,
)

GINI = "gini"
ENTROPY = "entropy"

MODEL_FORMAT = "oracle-tree/1"

# Counterfactual placement: new numeric values sit this fraction of the
# feature's training range beyond the binding threshold.
EPS_CF_SCALE = 1e-6


class MalformedModel(EngineError):
    pass


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class TrainParams:
    criterion: str = GINI
    max_depth: int = 8
    min_leaf: int = 1
    min_split_gain: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.criterion not in (GINI, ENTROPY):
            raise EngineError(f"unknown criterion {self.criterion!r}")
        if self.max_depth < 1:
            raise EngineError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise EngineError("min_leaf must be >= 1")
        if self.min_split_gain < 0:
            raise EngineError("min_split_gain must be >= 0")

    def to_json(self) -> dict:
        return {"criterion": self.criterion, "max_depth": self.max_depth,
                "min_leaf": self.min_leaf, "min_split_gain": self.min_split_gain,
                "rng_seed": self.rng_seed}

    @staticmethod
    def from_json(obj: Mapping) -> "TrainParams":
        return TrainParams(obj["criterion"], obj["max_depth"], obj["min_leaf"],
                           obj["min_split_gain"], obj["rng_seed"])


@dataclass(frozen=True)
class Dataset:
    """Supervised training data: m schema-conformant rows with no missing
    values (the perception layer guarantees completeness) plus m labels."""
    schema: Schema
    rows: tuple[StructuredInput, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.rows) < 1:
            raise EngineError("m >= 1: dataset must contain at least one row")
        if len(self.rows) != len(self.labels):
            raise EngineError("rows and labels must have equal length")
        for row in self.rows:
            validate_input(row, self.schema)
            if any(v is None for v in row.values):
                raise EngineError(
                    f"row {row.source_id!r} has a missing value; impute upstream")
        for lab in self.labels:
            self.schema.validate_label(lab)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def k(self) -> int:
        return len(self.schema.features)


@dataclass(frozen=True)
class SplitPredicate:
    """A binary, axis-aligned test; True routes to the left child."""
    feature_index: int
    kind: str  # "numeric_le" | "categorical_in" | "boolean_is"
    threshold: float | None = None
    categories: tuple[str, ...] | None = None
    value: bool | None = None

    def evaluate(self, v: FeatureValue) -> bool:
        if self.kind == "numeric_le":
            return v <= self.threshold  # type: ignore[operator]
        if self.kind == "categorical_in":
            return v in self.categories  # type: ignore[operator]
        return v == self.value

    def render(self, feature_name: str) -> str:
        if self.kind == "numeric_le":
            return f"{feature_name} <= {self.threshold!r}"
        if self.kind == "categorical_in":
            inner = ", ".join(self.categories or ())
            return f"{feature_name} in {{{inner}}}"
        return f"{feature_name} is {self.value}"

    def to_json(self) -> dict:
        return {"feature_index": self.feature_index, "kind": self.kind,
                "threshold": self.threshold,
                "categories": list(self.categories) if self.categories is not None else None,
                "value": self.value}

    @staticmethod
    def from_json(obj: Mapping) -> "SplitPredicate":
        cats = obj.get("categories")
        return SplitPredicate(obj["feature_index"], obj["kind"],
                              threshold=obj.get("threshold"),
                              categories=tuple(cats) if cats is not None else None,
                              value=obj.get("value"))


@dataclass(frozen=True)
class TreeNode:
    predicate: SplitPredicate | None = None
    left: int = -1
    right: int = -1
    distribution: Mapping[str, float] | None = None
    n_train: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.predicate is None

    def to_json(self) -> dict:
        if self.is_leaf:
            return {"type": "leaf", "distribution": dict(self.distribution or {}),
                    "n_train": self.n_train}
        return {"type": "internal", "predicate": self.predicate.to_json(),
                "left": self.left, "right": self.right}

    @staticmethod
    def from_json(obj: Mapping) -> "TreeNode":
        if obj.get("type") == "leaf":
            return TreeNode(distribution=dict(obj["distribution"]),
                            n_train=obj["n_train"])
        return TreeNode(predicate=SplitPredicate.from_json(obj["predicate"]),
                        left=obj["left"], right=obj["right"])


@dataclass(frozen=True)
class DecisionTree:
    schema: Schema
    nodes: tuple[TreeNode, ...]
    root: int
    params: TrainParams
    feature_ranges: Mapping[int, tuple[float, float]]

    @property
    def schema_digest(self) -> str:
        return self.schema.digest

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    def leaf_label(self, leaf_id: int) -> str:
        return argmax_label(self.nodes[leaf_id].distribution or {},
                            self.schema.label.vocabulary)


@dataclass(frozen=True)
class Forest:
    trees: tuple[DecisionTree, ...]
    bootstrap_seeds: tuple[int, ...]
    feature_subsample_count: int
    bootstrap: bool = True

    @property
    def schema(self) -> Schema:
        return self.trees[0].schema

    @property
    def schema_digest(self) -> str:
        return self.trees[0].schema_digest


Model = Union[DecisionTree, Forest]


@dataclass(frozen=True)
class TraceStep:
    node_id: int
    predicate: SplitPredicate
    feature_name: str
    observed: FeatureValue
    branch: str  # "left" | "right"

    def to_json(self) -> dict:
        return {"node_id": self.node_id, "predicate": self.predicate.to_json(),
                "feature_name": self.feature_name, "observed": self.observed,
                "branch": self.branch}

    @staticmethod
    def from_json(obj: Mapping) -> "TraceStep":
        return TraceStep(obj["node_id"], SplitPredicate.from_json(obj["predicate"]),
                         obj["feature_name"], obj["observed"], obj["branch"])


@dataclass(frozen=True)
class RuleTrace:
    steps: tuple[TraceStep, ...]
    leaf_id: int

    def to_json(self) -> dict:
        return {"kind": "tree", "steps": [s.to_json() for s in self.steps],
                "leaf_id": self.leaf_id}

    @staticmethod
    def from_json(obj: Mapping) -> "RuleTrace":
        return RuleTrace(tuple(TraceStep.from_json(s) for s in obj["steps"]),
                         obj["leaf_id"])


@dataclass(frozen=True)
class ForestTrace:
    per_tree: tuple[RuleTrace, ...]
    tally: Mapping[str, int]

    def to_json(self) -> dict:
        return {"kind": "forest", "per_tree": [t.to_json() for t in self.per_tree],
                "tally": dict(self.tally)}

    @staticmethod
    def from_json(obj: Mapping) -> "ForestTrace":
        return ForestTrace(tuple(RuleTrace.from_json(t) for t in obj["per_tree"]),
                           dict(obj["tally"]))


Trace = Union[RuleTrace, ForestTrace]


@dataclass(frozen=True)
class SymbolicVerdict:
    outcome: str
    confidence: float
    trace: Trace

    def to_json(self) -> dict:
        return {"outcome": self.outcome, "confidence": self.confidence,
                "trace": self.trace.to_json()}

    @staticmethod
    def from_json(obj: Mapping) -> "SymbolicVerdict":
        tr = obj["trace"]
        trace = RuleTrace.from_json(tr) if tr["kind"] == "tree" else ForestTrace.from_json(tr)
        return SymbolicVerdict(obj["outcome"], obj["confidence"], trace)


def argmax_label(distribution: Mapping[str, float], vocabulary: Sequence[str]) -> str:
    """Highest-probability label; ties break by vocabulary order."""
    best_label, best_p = None, -1.0
    for lab in vocabulary:
        p = distribution.get(lab, 0.0)
        if p > best_p:
            best_label, best_p = lab, p
    assert best_label is not None
    return best_label


# ---------------------------------------------------------------------------
# Impurity


def impurity(labels: Iterable[str], criterion: str) -> float:
    """Gini (1 - sum p^2) or entropy (-sum p log2 p) of a label multiset."""
    counts = Counter(labels)
    if not counts:
        raise EngineError("impurity of an empty multiset is undefined")
    return _impurity_from_counts({k: v for k, v in counts.items()}, criterion)


def _impurity_from_counts(counts: Mapping[Any, int], criterion: str) -> float:
    n = sum(counts.values())
    if criterion == GINI:
        acc = 0.0
        for key in sorted(counts):
            p = counts[key] / n
            acc += p * p
        return 1.0 - acc
    if criterion == ENTROPY:
        acc = 0.0
        for key in sorted(counts):
            p = counts[key] / n
            if p > 0.0:
                acc -= p * math.log2(p)
        return acc
    raise EngineError(f"unknown criterion {criterion!r}")


def _gain_from_counts(parent: Mapping[Any, int], left: Mapping[Any, int],
                      right: Mapping[Any, int], criterion: str) -> float:
    n = sum(parent.values())
    nl = sum(left.values())
    nr = sum(right.values())
    return (_impurity_from_counts(parent, criterion)
            - (nl / n) * _impurity_from_counts(left, criterion)
            - (nr / n) * _impurity_from_counts(right, criterion))


# ---------------------------------------------------------------------------
# Split search internals

# Candidate scores: under gini the quantity S_l/n_l + S_r/n_r (S = sum of
# squared class counts) orders candidates identically to impurity decrease
# and admits exact integer comparison; under entropy we minimize
# n_l*log2(n_l) - T_l + n_r*log2(n_r) - T_r with T = sum c*log2(c).


class _Columns:
    """Columnar view of a dataset restricted by a row multiset."""

    def __init__(self, dataset: Dataset):
        schema = dataset.schema
        self.schema = schema
        self.kinds = [f.kind for f in schema.features]
        self.values: list[list] = [
            [row.values[f] for row in dataset.rows]
            for f in range(len(schema.features))
        ]
        code_of = {lab: i for i, lab in enumerate(schema.label.vocabulary)}
        self.codes = [code_of[lab] for lab in dataset.labels]
        self.vocab = schema.label.vocabulary


def _count_codes(codes: Sequence[int], rows: Sequence[int]) -> dict[int, int]:
    out: dict[int, int] = {}
    for rid in rows:
        c = codes[rid]
        out[c] = out.get(c, 0) + 1
    return out


def _sq_sum(counts: Mapping[int, int]) -> int:
    return sum(c * c for c in counts.values())


class _XLog:
    """Memoized i*log2(i) table (entropy scans)."""

    def __init__(self) -> None:
        self.table = [0.0, 0.0]

    def __call__(self, i: int) -> float:
        t = self.table
        while len(t) <= i:
            j = len(t)
            t.append(j * math.log2(j))
        return t[i]


@dataclass
class _Winner:
    feature: int
    kind: str
    threshold: float | None = None
    category: str | None = None
    bool_value: bool | None = None
    n_left: int = 0


def _search_split(cols: _Columns, rows: Sequence[int],
                  sorted_rows: Mapping[int, Sequence[int]],
                  features: Sequence[int], criterion: str,
                  min_leaf: int, xlog: _XLog) -> Optional[_Winner]:
    """Best admissible candidate over the given features, or None.

    Purity and min-gain admission are the caller's concern; this returns the
    score-maximal candidate subject to min_leaf.
    """
    n = len(rows)
    codes = cols.codes
    parent_counts = _count_codes(codes, rows)
    if len(parent_counts) <= 1:
        return None

    use_gini = criterion == GINI
    S_p = _sq_sum(parent_counts) if use_gini else 0
    T_p = sum(xlog(c) for c in parent_counts.values()) if not use_gini else 0.0

    best: Optional[_Winner] = None
    best_num = 0
    best_den = 1
    best_ent = math.inf  # minimized

    def better_gini(S_l: int, n_l: int, S_r: int, n_r: int) -> bool:
        nonlocal best_num, best_den
        num = S_l * n_r + S_r * n_l
        den = n_l * n_r
        if best is None or num * best_den > best_num * den:
            best_num, best_den = num, den
            return True
        return False

    def better_entropy(T_l: float, n_l: int, T_r: float, n_r: int) -> bool:
        nonlocal best_ent
        score = xlog(n_l) - T_l + xlog(n_r) - T_r
        if best is None or score < best_ent:
            best_ent = score
            return True
        return False

    for f in features:
        kind = cols.kinds[f]
        col = cols.values[f]
        if kind is FeatureKind.NUMERIC:
            ids = sorted_rows[f]
            left_counts: dict[int, int] = {}
            right_counts = dict(parent_counts)
            S_l, S_r = 0, S_p
            T_l, T_r = 0.0, T_p
            n_l = 0
            prev = col[ids[0]]
            for rid in ids:
                v = col[rid]
                if v != prev:
                    thr = (prev + v) / 2.0
                    # midpoint must be strictly between the observed values
                    if prev < thr < v and n_l >= min_leaf and n - n_l >= min_leaf:
                        ok = (better_gini(S_l, n_l, S_r, n - n_l) if use_gini
                              else better_entropy(T_l, n_l, T_r, n - n_l))
                        if ok:
                            best = _Winner(f, "numeric_le", threshold=thr, n_left=n_l)
                    prev = v
                c = codes[rid]
                cnt = left_counts.get(c, 0)
                if use_gini:
                    S_l += 2 * cnt + 1
                    S_r -= 2 * right_counts[c] - 1
                else:
                    T_l += xlog(cnt + 1) - xlog(cnt)
                    T_r += xlog(right_counts[c] - 1) - xlog(right_counts[c])
                left_counts[c] = cnt + 1
                right_counts[c] -= 1
                n_l += 1
        elif kind is FeatureKind.CATEGORICAL:
            vocab = cols.schema.features[f].vocabulary or ()
            if len(vocab) < 2:
                continue  # {c} must be a proper subset of the vocabulary
            per_cat: dict[str, dict[int, int]] = {}
            for rid in rows:
                cat = col[rid]
                bucket = per_cat.setdefault(cat, {})
                c = codes[rid]
                bucket[c] = bucket.get(c, 0) + 1
            for cat in sorted(per_cat):
                lcounts = per_cat[cat]
                n_l = sum(lcounts.values())
                if n_l < min_leaf or n - n_l < min_leaf:
                    continue
                if use_gini:
                    S_l = _sq_sum(lcounts)
                    S_r = S_p + sum(cl * cl - 2 * parent_counts[c] * cl
                                    for c, cl in lcounts.items())
                    if better_gini(S_l, n_l, S_r, n - n_l):
                        best = _Winner(f, "categorical_in", category=cat, n_left=n_l)
                else:
                    T_l = sum(xlog(c) for c in lcounts.values())
                    T_r = T_p + sum(xlog(parent_counts[c] - cl) - xlog(parent_counts[c])
                                    for c, cl in lcounts.items())
                    if better_entropy(T_l, n_l, T_r, n - n_l):
                        best = _Winner(f, "categorical_in", category=cat, n_left=n_l)
        else:  # boolean
            lcounts: dict[int, int] = {}
            for rid in rows:
                if col[rid] is True:
                    c = codes[rid]
                    lcounts[c] = lcounts.get(c, 0) + 1
            n_l = sum(lcounts.values())
            if n_l < min_leaf or n - n_l < min_leaf or n_l == 0 or n_l == n:
                continue
            if use_gini:
                S_l = _sq_sum(lcounts)
                S_r = S_p + sum(cl * cl - 2 * parent_counts[c] * cl
                                for c, cl in lcounts.items())
                if better_gini(S_l, n_l, S_r, n - n_l):
                    best = _Winner(f, "boolean_is", bool_value=True, n_left=n_l)
            else:
                T_l = sum(xlog(c) for c in lcounts.values())
                T_r = T_p + sum(xlog(parent_counts[c] - cl) - xlog(parent_counts[c])
                                for c, cl in lcounts.items())
                if better_entropy(T_l, n_l, T_r, n - n_l):
                    best = _Winner(f, "boolean_is", bool_value=True, n_left=n_l)
    return best


def _winner_predicate(w: _Winner) -> SplitPredicate:
    if w.kind == "numeric_le":
        return SplitPredicate(w.feature, "numeric_le", threshold=w.threshold)
    if w.kind == "categorical_in":
        return SplitPredicate(w.feature, "categorical_in", categories=(w.category,))
    return SplitPredicate(w.feature, "boolean_is", value=w.bool_value)


def _partition(cols: _Columns, rows: Sequence[int], pred: SplitPredicate) -> list[bool]:
    """Boolean go-left flags indexed by global row id (valid for node rows)."""
    col = cols.values[pred.feature_index]
    flags = [False] * len(cols.codes)
    for rid in rows:
        flags[rid] = pred.evaluate(col[rid])
    return flags


def _admissible_gain(parent: Mapping[int, int], left: Mapping[int, int],
                     right: Mapping[int, int], criterion: str,
                     min_split_gain: float) -> Optional[float]:
    """Float gain if it passes the min-gain gate, else None.

    The gini gate compares exactly in rational arithmetic so that zero-gain
    splits (e.g. the first level of XOR) are admitted when min_split_gain=0.
    """
    gain = _gain_from_counts(parent, left, right, criterion)
    if criterion == GINI:
        n = sum(parent.values())
        nl = sum(left.values())
        nr = sum(right.values())
        exact = (Fraction(_sq_sum(left), nl) + Fraction(_sq_sum(right), nr)
                 - Fraction(_sq_sum(parent), n)) / n
        if exact < Fraction(min_split_gain):
            return None
        return gain
    if gain < min_split_gain:
        return None
    return gain


def best_split(dataset: Dataset, candidate_features: Iterable[int],
               criterion: str, *, min_split_gain: float = 0.0,
               min_leaf: int = 1) -> Optional[tuple[SplitPredicate, float]]:
    """The impurity-decrease-maximizing predicate over all midpoint thresholds
    and one-vs-rest category splits, with its gain; None when the node is pure
    or the best gain falls below min_split_gain."""
    if dataset.m < 2:
        return None
    cols = _Columns(dataset)
    rows = list(range(dataset.m))
    features = sorted(set(candidate_features))
    sorted_rows = {f: sorted(rows, key=cols.values[f].__getitem__)
                   for f in features if cols.kinds[f] is FeatureKind.NUMERIC}
    xlog = _XLog()
    w = _search_split(cols, rows, sorted_rows, features, criterion, min_leaf, xlog)
    if w is None:
        return None
    pred = _winner_predicate(w)
    flags = _partition(cols, rows, pred)
    left = _count_codes(cols.codes, [r for r in rows if flags[r]])
    right = _count_codes(cols.codes, [r for r in rows if not flags[r]])
    parent = _count_codes(cols.codes, rows)
    gain = _admissible_gain(parent, left, right, criterion, min_split_gain)
    if gain is None:
        return None
    return pred, gain


# ---------------------------------------------------------------------------
# Training


class _Builder:
    def __init__(self) -> None:
        self.nodes: list[Optional[TreeNode]] = []

    def reserve(self) -> int:
        self.nodes.append(None)
        return len(self.nodes) - 1

    def add_leaf(self, counts: Mapping[int, int], vocab: Sequence[str]) -> int:
        n = sum(counts.values())
        dist = {vocab[c]: counts[c] / n for c in sorted(counts)}
        self.nodes.append(TreeNode(distribution=dist, n_train=n))
        return len(self.nodes) - 1

    def set_internal(self, idx: int, pred: SplitPredicate, left: int, right: int) -> None:
        self.nodes[idx] = TreeNode(predicate=pred, left=left, right=right)


def _numeric_feature_ranges(cols: _Columns, rows: Sequence[int]) -> dict[int, tuple[float, float]]:
    out: dict[int, tuple[float, float]] = {}
    for f, kind in enumerate(cols.kinds):
        if kind is not FeatureKind.NUMERIC:
            continue
        vals = [cols.values[f][r] for r in rows]
        out[f] = (min(vals), max(vals))
    return out


def _grow(cols: _Columns, rows: list[int],
          sorted_rows: dict[int, list[int]], depth: int,
          params: TrainParams, builder: _Builder, xlog: _XLog,
          feature_sampler) -> int:
    vocab = cols.vocab
    counts = _count_codes(cols.codes, rows)
    n = len(rows)
    if depth >= params.max_depth or len(counts) <= 1 or n < 2 * params.min_leaf:
        return builder.add_leaf(counts, vocab)

    features = feature_sampler(len(cols.kinds))
    w = _search_split(cols, rows, sorted_rows, features, params.criterion,
                      params.min_leaf, xlog)
    if w is None:
        return builder.add_leaf(counts, vocab)
    pred = _winner_predicate(w)
    flags = _partition(cols, rows, pred)
    left_rows = [r for r in rows if flags[r]]
    right_rows = [r for r in rows if not flags[r]]
    left_counts = _count_codes(cols.codes, left_rows)
    right_counts = _count_codes(cols.codes, right_rows)
    if _admissible_gain(counts, left_counts, right_counts, params.criterion,
                        params.min_split_gain) is None:
        return builder.add_leaf(counts, vocab)

    left_sorted = {f: [r for r in ids if flags[r]] for f, ids in sorted_rows.items()}
    right_sorted = {f: [r for r in ids if not flags[r]] for f, ids in sorted_rows.items()}

    idx = builder.reserve()
    left_idx = _grow(cols, left_rows, left_sorted, depth + 1, params, builder,
                     xlog, feature_sampler)
    right_idx = _grow(cols, right_rows, right_sorted, depth + 1, params, builder,
                      xlog, feature_sampler)
    builder.set_internal(idx, pred, left_idx, right_idx)
    return idx


def _train_on_rows(dataset: Dataset, rows: list[int], params: TrainParams,
                   feature_sampler) -> DecisionTree:
    if len(rows) < params.min_leaf:
        raise EngineError(
            f"dataset of {len(rows)} rows cannot satisfy min_leaf={params.min_leaf}")
    cols = _Columns(dataset)
    sorted_rows = {f: sorted(rows, key=cols.values[f].__getitem__)
                   for f, kind in enumerate(cols.kinds)
                   if kind is FeatureKind.NUMERIC}
    builder = _Builder()
    xlog = _XLog()
    root = _grow(cols, rows, sorted_rows, 0, params, builder, xlog, feature_sampler)
    if any(n is None for n in builder.nodes):
        raise AssertionError("builder left an unset node")
    return DecisionTree(schema=dataset.schema, nodes=tuple(builder.nodes), root=root,
                        params=params,
                        feature_ranges=_numeric_feature_ranges(cols, rows))


def train_cart(dataset: Dataset, params: TrainParams) -> DecisionTree:
    """Greedy binary recursive partitioning. Recursion stops at max_depth,
    min_leaf, purity, or when no admissible split remains."""
    return _train_on_rows(dataset, list(range(dataset.m)), params,
                          lambda k: range(k))


def train_forest(dataset: Dataset, n_trees: int, params: TrainParams,
                 feature_subsample_count: int | None = None,
                 master_seed: int = 0, bootstrap: bool = True) -> Forest:
    """Bootstrap-aggregated trees with per-node feature subsampling; the whole
    forest is a deterministic function of (dataset, params, master_seed)."""
    if n_trees < 1:
        raise EngineError("n_trees must be >= 1")
    k = dataset.k
    if feature_subsample_count is None:
        feature_subsample_count = k
    if not 1 <= feature_subsample_count <= k:
        raise EngineError("feature_subsample_count must be in [1, k]")

    trees = []
    seeds = []
    for t in range(n_trees):
        seed = master_seed * 1_000_003 + t
        seeds.append(seed)
        rng = random.Random(seed)
        if bootstrap:
            rows = [rng.randrange(dataset.m) for _ in range(dataset.m)]
        else:
            rows = list(range(dataset.m))
        if feature_subsample_count == k:
            sampler = lambda kk: range(kk)
        else:
            c = feature_subsample_count
            sampler = lambda kk, rng=rng, c=c: sorted(rng.sample(range(kk), c))
        trees.append(_train_on_rows(dataset, rows, params, sampler))
    return Forest(trees=tuple(trees), bootstrap_seeds=tuple(seeds),
                  feature_subsample_count=feature_subsample_count,
                  bootstrap=bootstrap)


# ---------------------------------------------------------------------------
# Prediction with traces


def _check_input(model: Model, x: StructuredInput) -> Schema:
    schema = model.schema
    try:
        validate_input(x, schema)
    except SchemaMismatch:
        raise
    except EngineError as err:
        raise SchemaMismatch(str(err)) from err
    if any(v is None for v in x.values):
        raise SchemaMismatch("input has missing values; impute before prediction")
    return schema


def _predict_tree(tree: DecisionTree, x: StructuredInput) -> SymbolicVerdict:
    schema = tree.schema
    steps = []
    i = tree.root
    while True:
        node = tree.nodes[i]
        if node.is_leaf:
            trace = RuleTrace(steps=tuple(steps), leaf_id=i)
            dist = node.distribution or {}
            outcome = argmax_label(dist, schema.label.vocabulary)
            return SymbolicVerdict(outcome=outcome, confidence=dist.get(outcome, 0.0),
                                   trace=trace)
        pred = node.predicate
        assert pred is not None
        observed = x.values[pred.feature_index]
        goes_left = pred.evaluate(observed)
        steps.append(TraceStep(
            node_id=i, predicate=pred,
            feature_name=schema.features[pred.feature_index].name,
            observed=observed, branch="left" if goes_left else "right"))
        i = node.left if goes_left else node.right


def predict_with_trace(model: Model, x: StructuredInput) -> SymbolicVerdict:
    """Verdict plus the ordered rule trace that justifies it. For forests the
    confidence is the vote fraction and the trace bundles per-tree traces."""
    _check_input(model, x)
    if isinstance(model, DecisionTree):
        return _predict_tree(model, x)
    per_tree = tuple(_predict_tree(t, x) for t in model.trees)
    tally: dict[str, int] = {}
    for v in per_tree:
        tally[v.outcome] = tally.get(v.outcome, 0) + 1
    vocab = model.schema.label.vocabulary
    outcome = argmax_label({k: v for k, v in tally.items()}, vocab)
    return SymbolicVerdict(
        outcome=outcome, confidence=tally[outcome] / len(per_tree),
        trace=ForestTrace(per_tree=tuple(v.trace for v in per_tree),  # type: ignore[arg-type]
                          tally={k: tally[k] for k in sorted(tally)}))


# ---------------------------------------------------------------------------
# What-if


@dataclass(frozen=True)
class TraceDiff:
    """Route comparison of two traces: the first step index at which the
    branches diverge, plus each trace's steps from that point on."""
    divergence_index: int | None
    before_tail: tuple[TraceStep, ...]
    after_tail: tuple[TraceStep, ...]

    def to_json(self) -> dict:
        return {"divergence_index": self.divergence_index,
                "before_tail": [s.to_json() for s in self.before_tail],
                "after_tail": [s.to_json() for s in self.after_tail]}


@dataclass(frozen=True)
class ForestTraceDiff:
    per_tree: tuple[TraceDiff, ...]

    def to_json(self) -> dict:
        return {"per_tree": [d.to_json() for d in self.per_tree]}


@dataclass(frozen=True)
class WhatIfResult:
    before: SymbolicVerdict
    after: SymbolicVerdict
    changed_steps: TraceDiff | ForestTraceDiff
    modifications: Mapping[str, FeatureValue]

    def to_json(self) -> dict:
        return {"before": self.before.to_json(), "after": self.after.to_json(),
                "changed_steps": self.changed_steps.to_json(),
                "modifications": dict(self.modifications)}


def trace_diff(before: RuleTrace, after: RuleTrace) -> TraceDiff:
    limit = min(len(before.steps), len(after.steps))
    div = None
    for i in range(limit):
        a, b = before.steps[i], after.steps[i]
        if a.node_id != b.node_id or a.branch != b.branch:
            div = i
            break
    if div is None:
        if len(before.steps) == len(after.steps) and before.leaf_id == after.leaf_id:
            return TraceDiff(None, (), ())
        div = limit
    return TraceDiff(div, before.steps[div:], after.steps[div:])


def apply_modifications(schema: Schema, x: StructuredInput,
                        modifications: Mapping[str, FeatureValue]) -> StructuredInput:
    values = list(x.values)
    for name, raw in modifications.items():
        idx = schema.feature_index(name)  # raises UnknownFeature
        try:
            values[idx] = schema.coerce(idx, raw)
        except UnknownFeature:
            raise
        except EngineError as err:
            raise SchemaMismatch(str(err)) from err
    return replace(x, values=tuple(values))


def what_if(model: Model, x: StructuredInput,
            modifications: Mapping[str, FeatureValue]) -> WhatIfResult:
    """Re-evaluate the oracle with some features overwritten and report where
    the decision route diverges."""
    schema = _check_input(model, x)
    x2 = apply_modifications(schema, x, modifications)
    before = predict_with_trace(model, x)
    after = predict_with_trace(model, x2)
    if isinstance(before.trace, RuleTrace):
        diff: TraceDiff | ForestTraceDiff = trace_diff(before.trace, after.trace)  # type: ignore[arg-type]
    else:
        assert isinstance(after.trace, ForestTrace)
        diff = ForestTraceDiff(tuple(
            trace_diff(b, a) for b, a in zip(before.trace.per_tree, after.trace.per_tree)))
    return WhatIfResult(before=before, after=after, changed_steps=diff,
                        modifications=dict(modifications))


# ---------------------------------------------------------------------------
# Leaf regions, counterfactuals, consistency


@dataclass
class _Region:
    """Feature-space constraints accumulated along one root-to-leaf path."""
    lo: dict[int, float] = field(default_factory=dict)      # exclusive lower bounds
    hi: dict[int, float] = field(default_factory=dict)      # inclusive upper bounds
    allowed: dict[int, set] = field(default_factory=dict)   # categorical allow-sets
    pinned: dict[int, bool] = field(default_factory=dict)   # boolean pins

    def copy(self) -> "_Region":
        return _Region({**self.lo}, {**self.hi},
                       {k: set(v) for k, v in self.allowed.items()}, {**self.pinned})

    def feasible(self) -> bool:
        for f, lo in self.lo.items():
            if f in self.hi and lo >= self.hi[f]:
                return False
        return all(s for s in self.allowed.values())

    def constrain(self, schema: Schema, pred: SplitPredicate, go_left: bool) -> bool:
        """Apply one branch constraint; returns False if now infeasible."""
        f = pred.feature_index
        if pred.kind == "numeric_le":
            t = pred.threshold
            assert t is not None
            if go_left:
                self.hi[f] = min(self.hi.get(f, math.inf), t)
            else:
                self.lo[f] = max(self.lo.get(f, -math.inf), t)
        elif pred.kind == "categorical_in":
            vocab = schema.features[f].vocabulary or ()
            current = self.allowed.setdefault(f, set(vocab))
            subset = set(pred.categories or ())
            if go_left:
                current &= subset
            else:
                current -= subset
            self.allowed[f] = current
        else:
            want = pred.value if go_left else not pred.value
            if f in self.pinned and self.pinned[f] != want:
                return False
            self.pinned[f] = bool(want)
        return self.feasible()


def _leaf_regions(tree: DecisionTree) -> list[tuple[int, _Region]]:
    out: list[tuple[int, _Region]] = []

    def walk(i: int, region: _Region) -> None:
        node = tree.nodes[i]
        if node.is_leaf:
            out.append((i, region))
            return
        pred = node.predicate
        assert pred is not None
        for go_left, child in ((True, node.left), (False, node.right)):
            nxt = region.copy()
            if nxt.constrain(tree.schema, pred, go_left):
                walk(child, nxt)

    walk(tree.root, _Region())
    return out


@dataclass(frozen=True)
class Counterfactual:
    modifications: Mapping[str, FeatureValue]
    cost: float
    leaf_id: int

    def to_json(self) -> dict:
        return {"modifications": dict(self.modifications), "cost": self.cost,
                "leaf_id": self.leaf_id}


def _project_into(tree: DecisionTree, region: _Region, x: StructuredInput,
                  weights: Mapping[int, float]) -> tuple[float, dict[str, FeatureValue]]:
    """Minimum weighted move placing x inside the region; numeric targets sit
    eps beyond the binding threshold (eps = 1e-6 x training range)."""
    schema = tree.schema
    cost = 0.0
    mods: dict[str, FeatureValue] = {}
    features = set(region.lo) | set(region.hi) | set(region.allowed) | set(region.pinned)
    for f in sorted(features):
        name = schema.features[f].name
        v = x.values[f]
        kind = schema.features[f].kind
        if kind is FeatureKind.NUMERIC:
            lo = region.lo.get(f, -math.inf)
            hi = region.hi.get(f, math.inf)
            assert isinstance(v, float)
            if lo < v <= hi:
                continue
            rng = tree.feature_ranges.get(f)
            span = (rng[1] - rng[0]) if rng else 0.0
            eps = EPS_CF_SCALE * span
            if v <= lo:
                target = lo + eps
                if target > hi:
                    target = (lo + hi) / 2.0
            else:
                target = hi - eps
                if target <= lo:
                    target = (lo + hi) / 2.0
            cost += weights[f] * abs(v - target)
            mods[name] = target
        elif kind is FeatureKind.CATEGORICAL:
            allowed = region.allowed.get(f)
            if allowed is None or v in allowed:
                continue
            mods[name] = sorted(allowed)[0]
            cost += weights[f]
        else:
            pin = region.pinned.get(f)
            if pin is None or v == pin:
                continue
            mods[name] = pin
            cost += weights[f]
    return cost, mods


def nearest_counterfactual(tree: DecisionTree, x: StructuredInput, target_label: str,
                           cost: Mapping[str, float] | None = None) -> Counterfactual | None:
    """The cheapest feature modification whose leaf region has the target
    majority label, under per-feature weights (default 1); None when no leaf
    carries the target label."""
    schema = _check_input(tree, x)
    schema.validate_label(target_label)
    weights: dict[int, float] = {}
    for i, spec in enumerate(schema.features):
        w = 1.0 if cost is None else float(cost.get(spec.name, 1.0))
        if w <= 0:
            raise EngineError(f"cost weight for {spec.name!r} must be positive")
        weights[i] = w

    best: Counterfactual | None = None
    for leaf_id, region in _leaf_regions(tree):
        if tree.leaf_label(leaf_id) != target_label:
            continue
        c, mods = _project_into(tree, region, x, weights)
        if best is None or c < best.cost:
            best = Counterfactual(modifications=mods, cost=c, leaf_id=leaf_id)
    return best


@dataclass(frozen=True)
class ConsistencyReport:
    status: str  # "consistent" | "inconsistent" | "undetermined"
    supporting: RuleTrace | None
    refuting: RuleTrace | None
    reachable_leaves: tuple[tuple[int, str], ...]

    def to_json(self) -> dict:
        return {"status": self.status,
                "supporting": self.supporting.to_json() if self.supporting else None,
                "refuting": self.refuting.to_json() if self.refuting else None,
                "reachable_leaves": [list(t) for t in self.reachable_leaves]}


def check_consistency(tree: DecisionTree, assignment: Mapping[str, FeatureValue],
                      claimed_label: str) -> ConsistencyReport:
    """Enumerate leaves reachable under a partial assignment (unassigned
    features unconstrained) and compare their majority labels to the claim."""
    schema = tree.schema
    tree.schema.validate_label(claimed_label)
    assigned: dict[int, FeatureValue] = {}
    for name, raw in assignment.items():
        idx = schema.feature_index(name)
        try:
            assigned[idx] = schema.coerce(idx, raw)
        except EngineError as err:
            raise SchemaMismatch(str(err)) from err

    leaves: list[tuple[int, str, RuleTrace]] = []

    def walk(i: int, steps: list[TraceStep]) -> None:
        node = tree.nodes[i]
        if node.is_leaf:
            leaves.append((i, tree.leaf_label(i), RuleTrace(tuple(steps), i)))
            return
        pred = node.predicate
        assert pred is not None
        name = schema.features[pred.feature_index].name
        if pred.feature_index in assigned:
            v = assigned[pred.feature_index]
            goes_left = pred.evaluate(v)
            step = TraceStep(i, pred, name, v, "left" if goes_left else "right")
            walk(node.left if goes_left else node.right, steps + [step])
        else:
            walk(node.left, steps + [TraceStep(i, pred, name, None, "left")])
            walk(node.right, steps + [TraceStep(i, pred, name, None, "right")])

    walk(tree.root, [])
    supporting = next((t for _, lab, t in leaves if lab == claimed_label), None)
    refuting = next((t for _, lab, t in leaves if lab != claimed_label), None)
    if refuting is None:
        status = "consistent"
    elif supporting is None:
        status = "inconsistent"
    else:
        status = "undetermined"
    return ConsistencyReport(status=status, supporting=supporting, refuting=refuting,
                             reachable_leaves=tuple((i, lab) for i, lab, _ in leaves))


# ---------------------------------------------------------------------------
# Serialization


def _tree_to_json(tree: DecisionTree) -> dict:
    return {"schema": tree.schema.to_json(),
            "schema_digest": tree.schema_digest,
            "params": tree.params.to_json(),
            "root": tree.root,
            "nodes": [n.to_json() for n in tree.nodes],
            "feature_ranges": {str(f): [lo, hi]
                               for f, (lo, hi) in sorted(tree.feature_ranges.items())}}


def serialize_model(model: Model) -> bytes:
    if isinstance(model, DecisionTree):
        doc = {"format": MODEL_FORMAT, "kind": "tree", "tree": _tree_to_json(model)}
    else:
        doc = {"format": MODEL_FORMAT, "kind": "forest",
               "trees": [_tree_to_json(t) for t in model.trees],
               "bootstrap_seeds": list(model.bootstrap_seeds),
               "feature_subsample_count": model.feature_subsample_count,
               "bootstrap": model.bootstrap}
    return canonical_bytes(doc)


def _validate_tree(tree: DecisionTree) -> None:
    n = len(tree.nodes)
    if not 0 <= tree.root < n:
        raise MalformedModel("root index out of range")
    parents: dict[int, int] = {}
    for i, node in enumerate(tree.nodes):
        if node.is_leaf:
            if node.distribution is None:
                raise MalformedModel(f"leaf {i} lacks a distribution")
            total = sum(node.distribution.values())
            if abs(total - 1.0) > 1e-9:
                raise MalformedModel(
                    f"leaf {i} distribution sums to {total!r}, not 1")
            if any(p < 0 for p in node.distribution.values()):
                raise MalformedModel(f"leaf {i} has a negative probability")
            for lab in node.distribution:
                if lab not in tree.schema.label.vocabulary:
                    raise MalformedModel(f"leaf {i} label {lab!r} outside vocabulary")
            if node.n_train < tree.params.min_leaf:
                raise MalformedModel(
                    f"leaf {i} n_train {node.n_train} < min_leaf {tree.params.min_leaf}")
            continue
        for child in (node.left, node.right):
            if not 0 <= child < n:
                raise MalformedModel(f"node {i} child index {child} out of range")
            if child in parents:
                raise MalformedModel(f"node {child} has two parents")
            parents[child] = i
        if node.left == node.right:
            raise MalformedModel(f"node {i} children must be distinct")
        pred = node.predicate
        assert pred is not None
        if not 0 <= pred.feature_index < len(tree.schema.features):
            raise MalformedModel(f"node {i} feature index out of range")
        spec = tree.schema.features[pred.feature_index]
        if pred.kind == "numeric_le":
            if spec.kind is not FeatureKind.NUMERIC or pred.threshold is None \
                    or not math.isfinite(pred.threshold):
                raise MalformedModel(f"node {i} has an invalid numeric predicate")
        elif pred.kind == "categorical_in":
            vocab = set(spec.vocabulary or ())
            cats = set(pred.categories or ())
            if spec.kind is not FeatureKind.CATEGORICAL or not cats \
                    or not cats < vocab:
                raise MalformedModel(
                    f"node {i} categorical subset must be a non-empty proper subset")
        elif pred.kind == "boolean_is":
            if spec.kind is not FeatureKind.BOOLEAN or pred.value is None:
                raise MalformedModel(f"node {i} has an invalid boolean predicate")
        else:
            raise MalformedModel(f"node {i} has unknown predicate kind {pred.kind!r}")
    if tree.root in parents:
        raise MalformedModel("root has a parent")
    for i in range(n):
        if i != tree.root and i not in parents:
            raise MalformedModel(f"node {i} is unreachable (no parent)")
    if tree.depth() > tree.params.max_depth:
        raise MalformedModel("depth exceeds max_depth")


def _tree_from_json(obj: Mapping) -> DecisionTree:
    schema = Schema.from_json(obj["schema"])
    tree = DecisionTree(
        schema=schema,
        nodes=tuple(TreeNode.from_json(nd) for nd in obj["nodes"]),
        root=obj["root"],
        params=TrainParams.from_json(obj["params"]),
        feature_ranges={int(f): (lo, hi)
                        for f, (lo, hi) in obj["feature_ranges"].items()})
    if obj.get("schema_digest") != schema.digest:
        raise MalformedModel("schema digest mismatch")
    _validate_tree(tree)
    return tree


def deserialize_model(data: bytes) -> Model:
    """Parse a model document and revalidate every structural invariant."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except Exception as err:
        raise MalformedModel(f"not valid JSON: {err}") from err
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise MalformedModel(f"expected format {MODEL_FORMAT}")
    try:
        if doc["kind"] == "tree":
            return _tree_from_json(doc["tree"])
        if doc["kind"] == "forest":
            trees = tuple(_tree_from_json(t) for t in doc["trees"])
            if not trees:
                raise MalformedModel("forest must contain at least one tree")
            digests = {t.schema_digest for t in trees}
            if len(digests) != 1:
                raise MalformedModel("forest trees must share one schema digest")
            return Forest(trees=trees,
                          bootstrap_seeds=tuple(doc["bootstrap_seeds"]),
                          feature_subsample_count=doc["feature_subsample_count"],
                          bootstrap=doc.get("bootstrap", True))
    except MalformedModel:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise MalformedModel(f"missing or ill-typed field: {err}") from err
    raise MalformedModel(f"unknown model kind {doc.get('kind')!r}")


def training_accuracy(model: Model, dataset: Dataset) -> float:
    hits = sum(1 for row, lab in zip(dataset.rows, dataset.labels)
               if predict_with_trace(model, row).outcome == lab)
    return hits / dataset.m
