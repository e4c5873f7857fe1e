"""REINFORCE training for the learned dispatch policy: a softmax-linear map
from belief-state features to the four dispatch actions, with admissibility
masking, a moving-average baseline, and a curriculum schedule over synthetic
episode distributions. The gradient is analytic (no autodiff) and checked
against finite differences in the tests.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import BeliefState, EngineError, EventKind
from .orchestrator import (
    ACTION_ORDER,
    Budget,
    EpisodeConfig,
    EpisodeTranscript,
    LearnedPolicy,
    latest_llm_answer,
    latest_verdict,
    run_episode,
)
from .perception import RawRecord

FEATURE_SPEC_VERSION = "state-features/1"
N_ACTIONS = len(ACTION_ORDER)  # [CallTree, CallLLM, CallTool, Finalize]
N_FEATURES = 7
BASELINE_BETA = 0.05


class DegenerateMask(EngineError):
    pass


class NonFiniteGradient(EngineError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    """Weight matrix W (actions x state features) of the softmax-linear policy."""
    weights: np.ndarray
    feature_spec_version: str = FEATURE_SPEC_VERSION

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (N_ACTIONS, N_FEATURES):
            raise EngineError(f"weights must be {N_ACTIONS}x{N_FEATURES}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise EngineError("weights must be finite")
        object.__setattr__(self, "weights", w)

    @staticmethod
    def zeros() -> "PolicyParams":
        return PolicyParams(np.zeros((N_ACTIONS, N_FEATURES)))

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(),
                "feature_spec_version": self.feature_spec_version}

    @staticmethod
    def from_json(obj: Mapping) -> "PolicyParams":
        return PolicyParams(np.asarray(obj["weights"], dtype=float),
                            obj.get("feature_spec_version", FEATURE_SPEC_VERSION))


def featurize_state(belief: BeliefState, budget: Budget) -> np.ndarray:
    """[has_tree_verdict, tree_confidence, has_llm_answer, agreement,
    tool_calls_used/max, steps_used/max, bias]; absent quantities are 0 and
    every entry lies in [0, 1]."""
    verdict = latest_verdict(belief)
    answer = latest_llm_answer(belief)
    tool_calls = len(belief.events_of(EventKind.TOOL_RESULT))
    steps = len(belief.events)
    agreement = (verdict is not None and answer is not None
                 and verdict.outcome == answer.label)
    return np.array([
        1.0 if verdict is not None else 0.0,
        verdict.confidence if verdict is not None else 0.0,
        1.0 if answer is not None else 0.0,
        1.0 if agreement else 0.0,
        min(1.0, tool_calls / budget.max_tool_calls),
        min(1.0, steps / budget.max_steps),
        1.0,
    ])


def action_distribution(params: PolicyParams, features: Sequence[float],
                        mask: Sequence[bool] | None = None) -> np.ndarray:
    """Masked softmax of W.s: inadmissible actions get probability zero and
    the rest renormalize."""
    s = np.asarray(features, dtype=float)
    scores = params.weights @ s
    use = np.array([True] * N_ACTIONS if mask is None else list(mask))
    if not use.any():
        raise DegenerateMask("every action is masked")
    z = np.where(use, scores, -np.inf)
    z = z - z[use].max()
    exp = np.where(use, np.exp(z), 0.0)
    return exp / exp.sum()


def log_prob(params: PolicyParams, features: Sequence[float], action: int,
             mask: Sequence[bool] | None = None) -> float:
    return float(np.log(action_distribution(params, features, mask)[action]))


def grad_log_prob(params: PolicyParams, features: Sequence[float], action: int,
                  mask: Sequence[bool] | None = None) -> np.ndarray:
    """Analytic d/dW of log pi(action | features): (onehot - pi) outer s.
    Masked actions have zero probability, so their rows vanish."""
    s = np.asarray(features, dtype=float)
    probs = action_distribution(params, features, mask)
    onehot = np.zeros(N_ACTIONS)
    onehot[action] = 1.0
    return np.outer(onehot - probs, s)


# ---------------------------------------------------------------------------
# Rewards


@dataclass(frozen=True)
class RewardSpec:
    """Sparse terminal reward: a correctness bonus minus per-step and
    per-tool-call penalties."""
    correct_bonus: float = 1.0
    lambda_step: float = 0.01
    mu_tool: float = 0.05

    def __post_init__(self) -> None:
        if self.lambda_step < 0 or self.mu_tool < 0:
            raise EngineError("penalty coefficients must be >= 0")

    def to_json(self) -> dict:
        return {"correct_bonus": self.correct_bonus,
                "lambda_step": self.lambda_step, "mu_tool": self.mu_tool}

    @staticmethod
    def from_json(obj: Mapping) -> "RewardSpec":
        return RewardSpec(obj.get("correct_bonus", 1.0), obj["lambda_step"],
                          obj["mu_tool"])


def episode_return(transcript: EpisodeTranscript, spec: RewardSpec, truth: str) -> float:
    """R = bonus * 1[answer == truth] - lambda*steps - mu*tool_calls; episodes
    that exhausted their budget score only the penalties."""
    bonus = spec.correct_bonus if transcript.final_answer == truth else 0.0
    return (bonus
            - spec.lambda_step * transcript.counters["steps"]
            - spec.mu_tool * transcript.counters["tool_calls"])


# ---------------------------------------------------------------------------
# REINFORCE update


@dataclass(frozen=True)
class EpisodeSample:
    """One sampled episode: the (features, action, mask) decision log plus its
    terminal return."""
    steps: tuple[tuple[tuple[float, ...], int, tuple[bool, ...]], ...]
    ret: float


def reinforce_update(params: PolicyParams, batch: Sequence[EpisodeSample],
                     learning_rate: float, baseline: float,
                     beta: float = BASELINE_BETA) -> tuple[PolicyParams, float]:
    """W' = W + lr * sum over episodes and steps of grad log pi * (R - b);
    then b' = (1-beta)*b + beta*mean(R)."""
    if not batch:
        raise EngineError("reinforce_update requires a non-empty batch")
    grad = np.zeros_like(params.weights)
    for sample in batch:
        advantage = sample.ret - baseline
        for features, action, mask in sample.steps:
            grad += grad_log_prob(params, features, action, mask) * advantage
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("policy gradient contains non-finite entries")
    new_params = PolicyParams(params.weights + learning_rate * grad,
                              params.feature_spec_version)
    mean_ret = sum(s.ret for s in batch) / len(batch)
    new_baseline = (1.0 - beta) * baseline + beta * mean_ret
    return new_params, new_baseline


# ---------------------------------------------------------------------------
# Curriculum training


@dataclass(frozen=True)
class CurriculumStage:
    index: int
    episodes: int
    concept_depth: int = 1
    required_tool_calls: int = 0

    def difficulty(self) -> tuple[int, int]:
        return (self.concept_depth, self.required_tool_calls)

    def to_json(self) -> dict:
        return {"index": self.index, "episodes": self.episodes,
                "concept_depth": self.concept_depth,
                "required_tool_calls": self.required_tool_calls}

    @staticmethod
    def from_json(obj: Mapping) -> "CurriculumStage":
        return CurriculumStage(obj["index"], obj["episodes"],
                               obj.get("concept_depth", 1),
                               obj.get("required_tool_calls", 0))


# A task generator maps (stage, episode_index, rng) to one labeled episode:
# the raw record, its ground-truth answer, and the episode config to run
# (the trainer swaps in the learned policy and per-episode seed).
TaskGenerator = Callable[[CurriculumStage, int, random.Random],
                         tuple[RawRecord, str, EpisodeConfig]]


@dataclass(frozen=True)
class CurvePoint:
    stage: int
    episode: int
    mean_return: float


def train_policy(task_generator: TaskGenerator, stages: Sequence[CurriculumStage],
                 reward_spec: RewardSpec, seed: int, *,
                 learning_rate: float = 0.1,
                 init_params: PolicyParams | None = None,
                 curve_window: int = 50,
                 ) -> tuple[PolicyParams, list[CurvePoint]]:
    """Iterate the curriculum stages in order, sampling one episode at a time
    through run_episode with the learned policy in sampling mode and applying
    a REINFORCE update per episode. Deterministic given the seed."""
    diffs = [s.difficulty() for s in stages]
    if any(b < a for a, b in zip(diffs, diffs[1:])):
        raise EngineError("curriculum difficulty must be nondecreasing")

    params = init_params or PolicyParams.zeros()
    baseline = 0.0
    curve: list[CurvePoint] = []
    window: list[float] = []
    for stage in stages:
        for ep in range(stage.episodes):
            ep_seed = (seed * 1_000_003 + stage.index) * 1_000_003 + ep
            recorder: list = []
            policy = LearnedPolicy(params=params, sample=True,
                                   rng=random.Random(ep_seed), recorder=recorder)
            record, truth, config = task_generator(stage, ep, random.Random(ep_seed + 1))
            config = replace(config, policy=policy, seed=ep_seed)
            transcript = run_episode(record, config)
            ret = episode_return(transcript, reward_spec, truth)
            sample = EpisodeSample(
                steps=tuple((tuple(f), a, tuple(m)) for f, a, m in recorder),
                ret=ret)
            params, baseline = reinforce_update(params, [sample], learning_rate,
                                                baseline)
            window.append(ret)
            if len(window) > curve_window:
                window.pop(0)
            curve.append(CurvePoint(stage.index, ep, sum(window) / len(window)))
    return params, curve


def curve_to_csv(curve: Iterable[CurvePoint]) -> str:
    lines = ["stage,episode,mean_return"]
    lines += [f"{p.stage},{p.episode},{p.mean_return!r}" for p in curve]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoints


def checkpoint_to_json(params: PolicyParams, metadata: Mapping[str, Any] | None = None) -> dict:
    return {"format": "oracle-policy/1", "params": params.to_json(),
            "metadata": dict(metadata or {})}


def checkpoint_from_json(obj: Mapping) -> PolicyParams:
    if obj.get("format") != "oracle-policy/1":
        raise EngineError("expected checkpoint format oracle-policy/1")
    return PolicyParams.from_json(obj["params"])
