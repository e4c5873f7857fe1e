"""REINFORCE-train the dispatch policy on the degenerate routing bandit: the
tree always answers correctly, the scripted LLM never does, so the learned
policy should route to the tree almost surely.

Run: python3 demos/04_policy_training.py
"""

from treeoracle import Budget, BeliefState, StructuredInput
from treeoracle.bench import make_routing_task_generator
from treeoracle.policy_learning import (
    CurriculumStage,
    RewardSpec,
    action_distribution,
    featurize_state,
    train_policy,
)

stages = [
    CurriculumStage(index=0, episodes=200, concept_depth=1),
    CurriculumStage(index=1, episodes=300, concept_depth=2),
]
generator = make_routing_task_generator(k=3, llm_error_rate=1.0)

params, curve = train_policy(generator, stages, RewardSpec(), seed=0,
                             learning_rate=0.1)

for point in curve[::50]:
    print(f"stage {point.stage} episode {point.episode:3d}"
          f"  mean return {point.mean_return:+.3f}")

budget = Budget(max_steps=2, max_tool_calls=1, max_llm_calls=1)
fresh = BeliefState(input=StructuredInput((True, False, True), None, "probe"))
probs = action_distribution(params, featurize_state(fresh, budget),
                            mask=[True, True, False, False])
print(f"\nafter training, P(CallTree | fresh state) = {probs[0]:.4f}")
print(f"                P(CallLLM  | fresh state) = {probs[1]:.4f}")
