"""The three-arm ablation on a synthetic entailment suite: an LLM baseline
with a 30% hallucination rate, post-hoc trace checking, and the fully
orchestrated pipeline, all on byte-identical instances.

Run: python3 demos/05_ablation_benchmark.py
"""

from treeoracle.bench import (
    gen_entailment_suite,
    make_arm_configs,
    run_ablation,
    scripted_llm_for_suite,
)

suite = gen_entailment_suite(n=300, depth_d=3, k=6, seed=42)
print(f"generated {len(suite.instances)} entailment instances "
      f"over {len(suite.schema.features)} boolean features")
print(f"clean training split: {len(suite.train_records)} rows (full truth table)\n")

backend = scripted_llm_for_suite(suite, error_rate=0.3, seed=42)
report = run_ablation(suite, make_arm_configs(), backend, seed=42)

print(report.render_text())
for arm, metrics in sorted(report.arms.items()):
    print(f"{arm:15s} accuracy={metrics.accuracy:.3f}"
          f"  mean_steps={metrics.mean_steps:.2f}"
          f"  mean_trace_len={metrics.mean_trace_length:.2f}")
