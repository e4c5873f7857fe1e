"""Command-line surface: train, query, whatif, bench, train-policy, serve.

Exit codes: 0 on success, 1 on domain errors, 2 on usage errors. Everything
random sits behind an explicit --seed flag so runs are reproducible and
byte-identical with the HTTP surface.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agent import ScriptedBackend, verbalize_verdict
from .core import EngineError, EventKind, Schema
from .orchestrator import export_trace
from .perception import (
    RawRecord,
    record_from_json_object,
    records_from_csv,
    records_from_json_lines,
)
from .service import ServiceConfig, build_episode_config, create_app
from .tree import (
    Dataset,
    TrainParams,
    deserialize_model,
    serialize_model,
    train_cart,
    train_forest,
    training_accuracy,
    what_if,
)


def _load_schema(path: str) -> Schema:
    return Schema.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _load_records(path: str) -> list[RawRecord]:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".csv"):
        return records_from_csv(text)
    return records_from_json_lines(text)


def _load_training_data(path: str, schema: Schema) -> Dataset:
    from .perception import normalize
    label_name = schema.label.name
    rows = []
    labels = []
    for record in _load_records(path):
        values = dict(record.values)
        if label_name not in values or values[label_name] is None:
            raise EngineError(f"row {record.source_id!r} lacks label {label_name!r}")
        label = schema.validate_label(str(values.pop(label_name)))
        rows.append(normalize(RawRecord(values, record.text, record.source_id), schema))
        labels.append(label)
    return Dataset(schema, tuple(rows), tuple(labels))


def cmd_train(args: argparse.Namespace) -> int:
    schema = _load_schema(args.schema)
    dataset = _load_training_data(args.data, schema)
    params = TrainParams(criterion=args.criterion, max_depth=args.max_depth,
                         min_leaf=args.min_leaf, min_split_gain=args.min_gain,
                         rng_seed=args.seed)
    if args.forest:
        model = train_forest(dataset, args.forest, params,
                             args.feature_subsample, args.seed,
                             bootstrap=not args.no_bootstrap)
        depth = max(t.depth() for t in model.trees)
        leaves = sum(t.n_leaves for t in model.trees)
    else:
        model = train_cart(dataset, params)
        depth = model.depth()
        leaves = model.n_leaves
    Path(args.out).write_bytes(serialize_model(model))
    summary = {"model_path": args.out, "depth": depth, "leaf_count": leaves,
               "training_accuracy": training_accuracy(model, dataset),
               "m": dataset.m, "k": dataset.k}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _load_record_file(path: str) -> RawRecord:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return record_from_json_object(obj)


def cmd_query(args: argparse.Namespace) -> int:
    from .orchestrator import run_episode
    overrides = {}
    if args.episode_config:
        overrides = json.loads(Path(args.episode_config).read_text(encoding="utf-8"))
    model_path = args.model or overrides.pop("model_path", None)
    if not model_path:
        raise EngineError("no model: pass --model or put model_path in the episode config")
    model = deserialize_model(Path(model_path).read_bytes())
    record = _load_record_file(args.record)
    overrides.pop("model_path", None)
    overrides["seed"] = args.seed
    default_backend = ScriptedBackend(
        rules=(), default="ANSWER: unknown | RATIONALE: no backend configured")
    config = build_episode_config(model, model.schema, overrides, default_backend)
    transcript = run_episode(record, config)
    print(f"status: {transcript.terminal_status}")
    print(f"answer: {transcript.final_answer}")
    verdict_event = transcript.belief.latest(EventKind.TREE_VERDICT)
    if verdict_event is not None:
        from .tree import SymbolicVerdict
        verdict = SymbolicVerdict.from_json(verdict_event.payload)
        print(verbalize_verdict(verdict, model.schema))
    if args.out:
        Path(args.out).write_bytes(export_trace(transcript, "json"))
    if args.text:
        sys.stdout.write(export_trace(transcript, "text").decode("utf-8"))
    return 0


def cmd_whatif(args: argparse.Namespace) -> int:
    model = deserialize_model(Path(args.model).read_bytes())
    record = _load_record_file(args.record)
    from .perception import normalize
    x = normalize(record, model.schema)
    modifications = {}
    for item in args.set or []:
        if "=" not in item:
            raise EngineError(f"--set expects feature=value, got {item!r}")
        name, raw = item.split("=", 1)
        modifications[name] = _parse_literal(raw)
    result = what_if(model, x, modifications)
    print(f"before: {result.before.outcome} "
          f"(confidence {result.before.confidence:.2f})")
    print(f"after:  {result.after.outcome} "
          f"(confidence {result.after.confidence:.2f})")
    diff = result.changed_steps
    if hasattr(diff, "divergence_index"):
        print(f"divergence index: {diff.divergence_index}")
    print(json.dumps(result.to_json(), sort_keys=True))
    return 0


def _parse_literal(raw: str):
    low = raw.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return float(raw)
    except ValueError:
        return raw


def cmd_bench(args: argparse.Namespace) -> int:
    from .bench import (
        gen_entailment_suite,
        instances_to_jsonl,
        make_arm_configs,
        run_ablation,
        scripted_llm_for_suite,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suite = gen_entailment_suite(args.n, args.depth, args.k, args.seed)
    backend = scripted_llm_for_suite(suite, args.epsilon, args.seed)
    report = run_ablation(suite, make_arm_configs(), backend, args.seed)
    (out_dir / "suite.jsonl").write_text(instances_to_jsonl(suite), encoding="utf-8")
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=2), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.render_text(), encoding="utf-8")
    print(report.render_text(), end="")
    return 0


def cmd_train_policy(args: argparse.Namespace) -> int:
    from .bench import make_routing_task_generator
    from .policy_learning import (
        CurriculumStage,
        RewardSpec,
        checkpoint_to_json,
        curve_to_csv,
        train_policy,
    )
    spec = json.loads(Path(args.curriculum).read_text(encoding="utf-8"))
    stages = [CurriculumStage.from_json(s) for s in spec["stages"]]
    reward = RewardSpec.from_json(spec.get("reward", {"lambda_step": 0.01,
                                                      "mu_tool": 0.05}))
    task = spec.get("task", {})
    generator = make_routing_task_generator(
        k=task.get("k", 3), depth=task.get("depth", 2),
        llm_error_rate=task.get("llm_error_rate", 1.0))
    params, curve = train_policy(generator, stages, reward, args.seed,
                                 learning_rate=args.lr)
    Path(args.out).write_text(
        json.dumps(checkpoint_to_json(params, {"seed": args.seed, "lr": args.lr}),
                   sort_keys=True, indent=2), encoding="utf-8")
    if args.curve:
        Path(args.curve).write_text(curve_to_csv(curve), encoding="utf-8")
    print(f"trained over {len(curve)} episodes; "
          f"final mean return {curve[-1].mean_return:.4f}" if curve else
          "no episodes configured")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn
    config = ServiceConfig()
    if args.config:
        config = ServiceConfig.from_json(
            json.loads(Path(args.config).read_text(encoding="utf-8")))
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeoracle")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a tree or forest from a labeled dataset")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True, help="CSV or JSON-lines with a label column")
    p.add_argument("--out", required=True)
    p.add_argument("--criterion", default="gini", choices=("gini", "entropy"))
    p.add_argument("--max-depth", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--min-gain", type=float, default=0.0)
    p.add_argument("--forest", type=int, default=0, help="train N bootstrap trees")
    p.add_argument("--feature-subsample", type=int, default=None)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="run one episode against a model")
    p.add_argument("--model", default=None,
                   help="model file (or set model_path in --episode-config)")
    p.add_argument("--record", required=True)
    p.add_argument("--episode-config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the transcript JSON here")
    p.add_argument("--text", action="store_true", help="print the text trace")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("whatif", help="probe feature modifications against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--set", action="append", metavar="feature=value")
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("bench", help="generate a synthetic suite and run the ablation")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-policy", help="REINFORCE-train the dispatch policy")
    p.add_argument("--curriculum", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--lr", type=float, default=0.1)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
