/**
 * View state assembled from API payloads. Every displayed number (outcome,
 * confidence, divergence index, log length) is copied verbatim from the
 * server's fields; nothing is recomputed client-side. The what-if history is
 * append-only and mirrors the server's side log.
 */

import type {
  BeliefEventDoc,
  ModelDoc,
  RuleTraceDoc,
  TraceDoc,
  TranscriptDoc,
  TreeDoc,
  VerdictDoc,
  WhatIfResponse,
} from "./types.js";

export interface TimelineCard {
  index: number;
  actor: string;
  kind: string;
  summary: string;
  digest: string;
}

export interface FeatureField {
  name: string;
  kind: string;
  vocabulary: string[] | null;
  currentValue: unknown;
}

export interface WhatIfEntry {
  index: number;
  modifications: Record<string, unknown>;
  outcome: string;
  confidence: number;
  divergenceIndex: number | null;
  noChange: boolean;
  serverLogLength: number;
}

export interface KnownInput {
  label: string;
  pathNodeIds: number[];
}

export interface ViewModel {
  episodeId: string;
  terminalStatus: string;
  answer: string | null;
  outcome: string | null;
  confidence: number | null;
  highlightedPath: number[];
  timeline: TimelineCard[];
  features: FeatureField[];
  history: WhatIfEntry[];
  knownInputs: KnownInput[];
  tree: TreeDoc | null;
}

function eventSummary(event: BeliefEventDoc): string {
  const p = event.payload as Record<string, any>;
  switch (event.kind) {
    case "tree_verdict":
      return `outcome ${p.outcome} (confidence ${Number(p.confidence).toFixed(2)})`;
    case "neural_response":
      return p.parse_status === "ok"
        ? `move ${p.parsed.move}`
        : `malformed: ${p.parse_reason}`;
    case "tool_result":
      return p.status === "ok"
        ? `${p.query_id} ok`
        : `${p.query_id} error(${p.error_kind})`;
    case "conflict_resolution":
      return `winner ${p.winner}, answer ${p.answer}`;
    case "finalization":
      return `answer ${p.answer} (winner ${p.winner})`;
    default:
      return event.kind;
  }
}

export function tracePath(trace: TraceDoc): number[] {
  const rule: RuleTraceDoc | undefined =
    trace.kind === "tree" ? trace : trace.per_tree[0];
  if (!rule) return [];
  return [...rule.steps.map((s) => s.node_id), rule.leaf_id];
}

function latestVerdict(transcript: TranscriptDoc): VerdictDoc | null {
  for (let i = transcript.belief.events.length - 1; i >= 0; i--) {
    const event = transcript.belief.events[i]!;
    if (event.kind === "tree_verdict") {
      return event.payload as unknown as VerdictDoc;
    }
  }
  return null;
}

function treeOf(model: ModelDoc | null): TreeDoc | null {
  if (!model) return null;
  if (model.kind === "tree" && model.tree) return model.tree;
  if (model.kind === "forest" && model.trees?.length) return model.trees[0]!;
  return null;
}

export function buildViewModel(
  episodeId: string,
  transcript: TranscriptDoc,
  model: ModelDoc | null,
): ViewModel {
  const timeline = transcript.belief.events.map((event, i) => {
    const record = transcript.belief.provenance[i]!;
    return {
      index: i,
      actor: record.actor,
      kind: event.kind,
      summary: eventSummary(event),
      digest: record.payload_digest,
    };
  });
  const verdict = latestVerdict(transcript);
  const tree = treeOf(model);
  const features: FeatureField[] = (tree?.schema.features ?? []).map((spec, i) => ({
    name: spec.name,
    kind: spec.kind,
    vocabulary: spec.vocabulary,
    currentValue: transcript.belief.input.values[i],
  }));
  const knownInputs: KnownInput[] = verdict
    ? [{ label: "episode input", pathNodeIds: tracePath(verdict.trace) }]
    : [];
  return {
    episodeId,
    terminalStatus: transcript.terminal_status,
    answer: transcript.final_answer,
    outcome: verdict ? verdict.outcome : null,
    confidence: verdict ? verdict.confidence : null,
    highlightedPath: verdict ? tracePath(verdict.trace) : [],
    timeline,
    features,
    history: [],
    knownInputs,
    tree,
  };
}

/** Fold one what-if response into the view: append to the history (never
 * rewriting prior entries) and re-highlight the after-trace. */
export function applyWhatIf(vm: ViewModel, response: WhatIfResponse): ViewModel {
  const result = response.result;
  const diff = result.changed_steps as { divergence_index?: number | null };
  const divergence = diff.divergence_index ?? null;
  const entry: WhatIfEntry = {
    index: vm.history.length,
    modifications: result.modifications,
    outcome: result.after.outcome,
    confidence: result.after.confidence,
    divergenceIndex: divergence,
    noChange:
      divergence === null && result.after.outcome === result.before.outcome,
    serverLogLength: response.whatif_log_length,
  };
  const probeLabel = `what-if #${entry.index + 1}`;
  return {
    ...vm,
    outcome: result.after.outcome,
    confidence: result.after.confidence,
    highlightedPath: tracePath(result.after.trace),
    history: [...vm.history, entry],
    knownInputs: [
      ...vm.knownInputs,
      { label: probeLabel, pathNodeIds: tracePath(result.after.trace) },
    ],
  };
}

/** Inputs (episode input and probes) whose server-reported trace passes
 * through the given node; powers the node-click inspector. */
export function inputsThroughNode(vm: ViewModel, nodeId: number): string[] {
  return vm.knownInputs
    .filter((input) => input.pathNodeIds.includes(nodeId))
    .map((input) => input.label);
}
