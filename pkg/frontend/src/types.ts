/**
 * Wire types for the /v1 API. Field names mirror the server's canonical JSON
 * exactly; the UI copies values through without recomputing any of them.
 */

export type Branch = "left" | "right";

export interface PredicateDoc {
  feature_index: number;
  kind: "numeric_le" | "categorical_in" | "boolean_is";
  threshold: number | null;
  categories: string[] | null;
  value: boolean | null;
}

export interface TraceStepDoc {
  node_id: number;
  predicate: PredicateDoc;
  feature_name: string;
  observed: unknown;
  branch: Branch;
}

export interface RuleTraceDoc {
  kind: "tree";
  steps: TraceStepDoc[];
  leaf_id: number;
}

export interface ForestTraceDoc {
  kind: "forest";
  per_tree: RuleTraceDoc[];
  tally: Record<string, number>;
}

export type TraceDoc = RuleTraceDoc | ForestTraceDoc;

export interface VerdictDoc {
  outcome: string;
  confidence: number;
  trace: TraceDoc;
}

export interface BeliefEventDoc {
  kind: string;
  payload: Record<string, unknown>;
}

export interface ProvenanceDoc {
  step_index: number;
  actor: string;
  action: { kind: string; [key: string]: unknown };
  payload_digest: string;
  timestamp: number;
}

export interface TranscriptDoc {
  format: string;
  belief: {
    input: { values: unknown[]; text_abstraction: string | null; source_id: string };
    events: BeliefEventDoc[];
    provenance: ProvenanceDoc[];
  };
  actions: unknown[];
  final_answer: string | null;
  counters: Record<string, number>;
  terminal_status: string;
  seed: number;
  error_index: number | null;
}

export interface FeatureSpecDoc {
  name: string;
  kind: "numeric" | "categorical" | "boolean";
  vocabulary: string[] | null;
}

export interface SchemaDoc {
  features: FeatureSpecDoc[];
  label: { name: string; vocabulary: string[] };
}

export interface TreeNodeDoc {
  type: "internal" | "leaf";
  predicate?: PredicateDoc;
  left?: number;
  right?: number;
  distribution?: Record<string, number>;
  n_train?: number;
}

export interface TreeDoc {
  schema: SchemaDoc;
  schema_digest: string;
  params: Record<string, unknown>;
  root: number;
  nodes: TreeNodeDoc[];
  feature_ranges: Record<string, [number, number]>;
}

export interface ModelDoc {
  format: string;
  kind: "tree" | "forest";
  tree?: TreeDoc;
  trees?: TreeDoc[];
}

export interface ModelEntry {
  model_id: string;
  kind: string;
  doc?: ModelDoc;
}

export interface TraceDiffDoc {
  divergence_index: number | null;
  before_tail: TraceStepDoc[];
  after_tail: TraceStepDoc[];
}

export interface WhatIfResultDoc {
  before: VerdictDoc;
  after: VerdictDoc;
  changed_steps: TraceDiffDoc | { per_tree: TraceDiffDoc[] };
  modifications: Record<string, unknown>;
}

export interface WhatIfResponse {
  episode_id: string;
  result: WhatIfResultDoc;
  verbalization: string;
  whatif_log_length: number;
  transcript_digest: string;
}

export interface QueryResponse {
  episode_id: string;
  answer: string | null;
  terminal_status: string;
  verdict: VerdictDoc | null;
  verbalization: string | null;
  transcript: { counters: Record<string, number>; event_count: number; seed: number };
}

export interface ApiErrorBody {
  error: { kind: string; message: string };
}
