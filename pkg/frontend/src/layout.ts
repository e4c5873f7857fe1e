/**
 * Deterministic tidy layout for the node-link tree view: leaves take
 * consecutive horizontal slots in left-to-right order, internal nodes sit at
 * the midpoint of their children, depth maps to rows. Purely a function of
 * the model document, so two renders of the same model are identical.
 */

import type { TreeDoc, TreeNodeDoc } from "./types.js";

export interface LaidOutNode {
  id: number;
  node: TreeNodeDoc;
  x: number;
  y: number;
  label: string;
}

export interface LaidOutEdge {
  from: number;
  to: number;
  branch: "left" | "right";
}

export interface TreeLayout {
  nodes: LaidOutNode[];
  edges: LaidOutEdge[];
  width: number;
  height: number;
}

const X_STEP = 120;
const Y_STEP = 90;

function nodeLabel(tree: TreeDoc, node: TreeNodeDoc): string {
  if (node.type === "leaf") {
    const dist = node.distribution ?? {};
    const parts = Object.keys(dist)
      .sort()
      .map((k) => `${k}: ${(dist[k]! * 100).toFixed(0)}%`);
    return parts.join(", ");
  }
  const pred = node.predicate!;
  const feature = tree.schema.features[pred.feature_index]?.name ?? `f${pred.feature_index}`;
  if (pred.kind === "numeric_le") return `${feature} <= ${pred.threshold}`;
  if (pred.kind === "categorical_in") return `${feature} in {${(pred.categories ?? []).join(", ")}}`;
  return `${feature} is ${pred.value}`;
}

export function layoutTree(tree: TreeDoc): TreeLayout {
  const xs = new Map<number, number>();
  const depths = new Map<number, number>();
  const edges: LaidOutEdge[] = [];
  let nextSlot = 0;
  let maxDepth = 0;

  const place = (id: number, depth: number): number => {
    const node = tree.nodes[id]!;
    depths.set(id, depth);
    maxDepth = Math.max(maxDepth, depth);
    if (node.type === "leaf") {
      const x = nextSlot++;
      xs.set(id, x);
      return x;
    }
    edges.push({ from: id, to: node.left!, branch: "left" });
    edges.push({ from: id, to: node.right!, branch: "right" });
    const lx = place(node.left!, depth + 1);
    const rx = place(node.right!, depth + 1);
    const x = (lx + rx) / 2;
    xs.set(id, x);
    return x;
  };
  place(tree.root, 0);

  const nodes: LaidOutNode[] = [];
  for (const [id, slot] of xs) {
    nodes.push({
      id,
      node: tree.nodes[id]!,
      x: 40 + slot * X_STEP,
      y: 30 + depths.get(id)! * Y_STEP,
      label: nodeLabel(tree, tree.nodes[id]!),
    });
  }
  nodes.sort((a, b) => a.id - b.id);
  return {
    nodes,
    edges,
    width: 80 + Math.max(1, nextSlot - 1) * X_STEP,
    height: 90 + maxDepth * Y_STEP,
  };
}
