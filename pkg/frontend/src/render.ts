/**
 * Plain-DOM renderers. Each renderer replaces the contents of its container
 * and tags elements with data-* attributes so tests (and CSS) can address
 * them without framework machinery.
 */

import { layoutTree } from "./layout.js";
import type { ViewModel } from "./viewmodel.js";
import { inputsThroughNode } from "./viewmodel.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function clear(el: Element): void {
  while (el.firstChild) el.removeChild(el.firstChild);
}

export function renderBanner(el: HTMLElement, message: string | null): void {
  clear(el);
  el.dataset.visible = message ? "true" : "false";
  if (message) {
    const div = document.createElement("div");
    div.className = "banner";
    div.textContent = message;
    el.appendChild(div);
  }
}

export function renderVerdictBadge(el: HTMLElement, vm: ViewModel): void {
  clear(el);
  if (vm.outcome === null) {
    el.dataset.outcome = "";
    return;
  }
  const badge = document.createElement("span");
  badge.className = "badge";
  badge.dataset.role = "outcome-badge";
  badge.dataset.outcome = vm.outcome;
  badge.dataset.confidence = String(vm.confidence);
  badge.textContent = `${vm.outcome} (${Number(vm.confidence).toFixed(2)})`;
  el.dataset.outcome = vm.outcome;
  el.appendChild(badge);
}

export function renderTimeline(el: HTMLElement, vm: ViewModel): void {
  clear(el);
  for (const card of vm.timeline) {
    const div = document.createElement("div");
    div.className = "timeline-card";
    div.dataset.role = "timeline-card";
    div.dataset.index = String(card.index);
    div.dataset.actor = card.actor;
    div.dataset.kind = card.kind;

    const head = document.createElement("div");
    head.className = "card-head";
    head.textContent = `${card.index}. [${card.actor}] ${card.kind}`;
    const body = document.createElement("div");
    body.className = "card-body";
    body.textContent = card.summary;
    const digest = document.createElement("code");
    digest.className = "card-digest";
    digest.textContent = card.digest.slice(0, 12);

    div.append(head, body, digest);
    el.appendChild(div);
  }
}

export function renderFeaturePanel(
  el: HTMLElement,
  vm: ViewModel,
  onProbe: (modifications: Record<string, unknown>) => void,
): void {
  clear(el);
  const inputs = new Map<string, HTMLInputElement | HTMLSelectElement>();
  for (const field of vm.features) {
    const row = document.createElement("label");
    row.className = "feature-row";
    row.dataset.feature = field.name;
    const caption = document.createElement("span");
    caption.textContent = `${field.name} (${field.kind}) = ${String(field.currentValue)}`;
    row.appendChild(caption);

    let input: HTMLInputElement | HTMLSelectElement;
    if (field.kind === "categorical" || field.kind === "boolean") {
      input = document.createElement("select");
      const blank = document.createElement("option");
      blank.value = "";
      blank.textContent = "(keep)";
      input.appendChild(blank);
      const options = field.kind === "boolean" ? ["true", "false"] : field.vocabulary ?? [];
      for (const option of options) {
        const opt = document.createElement("option");
        opt.value = option;
        opt.textContent = option;
        input.appendChild(opt);
      }
    } else {
      input = document.createElement("input");
      input.type = "text";
      input.placeholder = "(keep)";
    }
    input.dataset.feature = field.name;
    inputs.set(field.name, input);
    row.appendChild(input);
    el.appendChild(row);
  }
  const button = document.createElement("button");
  button.dataset.role = "probe-button";
  button.textContent = "Probe what-if";
  button.addEventListener("click", () => {
    const modifications: Record<string, unknown> = {};
    for (const field of vm.features) {
      const raw = inputs.get(field.name)!.value.trim();
      if (raw === "") continue;
      if (field.kind === "numeric") modifications[field.name] = Number(raw);
      else if (field.kind === "boolean") modifications[field.name] = raw === "true";
      else modifications[field.name] = raw;
    }
    onProbe(modifications);
  });
  el.appendChild(button);
}

export function renderHistory(el: HTMLElement, vm: ViewModel): void {
  clear(el);
  el.dataset.length = String(vm.history.length);
  for (const entry of vm.history) {
    const div = document.createElement("div");
    div.className = "history-entry";
    div.dataset.role = "history-entry";
    div.dataset.index = String(entry.index);
    div.dataset.outcome = entry.outcome;
    div.dataset.divergence = entry.divergenceIndex === null ? "" : String(entry.divergenceIndex);
    div.dataset.serverLogLength = String(entry.serverLogLength);

    const mods = Object.entries(entry.modifications)
      .map(([k, v]) => `${k}=${String(v)}`)
      .join(", ");
    const text = document.createElement("span");
    text.textContent = mods ? `{${mods}} -> ${entry.outcome}` : `{} -> ${entry.outcome}`;
    div.appendChild(text);

    if (entry.noChange) {
      const badge = document.createElement("span");
      badge.className = "no-change";
      badge.dataset.role = "no-change-badge";
      badge.textContent = "no change";
      div.appendChild(badge);
    } else if (entry.divergenceIndex !== null) {
      const badge = document.createElement("span");
      badge.className = "diff-marker";
      badge.dataset.role = "divergence-marker";
      badge.textContent = `diverges at step ${entry.divergenceIndex}`;
      div.appendChild(badge);
    }
    el.appendChild(div);
  }
}

export function renderTree(el: HTMLElement, vm: ViewModel): void {
  clear(el);
  if (!vm.tree) {
    el.dataset.nodes = "0";
    return;
  }
  const layout = layoutTree(vm.tree);
  const highlighted = new Set(vm.highlightedPath);
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${layout.width} ${layout.height}`);
  svg.setAttribute("width", String(layout.width));
  svg.setAttribute("height", String(layout.height));

  const byId = new Map(layout.nodes.map((n) => [n.id, n]));
  for (const edge of layout.edges) {
    const from = byId.get(edge.from)!;
    const to = byId.get(edge.to)!;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(from.x));
    line.setAttribute("y1", String(from.y));
    line.setAttribute("x2", String(to.x));
    line.setAttribute("y2", String(to.y));
    line.dataset.branch = edge.branch;
    const active = highlighted.has(edge.from) && highlighted.has(edge.to);
    line.setAttribute("class", active ? "edge active" : "edge");
    svg.appendChild(line);
  }

  for (const laid of layout.nodes) {
    const group = document.createElementNS(SVG_NS, "g");
    group.dataset.role = "tree-node";
    group.dataset.nodeId = String(laid.id);
    group.dataset.nodeType = laid.node.type;
    group.dataset.highlighted = highlighted.has(laid.id) ? "true" : "false";
    group.setAttribute(
      "class",
      `node ${laid.node.type}${highlighted.has(laid.id) ? " active" : ""}`,
    );
    group.setAttribute("transform", `translate(${laid.x}, ${laid.y})`);

    const shape = document.createElementNS(SVG_NS, laid.node.type === "leaf" ? "rect" : "circle");
    if (laid.node.type === "leaf") {
      shape.setAttribute("x", "-40");
      shape.setAttribute("y", "-14");
      shape.setAttribute("width", "80");
      shape.setAttribute("height", "28");
    } else {
      shape.setAttribute("r", "16");
    }
    const text = document.createElementNS(SVG_NS, "text");
    text.setAttribute("dy", laid.node.type === "leaf" ? "4" : "-22");
    text.setAttribute("text-anchor", "middle");
    text.textContent = laid.label;

    group.append(shape, text);
    group.addEventListener("click", () => {
      const labels = inputsThroughNode(vm, laid.id);
      const detail = el.ownerDocument.querySelector<HTMLElement>("[data-role=node-detail]");
      if (detail) {
        detail.dataset.nodeId = String(laid.id);
        detail.textContent = labels.length
          ? `node ${laid.id}: reached by ${labels.join(", ")}`
          : `node ${laid.id}: no loaded input reaches it`;
      }
    });
    svg.appendChild(group);
  }
  el.dataset.nodes = String(layout.nodes.length);
  el.appendChild(svg);
}

export function renderAll(
  root: HTMLElement,
  vm: ViewModel | null,
  error: string | null,
  onProbe: (modifications: Record<string, unknown>) => void,
): void {
  const banner = root.querySelector<HTMLElement>("[data-role=banner]")!;
  const badge = root.querySelector<HTMLElement>("[data-role=verdict]")!;
  const timeline = root.querySelector<HTMLElement>("[data-role=timeline]")!;
  const features = root.querySelector<HTMLElement>("[data-role=features]")!;
  const history = root.querySelector<HTMLElement>("[data-role=history]")!;
  const tree = root.querySelector<HTMLElement>("[data-role=tree]")!;

  renderBanner(banner, error);
  if (vm === null) {
    for (const el of [badge, timeline, features, history, tree]) clear(el);
    tree.dataset.nodes = "0";
    history.dataset.length = "0";
    return;
  }
  renderVerdictBadge(badge, vm);
  renderTimeline(timeline, vm);
  renderFeaturePanel(features, vm, onProbe);
  renderHistory(history, vm);
  renderTree(tree, vm);
}
