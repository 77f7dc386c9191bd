import type { JustificationNode } from "./types.js";

const SUMMARY_FIELDS: Record<string, string[]> = {
  FindingObserved: ["finding_key", "severity"],
  ReportIngested: ["pipeline_run_id", "tool_name"],
  AssessmentMade: ["verdict", "author"],
  IssueExists: ["canonical"],
  IssueMember: ["issue", "finding_key"],
  ValidationStatus: ["issue", "status"],
  PriorityAssigned: ["score", "rank"],
  DuplicateOf: ["a", "b"],
};

function label(node: JustificationNode): string {
  const fields = SUMMARY_FIELDS[node.belief.kind] ?? [];
  const summary = fields
    .map((f) => `${f}=${String(node.belief.payload[f])}`)
    .join(" ");
  return `${node.belief.kind} ${node.belief.id.slice(0, 8)} ${summary}`.trim();
}

// Collapsible justification tree down to explicit leaves; retracted nodes get
// a strike-through class, leaves show their outside source.
export function renderTree(node: JustificationNode, depth = 0): HTMLElement {
  const details = document.createElement("details");
  details.className = "just-node";
  details.dataset.depth = String(depth);
  details.dataset.kind = node.belief.kind;
  details.open = depth < 2;
  const summary = document.createElement("summary");
  summary.textContent = label(node);
  if (node.belief.status !== "active") {
    summary.classList.add("retracted");
  }
  details.appendChild(summary);
  if (node.rule_id) {
    const rule = document.createElement("div");
    rule.className = "rule-ref";
    rule.textContent = `derived by ${node.rule_id} v${node.rule_version}`;
    details.appendChild(rule);
  }
  if (node.source) {
    const source = document.createElement("div");
    source.className = "source-ref";
    source.textContent = `from ${node.source.source_kind}:${node.source.source_id}`;
    details.appendChild(source);
  }
  for (const child of node.children) {
    details.appendChild(renderTree(child, depth + 1));
  }
  return details;
}

export function treeDepth(node: JustificationNode): number {
  if (!node.children.length) return 1;
  return 1 + Math.max(...node.children.map(treeDepth));
}
