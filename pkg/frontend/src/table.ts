import type { IssueView } from "./types.js";

export interface TableHandlers {
  onSelect: (issue: IssueView) => void;
}

const COLUMNS = ["Rank", "Severity", "Status", "Score", "Reports", "Title"];

// Every cell is a verbatim server value (occurrence count is the length of
// the reports list the server sent); nothing is recomputed client-side.
export function renderIssueTable(views: IssueView[], handlers: TableHandlers): HTMLElement {
  if (views.length === 0) {
    const empty = document.createElement("div");
    empty.className = "empty-state";
    empty.textContent = "No issues in the knowledge base yet. Ingest a report to get started.";
    return empty;
  }
  const table = document.createElement("table");
  table.className = "issues";
  const head = table.createTHead().insertRow();
  for (const column of COLUMNS) {
    const th = document.createElement("th");
    th.textContent = column;
    head.appendChild(th);
  }
  const body = table.createTBody();
  for (const view of views) {
    const row = body.insertRow();
    row.className = "issue-row";
    row.dataset.issueKey = view.issue_key;
    if (view.rank !== null) row.dataset.rank = String(view.rank);
    row.dataset.status = view.status;
    row.insertCell().textContent = view.rank === null ? "—" : String(view.rank);
    const severity = row.insertCell();
    severity.textContent = view.max_severity ?? "—";
    severity.className = `severity severity-${view.max_severity ?? "none"}`;
    row.insertCell().textContent = view.status;
    row.insertCell().textContent = view.score === null ? "—" : view.score.toFixed(2);
    row.insertCell().textContent = String(view.observed_in_reports.length);
    row.insertCell().textContent = view.title;
    row.addEventListener("click", () => handlers.onSelect(view));
  }
  return table;
}
