import { ApiClient, ApiError } from "./api.js";
import { renderIssueTable } from "./table.js";
import { renderToasts, RevisionToast, toastFromRevision } from "./toast.js";
import { renderTree, treeDepth } from "./tree.js";
import type { IssueFilters, IssueView, JustificationNode, Verdict } from "./types.js";

export interface AppConfig {
  author: string;
  requireRationaleForFalsePositive: boolean;
}

const DEFAULT_CONFIG: AppConfig = {
  author: "triage-ui",
  requireRationaleForFalsePositive: true,
};

interface DetailState {
  issue: IssueView;
  tree: JustificationNode | null;
  notFound: boolean;
}

export class TriageApp {
  issues: IssueView[] = [];
  stale = false;
  connectionError: string | null = null;
  actionError: string | null = null;
  detail: DetailState | null = null;
  toasts: RevisionToast[] = [];
  busy = false;
  filters: IssueFilters = {};
  readonly config: AppConfig;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    config: Partial<AppConfig> = {},
  ) {
    this.config = { ...DEFAULT_CONFIG, ...config };
  }

  async refresh(): Promise<void> {
    try {
      this.issues = await this.api.listIssues(this.filters);
      this.stale = false;
      this.connectionError = null;
    } catch (error) {
      // keep whatever we had, but say so
      this.stale = this.issues.length > 0;
      this.connectionError = error instanceof Error ? error.message : String(error);
    }
    this.render();
  }

  async selectIssue(view: IssueView): Promise<void> {
    // prefer the priority belief: its tree reaches down through status and
    // issue to the findings and their reports
    const rootBelief = view.priority_key ?? view.status_key ?? view.issue_key;
    try {
      const tree = await this.api.justification(rootBelief);
      this.detail = { issue: view, tree, notFound: false };
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        this.detail = { issue: view, tree: null, notFound: true };
      } else {
        this.connectionError = error instanceof Error ? error.message : String(error);
      }
    }
    this.render();
  }

  async submitAssessment(
    subject: string,
    verdict: Verdict,
    rationale: string,
    level?: string,
  ): Promise<void> {
    if (this.busy) return;
    if (
      verdict === "false_positive" &&
      this.config.requireRationaleForFalsePositive &&
      !rationale.trim()
    ) {
      this.actionError = "a rationale is required to mark a false positive";
      this.render();
      return;
    }
    this.busy = true;
    this.actionError = null;
    this.render();
    try {
      const response = await this.api.submitAssessment({
        subject,
        verdict,
        rationale,
        author: this.config.author,
        ...(level ? { level } : {}),
      });
      // exactly one toast per mutating response, from the server's report
      this.toasts.push(toastFromRevision(subject, response.revision));
      // and exactly one list re-fetch before actions are enabled again
      await this.refresh();
      if (this.detail) {
        const kept = this.issues.find(
          (v) => v.issue_key === this.detail?.issue.issue_key
            || v.members.some((m) => this.detail?.issue.members.includes(m)),
        );
        if (kept) {
          await this.selectIssue(kept);
        } else {
          this.detail = null;
        }
      }
    } catch (error) {
      if (error instanceof ApiError) {
        this.actionError = `${error.status} ${error.code}: ${error.detail}`;
      } else {
        this.actionError = error instanceof Error ? error.message : String(error);
      }
    } finally {
      this.busy = false;
      this.render();
    }
  }

  detailTreeDepth(): number {
    return this.detail?.tree ? treeDepth(this.detail.tree) : 0;
  }

  render(): void {
    this.root.replaceChildren();
    this.root.appendChild(this.renderBanner());
    const layout = document.createElement("div");
    layout.className = "layout";
    const listPane = document.createElement("section");
    listPane.className = "list-pane";
    if (this.stale) {
      const stale = document.createElement("div");
      stale.className = "stale-label";
      stale.textContent = "showing stale data (server unreachable)";
      listPane.appendChild(stale);
    }
    listPane.appendChild(this.renderFilters());
    listPane.appendChild(
      renderIssueTable(this.issues, { onSelect: (view) => void this.selectIssue(view) }),
    );
    layout.appendChild(listPane);
    layout.appendChild(this.renderDetail());
    this.root.appendChild(layout);
    this.root.appendChild(renderToasts(this.toasts));
  }

  private renderBanner(): HTMLElement {
    const banner = document.createElement("div");
    banner.className = "banner";
    if (this.connectionError) {
      banner.classList.add("banner-error");
      const text = document.createElement("span");
      text.textContent = `server unreachable: ${this.connectionError}`;
      const retry = document.createElement("button");
      retry.textContent = "retry";
      retry.className = "retry";
      retry.addEventListener("click", () => void this.refresh());
      banner.append(text, retry);
    }
    return banner;
  }

  private renderFilters(): HTMLElement {
    const bar = document.createElement("div");
    bar.className = "filters";
    const select = document.createElement("select");
    select.className = "status-filter";
    for (const value of ["", "unreviewed", "confirmed", "false_positive", "mitigated"]) {
      const option = document.createElement("option");
      option.value = value;
      option.textContent = value || "all statuses";
      if ((this.filters.status ?? "") === value) option.selected = true;
      select.appendChild(option);
    }
    select.addEventListener("change", () => {
      this.filters = select.value ? { ...this.filters, status: select.value } : {};
      void this.refresh();
    });
    bar.appendChild(select);
    return bar;
  }

  private renderDetail(): HTMLElement {
    const pane = document.createElement("section");
    pane.className = "detail-pane";
    if (!this.detail) {
      const hint = document.createElement("div");
      hint.className = "detail-hint";
      hint.textContent = "Select an issue to inspect its justification.";
      pane.appendChild(hint);
      return pane;
    }
    const { issue, tree, notFound } = this.detail;
    const title = document.createElement("h2");
    title.textContent = issue.title;
    pane.appendChild(title);

    const members = document.createElement("ul");
    members.className = "members";
    for (const member of issue.members) {
      const li = document.createElement("li");
      li.textContent = member;
      members.appendChild(li);
    }
    pane.appendChild(members);
    const reports = document.createElement("div");
    reports.className = "reports";
    reports.textContent = `observed in: ${issue.observed_in_reports.join(", ")}`;
    pane.appendChild(reports);

    pane.appendChild(this.renderActions(issue));
    if (this.actionError) {
      const error = document.createElement("div");
      error.className = "action-error";
      error.textContent = this.actionError;
      pane.appendChild(error);
    }

    if (notFound) {
      const missing = document.createElement("div");
      missing.className = "not-found";
      missing.textContent = "belief not found on the server";
      pane.appendChild(missing);
    } else if (tree) {
      pane.appendChild(renderTree(tree));
    }
    return pane;
  }

  private renderActions(issue: IssueView): HTMLElement {
    const form = document.createElement("div");
    form.className = "actions";
    const rationale = document.createElement("input");
    rationale.type = "text";
    rationale.placeholder = "rationale";
    rationale.className = "rationale";
    form.appendChild(rationale);

    const buttons: Array<[string, Verdict]> = [
      ["Confirm", "confirmed"],
      ["False positive", "false_positive"],
      ["Mitigated", "mitigated"],
    ];
    for (const [label, verdict] of buttons) {
      const button = document.createElement("button");
      button.textContent = label;
      button.className = `action action-${verdict}`;
      button.disabled = this.busy;
      button.addEventListener("click", () =>
        void this.submitAssessment(issue.issue_key, verdict, rationale.value),
      );
      form.appendChild(button);
    }

    if (issue.members.length >= 2) {
      const split = document.createElement("button");
      split.textContent = "Not a duplicate";
      split.className = "action action-not_duplicate";
      split.disabled = this.busy;
      split.addEventListener("click", () =>
        void this.submitAssessment(
          `${issue.members[0]},${issue.members[1]}`,
          "not_duplicate",
          rationale.value,
        ),
      );
      form.appendChild(split);
    }
    return form;
  }
}
