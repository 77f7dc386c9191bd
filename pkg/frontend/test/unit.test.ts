import assert from "node:assert/strict";
import { test } from "node:test";

import { ApiClient } from "../src/api.js";
import { TriageApp } from "../src/app.js";
import { renderTree, treeDepth } from "../src/tree.js";
import type { IssueView, JustificationNode } from "../src/types.js";
import { jsonResponse, setupDom } from "./dom.js";

function issueFixture(overrides: Partial<IssueView> = {}): IssueView {
  return {
    issue_key: "aaaa1111",
    title: "sql injection in checkout",
    max_severity: "high",
    status: "unreviewed",
    score: 7.0,
    rank: 1,
    members: ["scanx:sql-injection:checkout.py"],
    observed_in_reports: ["run-1:hash1", "run-2:hash2"],
    status_key: "bbbb2222",
    priority_key: "cccc3333",
    ...overrides,
  };
}

interface RecordedCall {
  url: string;
  method: string;
  body?: string;
}

function leafNode(): JustificationNode {
  return {
    belief: {
      id: "cccc3333",
      kind: "IssueExists",
      payload: { canonical: "scanx:sql-injection:checkout.py" },
      status: "active",
    },
    source: { source_kind: "ToolReport", source_id: "run-1:x" },
    children: [],
  };
}

function recordingFetch(routes: (call: RecordedCall) => Response | Promise<Response>) {
  const calls: RecordedCall[] = [];
  const impl = async (input: string, init?: RequestInit): Promise<Response> => {
    const call: RecordedCall = {
      url: input,
      method: init?.method ?? "GET",
      body: typeof init?.body === "string" ? init.body : undefined,
    };
    calls.push(call);
    return routes(call);
  };
  return { calls, impl };
}

test("rendered cells are verbatim server values, no client-side derivation", async () => {
  const root = setupDom();
  // deliberately inconsistent fixture: a recomputing client would "fix" it
  const weird = issueFixture({
    score: 123.4567,
    status: "confirmed",
    max_severity: "low",
    rank: 9,
  });
  const { impl } = recordingFetch(() => jsonResponse(200, [weird]));
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.refresh();
  const row = root.querySelector("tr.issue-row") as HTMLTableRowElement;
  const cells = Array.from(row.cells).map((c) => c.textContent);
  assert.deepEqual(cells, ["9", "low", "confirmed", "123.46", "2", weird.title]);
});

test("empty knowledge base renders the empty-state panel", async () => {
  const root = setupDom();
  const { impl } = recordingFetch(() => jsonResponse(200, []));
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.refresh();
  assert.ok(root.querySelector(".empty-state"));
});

test("status filter refetches server-side filtered rows", async () => {
  const root = setupDom();
  const { calls, impl } = recordingFetch((call) =>
    jsonResponse(200, call.url.includes("status=false_positive")
      ? [issueFixture({ status: "false_positive", rank: null, score: null })]
      : [issueFixture()]),
  );
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.refresh();
  app.filters = { status: "false_positive" };
  await app.refresh();
  assert.equal(calls.filter((c) => c.url.includes("/issues")).length, 2);
  const row = root.querySelector("tr.issue-row") as HTMLTableRowElement;
  assert.equal(row.dataset.status, "false_positive");
  assert.equal(row.cells[0].textContent, "—"); // unranked, exactly as served
});

test("false positive without rationale is rejected client-side, no request", async () => {
  const root = setupDom();
  const { calls, impl } = recordingFetch(() => jsonResponse(200, []));
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.submitAssessment("aaaa1111", "false_positive", "   ");
  assert.equal(calls.length, 0);
  assert.match(app.actionError ?? "", /rationale/);
});

test("2xx mutation produces exactly one toast and exactly one refetch", async () => {
  const root = setupDom();
  const revision = {
    root: "assess1",
    retracted: [
      { id: "x1", depth: 1 },
      { id: "x2", depth: 2 },
    ],
    rederivation_scheduled: true,
  };
  const { calls, impl } = recordingFetch((call) => {
    if (call.url.endsWith("/assessments")) {
      return jsonResponse(200, { assessment_belief: "assess1", revision });
    }
    return jsonResponse(200, []);
  });
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.submitAssessment("aaaa1111", "confirmed", "");
  assert.equal(app.toasts.length, 1);
  assert.equal(app.toasts[0].retractedCount, 2);
  const listCalls = calls.filter((c) => c.url.includes("/issues"));
  assert.equal(listCalls.length, 1);
  const toastEl = root.querySelector(".toast") as HTMLElement;
  assert.equal(toastEl.dataset.retracted, "2");
});

test("actions stay disabled until the post-mutation refetch completes", async () => {
  const root = setupDom();
  let releasePost: (r: Response) => void = () => {};
  const gate = new Promise<Response>((resolve) => (releasePost = resolve));
  const { calls, impl } = recordingFetch((call) => {
    if (call.url.endsWith("/assessments")) return gate;
    if (call.url.includes("/justification")) return jsonResponse(200, leafNode());
    return jsonResponse(200, [issueFixture()]);
  });
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.refresh();
  await app.selectIssue(issueFixture());
  const pending = app.submitAssessment("aaaa1111", "confirmed", "");
  await Promise.resolve();
  assert.equal(app.busy, true);
  const button = root.querySelector("button.action") as HTMLButtonElement;
  assert.equal(button.disabled, true);
  releasePost(jsonResponse(200, {
    assessment_belief: "a",
    revision: { root: "a", retracted: [], rederivation_scheduled: true },
  }));
  await pending;
  assert.equal(app.busy, false);
  const after = root.querySelector("button.action") as HTMLButtonElement;
  assert.equal(after.disabled, false);
  assert.equal(calls.filter((c) => c.url.includes("/issues")).length >= 2, true);
});

test("4xx renders inline diagnostic and no refetch happens", async () => {
  const root = setupDom();
  const { calls, impl } = recordingFetch((call) => {
    if (call.url.endsWith("/assessments")) {
      return jsonResponse(404, { error: "UnknownSubject", detail: "nope" });
    }
    if (call.url.includes("/justification")) return jsonResponse(200, leafNode());
    return jsonResponse(200, []);
  });
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.selectIssue(issueFixture({ priority_key: null, status_key: null }));
  await app.submitAssessment("ghost", "confirmed", "");
  assert.match(app.actionError ?? "", /404 UnknownSubject/);
  assert.equal(calls.filter((c) => c.url.includes("/issues")).length, 0);
  assert.ok(root.querySelector(".action-error"));
});

test("unreachable server shows banner with retry and labels stale data", async () => {
  const root = setupDom();
  let healthy = true;
  const { impl } = recordingFetch(() => {
    if (!healthy) throw new Error("connection refused");
    return jsonResponse(200, [issueFixture()]);
  });
  const app = new TriageApp(root, new ApiClient("http://kb", impl));
  await app.refresh();
  healthy = false;
  await app.refresh();
  assert.ok(root.querySelector(".banner-error"));
  assert.ok(root.querySelector("button.retry"));
  assert.ok(root.querySelector(".stale-label"));
  assert.equal(root.querySelectorAll("tr.issue-row").length, 1); // old rows kept
  healthy = true;
  await app.refresh();
  assert.equal(root.querySelector(".banner-error"), null);
  assert.equal(root.querySelector(".stale-label"), null);
});

test("justification tree renders depths and strikes retracted nodes", () => {
  setupDom();
  const tree: JustificationNode = {
    belief: { id: "p1", kind: "PriorityAssigned", payload: { score: 7, rank: 1 }, status: "active" },
    rule_id: "prioritize",
    rule_version: 1,
    children: [
      {
        belief: { id: "i1", kind: "IssueExists", payload: { canonical: "k" }, status: "active" },
        rule_id: "dedup",
        rule_version: 1,
        children: [
          {
            belief: {
              id: "f1", kind: "FindingObserved",
              payload: { finding_key: "k", severity: "high" }, status: "retracted",
            },
            source: { source_kind: "ToolReport", source_id: "run-1:x" },
            children: [],
          },
        ],
      },
    ],
  };
  assert.equal(treeDepth(tree), 3);
  const el = renderTree(tree);
  assert.equal(el.dataset.depth, "0");
  const leaf = el.querySelector('details[data-depth="2"]') as HTMLElement;
  assert.ok(leaf);
  assert.ok(leaf.querySelector("summary")?.classList.contains("retracted"));
  assert.match(leaf.querySelector(".source-ref")?.textContent ?? "", /ToolReport:run-1:x/);
});
