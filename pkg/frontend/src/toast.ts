import type { RevisionReport } from "./types.js";

export interface RevisionToast {
  subject: string;
  retractedCount: number;
  rederivationScheduled: boolean;
  message: string;
}

// One toast per mutating response, built only from the server's report.
export function toastFromRevision(subject: string, report: RevisionReport): RevisionToast {
  const n = report.retracted.length;
  const suffix = report.rederivation_scheduled ? ", re-derivation ran" : "";
  return {
    subject,
    retractedCount: n,
    rederivationScheduled: report.rederivation_scheduled,
    message: `${n} belief${n === 1 ? "" : "s"} retracted${suffix}`,
  };
}

export function renderToasts(toasts: RevisionToast[]): HTMLElement {
  const container = document.createElement("div");
  container.className = "toasts";
  for (const toast of toasts) {
    const el = document.createElement("div");
    el.className = "toast";
    el.dataset.retracted = String(toast.retractedCount);
    const head = document.createElement("strong");
    head.textContent = toast.subject;
    const body = document.createElement("span");
    body.textContent = " " + toast.message;
    el.append(head, body);
    container.appendChild(el);
  }
  return container;
}
