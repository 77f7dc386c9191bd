import { JSDOM } from "jsdom";

export function setupDom(): HTMLElement {
  const dom = new JSDOM(`<!doctype html><html><body><div id="app"></div></body></html>`);
  const g = globalThis as Record<string, unknown>;
  g.window = dom.window;
  g.document = dom.window.document;
  g.HTMLElement = dom.window.HTMLElement;
  g.Node = dom.window.Node;
  return dom.window.document.getElementById("app") as HTMLElement;
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
