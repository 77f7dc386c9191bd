import { ApiClient } from "./api.js";
import { TriageApp } from "./app.js";

declare global {
  interface Window {
    SECKB_API_BASE?: string;
  }
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const base = window.SECKB_API_BASE ?? "";
  const app = new TriageApp(root, new ApiClient(base));
  void app.refresh();
  window.addEventListener("focus", () => void app.refresh());
}

if (document.readyState === "loading") {
  document.addEventListener("DOMContentLoaded", boot);
} else {
  boot();
}
