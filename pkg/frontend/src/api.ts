import type {
  AssessmentRequest,
  AssessmentResponse,
  IssueFilters,
  IssueView,
  JustificationNode,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const body = await response.text();
    let parsed: unknown = null;
    try {
      parsed = body ? JSON.parse(body) : null;
    } catch {
      parsed = null;
    }
    if (!response.ok) {
      const err = (parsed ?? {}) as { error?: string; detail?: string };
      throw new ApiError(response.status, err.error ?? String(response.status), err.detail ?? body);
    }
    return parsed as T;
  }

  listIssues(filters: IssueFilters = {}): Promise<IssueView[]> {
    const params = new URLSearchParams();
    if (filters.status) params.set("status", filters.status);
    if (filters.min_severity) params.set("min_severity", filters.min_severity);
    const query = params.toString();
    return this.json<IssueView[]>(`/issues${query ? "?" + query : ""}`);
  }

  justification(beliefId: string): Promise<JustificationNode> {
    return this.json<JustificationNode>(`/beliefs/${encodeURIComponent(beliefId)}/justification`);
  }

  submitAssessment(request: AssessmentRequest): Promise<AssessmentResponse> {
    return this.json<AssessmentResponse>("/assessments", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
  }
}
