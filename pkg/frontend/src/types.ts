// Wire types mirrored from the service API. The UI never derives scores or
// statuses itself; these are rendered exactly as fetched.

export interface IssueView {
  issue_key: string;
  title: string;
  max_severity: string | null;
  status: string;
  score: number | null;
  rank: number | null;
  members: string[];
  observed_in_reports: string[];
  status_key: string | null;
  priority_key: string | null;
}

export interface RevisionEntry {
  id: string;
  depth: number;
}

export interface RevisionReport {
  root: string;
  retracted: RevisionEntry[];
  rederivation_scheduled: boolean;
}

export interface AssessmentResponse {
  assessment_belief: string;
  revision: RevisionReport;
}

export interface SourceRef {
  source_kind: string;
  source_id: string;
}

export interface JustificationNode {
  belief: {
    id: string;
    kind: string;
    payload: Record<string, unknown>;
    status: string;
  };
  source?: SourceRef | null;
  rule_id?: string;
  rule_version?: number;
  alternative_justifications?: number;
  children: JustificationNode[];
}

export type Verdict =
  | "false_positive"
  | "confirmed"
  | "mitigated"
  | "not_duplicate"
  | "severity_override";

export interface AssessmentRequest {
  subject: string;
  verdict: Verdict;
  rationale: string;
  author: string;
  level?: string;
}

export interface IssueFilters {
  status?: string;
  min_severity?: string;
}
