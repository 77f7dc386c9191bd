"""Command-line driver.

Two modes share one command surface: embedded (operate directly on a local
data directory, taking an exclusive lock) and remote (talk to a running
service over HTTP). Identical command sequences produce identical output in
both modes. Exit codes: 0 success, 1 domain failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import os
import sys
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Optional

from .errors import SecKbError
from .ingest import FormatKind, RawReport
from .kb import KnowledgeBase
from .report import write_report
from .service import serve_forever

ENV_PREFIX = "SECKB_"


class CliError(Exception):
    """Domain-level failure that should exit 1 with a message."""


def now_ms() -> int:
    return time.time_ns() // 1_000_000


# --- clients -------------------------------------------------------------------


class EmbeddedClient:
    def __init__(self, data_dir: Path, rules_config: Optional[dict]):
        data_dir.mkdir(parents=True, exist_ok=True)
        self._lockfile = (data_dir / ".lock").open("w")
        try:
            fcntl.flock(self._lockfile, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise CliError(f"data dir {data_dir} is locked by another process")
        self.kb = KnowledgeBase(data_dir=data_dir, rule_config=rules_config,
                                opened_at=now_ms())

    def ingest(self, data: bytes, run_id: str, declared: Optional[str]) -> dict:
        raw = RawReport(
            data=data,
            pipeline_run_id=run_id,
            received_at=now_ms(),
            declared_format=FormatKind(declared) if declared else None,
        )
        result = self.kb.ingest_report(raw)
        return result.to_json()

    def issues(self, status: Optional[str], min_severity: Optional[str]) -> list[dict]:
        return self.kb.issue_views(status=status, min_severity=min_severity)

    def issues_bytes(self, status: Optional[str], min_severity: Optional[str]) -> bytes:
        return self.kb.issues_json(status=status, min_severity=min_severity)

    def assess(self, subject: str, verdict: str, author: str,
               rationale: str, level: Optional[str]) -> dict:
        assessment_id, revision = self.kb.submit_assessment(
            subject=subject, verdict=verdict, author=author,
            at=now_ms(), rationale=rationale, level=level,
        )
        return {"assessment_belief": assessment_id, "revision": revision.to_json()}

    def justification(self, belief_id: str) -> dict:
        return self.kb.justification_tree(belief_id)

    def events(self, since_seq: int) -> list[dict]:
        return self.kb.export_events(since_seq)

    def health(self) -> dict:
        return self.kb.engine_status()

    def close(self) -> None:
        self.kb.close()
        fcntl.flock(self._lockfile, fcntl.LOCK_UN)
        self._lockfile.close()


class RemoteClient:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def _request(self, method: str, path: str, body: Optional[bytes] = None,
                 headers: Optional[dict] = None) -> tuple[int, bytes]:
        request = urllib.request.Request(
            self.base_url + path, data=body, method=method, headers=headers or {}
        )
        try:
            with urllib.request.urlopen(request) as response:
                return response.status, response.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read()
        except urllib.error.URLError as exc:
            raise CliError(f"cannot reach {self.base_url}: {exc.reason}")

    def _json_or_fail(self, code: int, body: bytes) -> Any:
        try:
            doc = json.loads(body) if body else {}
        except json.JSONDecodeError:
            doc = {}
        if code >= 400:
            raise CliError(f"{doc.get('error', code)}: {doc.get('detail', '')}")
        return doc

    def ingest(self, data: bytes, run_id: str, declared: Optional[str]) -> dict:
        headers = {"X-Pipeline-Run-Id": run_id, "Content-Type": "application/octet-stream"}
        if declared:
            headers["X-Report-Format"] = declared
        code, body = self._request("POST", "/reports", data, headers)
        return self._json_or_fail(code, body)

    def _issues_query(self, status, min_severity) -> str:
        params = []
        if status:
            params.append(f"status={status}")
        if min_severity:
            params.append(f"min_severity={min_severity}")
        return "/issues" + ("?" + "&".join(params) if params else "")

    def issues(self, status: Optional[str], min_severity: Optional[str]) -> list[dict]:
        return json.loads(self.issues_bytes(status, min_severity))

    def issues_bytes(self, status: Optional[str], min_severity: Optional[str]) -> bytes:
        code, body = self._request("GET", self._issues_query(status, min_severity))
        self._json_or_fail(code, body)
        return body

    def assess(self, subject: str, verdict: str, author: str,
               rationale: str, level: Optional[str]) -> dict:
        payload: dict[str, Any] = {
            "subject": subject, "verdict": verdict,
            "author": author, "rationale": rationale,
        }
        if level:
            payload["level"] = level
        code, body = self._request(
            "POST", "/assessments", json.dumps(payload).encode("utf-8"),
            {"Content-Type": "application/json"},
        )
        return self._json_or_fail(code, body)

    def justification(self, belief_id: str) -> dict:
        code, body = self._request("GET", f"/beliefs/{belief_id}/justification")
        return self._json_or_fail(code, body)

    def events(self, since_seq: int) -> list[dict]:
        out: list[dict] = []
        cursor = since_seq
        while True:
            code, body = self._request("GET", f"/events?since_seq={cursor}")
            page = self._json_or_fail(code, body)
            out.extend(page["events"])
            if page["last_seq"] >= page["head_seq"] or not page["events"]:
                return out
            cursor = page["last_seq"]

    def health(self) -> dict:
        code, body = self._request("GET", "/health")
        return self._json_or_fail(code, body)

    def close(self) -> None:
        pass


def open_client(args) -> EmbeddedClient | RemoteClient:
    if args.server_url:
        return RemoteClient(args.server_url)
    rules_config = None
    if args.rules_config:
        rules_config = json.loads(Path(args.rules_config).read_text(encoding="utf-8"))
    return EmbeddedClient(Path(args.data_dir), rules_config)


# --- rendering -------------------------------------------------------------------


def render_issue_table(views: list[dict]) -> str:
    if not views:
        return "no issues"
    header = ["RANK", "SEVERITY", "STATUS", "SCORE", "ISSUE KEY", "TITLE"]
    rows = [header]
    for view in views:
        rows.append([
            str(view["rank"]) if view["rank"] is not None else "-",
            view["max_severity"] or "-",
            view["status"],
            f'{view["score"]:.2f}' if view["score"] is not None else "-",
            view["issue_key"],
            view["title"],
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines)


_PAYLOAD_SUMMARY_FIELDS = {
    "FindingObserved": ("finding_key", "severity"),
    "ReportIngested": ("pipeline_run_id", "tool_name"),
    "AssessmentMade": ("verdict", "author"),
    "IssueExists": ("canonical",),
    "IssueMember": ("issue", "finding_key"),
    "ValidationStatus": ("issue", "status"),
    "PriorityAssigned": ("issue", "score", "rank"),
    "DuplicateOf": ("a", "b"),
}


def render_tree(node: dict, indent: int = 0) -> list[str]:
    belief = node["belief"]
    fields = _PAYLOAD_SUMMARY_FIELDS.get(belief["kind"], ())
    summary = " ".join(f"{f}={belief['payload'].get(f)}" for f in fields)
    marker = "" if belief["status"] == "active" else " (retracted)"
    line = f"{'  ' * indent}{belief['kind']} {belief['id']}{marker} {summary}".rstrip()
    lines = [line]
    if "source" in node and node["source"]:
        lines[0] += f"  <- {node['source']['source_kind']}:{node['source']['source_id']}"
    if node.get("rule_id"):
        lines.append(f"{'  ' * indent}  via rule {node['rule_id']} v{node['rule_version']}")
    for child in node.get("children", []):
        lines.extend(render_tree(child, indent + 1))
    return lines


# --- commands ----------------------------------------------------------------------


def cmd_ingest(args) -> int:
    client = open_client(args)
    failures = 0
    try:
        for name in args.files:
            path = Path(name)
            try:
                data = path.read_bytes()
            except OSError as exc:
                print(f"{name}: ERROR {exc}", file=sys.stderr)
                failures += 1
                continue
            run_id = args.run_id or f"cli-{now_ms()}"
            try:
                result = client.ingest(data, run_id, args.format)
            except (SecKbError, CliError) as exc:
                print(f"{name}: ERROR {exc}", file=sys.stderr)
                failures += 1
                continue
            issues_now = len(client.issues(None, None))
            print(
                f"{name}: {result['findings']} findings, "
                f"{result['skipped']} skipped, {issues_now} issues after fixpoint"
            )
    finally:
        client.close()
    return 1 if failures else 0


def cmd_issues(args) -> int:
    client = open_client(args)
    try:
        if args.json:
            sys.stdout.buffer.write(client.issues_bytes(args.status, args.min_severity))
            sys.stdout.buffer.write(b"\n")
        else:
            print(render_issue_table(client.issues(args.status, args.min_severity)))
    finally:
        client.close()
    return 0


def cmd_assess(args) -> int:
    client = open_client(args)
    try:
        result = client.assess(
            args.subject, args.verdict, args.author, args.rationale or "", args.level
        )
    finally:
        client.close()
    revision = result["revision"]
    print(f"assessment {result['assessment_belief']} recorded")
    retracted = revision["retracted"]
    print(f"revision: {len(retracted)} beliefs retracted, "
          f"rederivation={'yes' if revision['rederivation_scheduled'] else 'no'}")
    for entry in retracted:
        print(f"  depth {entry['depth']}: {entry['id']}")
    return 0


def cmd_explain(args) -> int:
    client = open_client(args)
    try:
        tree = client.justification(args.belief_id)
    finally:
        client.close()
    print("\n".join(render_tree(tree)))
    return 0


def cmd_export(args) -> int:
    client = open_client(args)
    try:
        events = client.events(args.since_seq)
    finally:
        client.close()
    lines = [json.dumps(e, separators=(",", ":")) for e in events]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.output == "-":
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"exported {len(lines)} events to {args.output}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    if args.server_url:
        raise CliError("serve runs embedded; unset --server-url / SECKB_SERVER_URL")
    rules_config = None
    if args.rules_config:
        rules_config = json.loads(Path(args.rules_config).read_text(encoding="utf-8"))
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    kb = KnowledgeBase(data_dir=data_dir, rule_config=rules_config,
                       opened_at=now_ms())
    ui_dir = Path(args.ui_dir) if args.ui_dir else None
    serve_forever(kb, listen=args.listen, cors_origin=args.cors_origin,
                  ui_dir=ui_dir, max_body=args.max_body)
    return 0


def cmd_report(args) -> int:
    client = open_client(args)
    try:
        views = client.issues(None, None)
    finally:
        client.close()
    paths = write_report(views, Path(args.output))
    for path in paths:
        print(f"wrote {path}")
    return 0


# --- entry point -----------------------------------------------------------------------


def _env_default(name: str, fallback: Optional[str] = None) -> Optional[str]:
    return os.environ.get(ENV_PREFIX + name, fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seckb",
        description="Security findings knowledge base: ingest reports, triage issues.",
    )
    parser.add_argument(
        "--data-dir", default=_env_default("DATA_DIR", "./seckb-data"),
        help="event log directory for embedded mode (env SECKB_DATA_DIR)",
    )
    parser.add_argument(
        "--server-url", default=_env_default("SERVER_URL"),
        help="operate against a running service instead (env SECKB_SERVER_URL)",
    )
    parser.add_argument(
        "--rules-config", default=_env_default("RULES_CONFIG"),
        help="JSON rule configuration file (env SECKB_RULES_CONFIG)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="ingest report files")
    p_ingest.add_argument("files", nargs="+")
    p_ingest.add_argument("--format", choices=[f.value for f in FormatKind])
    p_ingest.add_argument("--run-id", default=_env_default("RUN_ID"))
    p_ingest.set_defaults(func=cmd_ingest)

    p_issues = sub.add_parser("issues", help="list issues")
    p_issues.add_argument("--status")
    p_issues.add_argument("--min-severity")
    p_issues.add_argument("--json", action="store_true")
    p_issues.set_defaults(func=cmd_issues)

    p_assess = sub.add_parser("assess", help="submit a human assessment")
    p_assess.add_argument("subject", help="issue key, finding key, or a,b pair")
    p_assess.add_argument(
        "verdict",
        choices=["false_positive", "confirmed", "mitigated", "not_duplicate",
                 "severity_override"],
    )
    p_assess.add_argument("--rationale", default="")
    p_assess.add_argument("--author", default=_env_default("AUTHOR", os.environ.get("USER", "cli")))
    p_assess.add_argument("--level", help="canonical severity for severity_override")
    p_assess.set_defaults(func=cmd_assess)

    p_explain = sub.add_parser("explain", help="render a belief's justification tree")
    p_explain.add_argument("belief_id")
    p_explain.set_defaults(func=cmd_explain)

    p_export = sub.add_parser("export", help="export the event log as JSONL")
    p_export.add_argument("--since-seq", type=int, default=0)
    p_export.add_argument("-o", "--output", default="-")
    p_export.set_defaults(func=cmd_export)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--listen", default=_env_default("LISTEN", "127.0.0.1:8750"))
    p_serve.add_argument("--cors-origin", default=_env_default("CORS_ORIGIN", "*"))
    p_serve.add_argument("--ui-dir", default=_env_default("UI_DIR"))
    p_serve.add_argument(
        "--max-body", type=int,
        default=int(_env_default("MAX_BODY", str(20 * 1024 * 1024))),
        help="request body limit in bytes",
    )
    p_serve.set_defaults(func=cmd_serve)

    p_report = sub.add_parser("report", help="write issues.csv plus charts")
    p_report.add_argument("-o", "--output", default="./seckb-report")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SecKbError, CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
