"""HTTP interface: CI pipelines push reports, the triage UI reads issues and
submits assessments.

Every mutation runs contradiction handling and fixpoint synchronously before
the response is sent, so a GET issued after a 2xx sees the revised state.
Mutations are funnelled through the KB writer lock; a bounded admission
semaphore turns overload into 503 instead of an unbounded queue.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Optional
from urllib.parse import parse_qs, urlparse

from .errors import (
    MalformedReport,
    SchemaViolation,
    SecKbError,
    UnknownBelief,
    UnknownFormat,
    UnknownSeverity,
    UnknownSubject,
)
from .ingest import FormatKind, RawReport
from .kb import KnowledgeBase

DEFAULT_LISTEN = "127.0.0.1:8750"
DEFAULT_MAX_BODY = 20 * 1024 * 1024
DEFAULT_MUTATION_SLOTS = 256
EVENTS_PAGE_SIZE = 500

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


def now_ms() -> int:
    return time.time_ns() // 1_000_000


class KbService:
    """Shared state behind the request handlers."""

    def __init__(self, kb: KnowledgeBase, max_body: int = DEFAULT_MAX_BODY,
                 cors_origin: str = "*", ui_dir: Optional[Path] = None,
                 mutation_slots: int = DEFAULT_MUTATION_SLOTS,
                 clock=now_ms):
        self.kb = kb
        self.max_body = max_body
        self.cors_origin = cors_origin
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.mutations = threading.BoundedSemaphore(mutation_slots)
        self.clock = clock
        self.idempotency_cache: dict[str, tuple[int, bytes]] = {}
        self._idempotency_lock = threading.Lock()


class KbRequestHandler(BaseHTTPRequestHandler):
    service: KbService  # injected by make_server
    protocol_version = "HTTP/1.1"

    # --- plumbing -----------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet by default; tests and CLI notice errors
        pass

    def _send(self, code: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", self.service.cors_origin)
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, obj: Any) -> None:
        self._send(code, json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8"))

    def _send_error_json(self, code: int, error: str, detail: str = "") -> None:
        self._send_json(code, {"error": error, "detail": detail})

    def _read_body(self) -> Optional[bytes]:
        length = int(self.headers.get("Content-Length", 0))
        if length > self.service.max_body:
            self._send_error_json(413, "PayloadTooLarge",
                                  f"body exceeds {self.service.max_body} bytes")
            return None
        return self.rfile.read(length)

    def _idempotent_replay(self, key: Optional[str]) -> bool:
        if not key:
            return False
        with self.service._idempotency_lock:
            hit = self.service.idempotency_cache.get(key)
        if hit is None:
            return False
        code, body = hit
        self._send(code, body)
        return True

    def _remember_idempotent(self, key: Optional[str], code: int, body: bytes) -> None:
        if key:
            with self.service._idempotency_lock:
                self.service.idempotency_cache[key] = (code, body)

    # --- routing ------------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", self.service.cors_origin)
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header(
            "Access-Control-Allow-Headers",
            "Content-Type, Idempotency-Key, X-Report-Format, X-Tool-Hint, X-Pipeline-Run-Id",
        )
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        try:
            if url.path == "/issues":
                return self._get_issues(url)
            if url.path == "/events":
                return self._get_events(url)
            if url.path == "/health":
                return self._send_json(200, self.service.kb.engine_status())
            if url.path.startswith("/beliefs/") and url.path.endswith("/justification"):
                belief_id = url.path[len("/beliefs/"):-len("/justification")]
                return self._get_justification(belief_id)
            if self._serve_static(url.path):
                return
            self._send_error_json(404, "NotFound", url.path)
        except SecKbError as exc:
            self._send_error_json(500, type(exc).__name__, str(exc))

    def do_POST(self):
        url = urlparse(self.path)
        if url.path == "/reports":
            return self._post_report()
        if url.path == "/assessments":
            return self._post_assessment()
        self._send_error_json(404, "NotFound", url.path)

    # --- handlers ----------------------------------------------------------------

    def _get_issues(self, url) -> None:
        params = parse_qs(url.query)
        try:
            body = self.service.kb.issues_json(
                status=params.get("status", [None])[0],
                min_severity=params.get("min_severity", [None])[0],
                order=params.get("order", ["rank"])[0],
            )
        except ValueError as exc:
            return self._send_error_json(400, "BadFilter", str(exc))
        self._send(200, body)

    def _get_events(self, url) -> None:
        params = parse_qs(url.query)
        try:
            since_seq = int(params.get("since_seq", ["0"])[0])
        except ValueError:
            return self._send_error_json(400, "BadQuery", "since_seq must be an integer")
        if since_seq < 0:
            return self._send_error_json(400, "BadQuery", "since_seq must be >= 0")
        events = self.service.kb.events_since(since_seq, limit=EVENTS_PAGE_SIZE)
        payload = {
            "events": [e.to_json() for e in events],
            "count": len(events),
            "last_seq": events[-1].seq if events else since_seq,
            "head_seq": self.service.kb.store.seq,
        }
        self._send_json(200, payload)

    def _get_justification(self, belief_id: str) -> None:
        try:
            tree = self.service.kb.justification_tree(belief_id)
        except UnknownBelief as exc:
            return self._send_error_json(404, "UnknownBelief", str(exc))
        self._send_json(200, tree)

    def _post_report(self) -> None:
        key = self.headers.get("Idempotency-Key")
        if self._idempotent_replay(key):
            return
        body = self._read_body()
        if body is None:
            return
        declared = self.headers.get("X-Report-Format")
        try:
            declared_format = FormatKind(declared) if declared else None
        except ValueError:
            return self._send_error_json(400, "UnknownFormat", f"format {declared!r}")
        if not self.service.mutations.acquire(blocking=False):
            return self._send_error_json(503, "Overloaded", "mutation queue is full")
        try:
            raw = RawReport(
                data=body,
                pipeline_run_id=self.headers.get("X-Pipeline-Run-Id", "adhoc"),
                received_at=self.service.clock(),
                declared_format=declared_format,
                tool_hint=self.headers.get("X-Tool-Hint"),
            )
            result = self.service.kb.ingest_report(raw)
        except (UnknownFormat, MalformedReport, UnknownSeverity, SchemaViolation) as exc:
            return self._send_error_json(400, type(exc).__name__, str(exc))
        finally:
            self.service.mutations.release()
        response = json.dumps(result.to_json(), sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
        self._remember_idempotent(key, 202, response)
        self._send(202, response)

    def _post_assessment(self) -> None:
        key = self.headers.get("Idempotency-Key")
        if self._idempotent_replay(key):
            return
        body = self._read_body()
        if body is None:
            return
        try:
            doc = json.loads(body)
        except json.JSONDecodeError as exc:
            return self._send_error_json(422, "MalformedBody", str(exc))
        subject = doc.get("subject")
        verdict = doc.get("verdict")
        if not isinstance(verdict, str) or not verdict:
            return self._send_error_json(422, "MalformedVerdict", "verdict is required")
        if not self.service.mutations.acquire(blocking=False):
            return self._send_error_json(503, "Overloaded", "mutation queue is full")
        try:
            assessment_id, revision = self.service.kb.submit_assessment(
                subject=subject,
                verdict=verdict,
                author=doc.get("author", "anonymous"),
                at=self.service.clock(),
                rationale=doc.get("rationale", ""),
                level=doc.get("level"),
            )
        except UnknownSubject as exc:
            return self._send_error_json(404, "UnknownSubject", str(exc))
        except (ValueError, SchemaViolation) as exc:
            return self._send_error_json(422, "MalformedVerdict", str(exc))
        finally:
            self.service.mutations.release()
        response = json.dumps(
            {"assessment_belief": assessment_id, "revision": revision.to_json()},
            sort_keys=True, separators=(",", ":"),
        ).encode("utf-8")
        self._remember_idempotent(key, 200, response)
        self._send(200, response)

    def _serve_static(self, path: str) -> bool:
        ui_dir = self.service.ui_dir
        if ui_dir is None:
            return False
        relative = path.lstrip("/") or "index.html"
        target = (ui_dir / relative).resolve()
        try:
            target.relative_to(ui_dir.resolve())
        except ValueError:
            return False
        if not target.is_file():
            if path == "/":
                self._send_error_json(404, "NotFound", "no index.html in ui dir")
                return True
            return False
        content_type = _STATIC_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), content_type=content_type)
        return True


def make_server(kb: KnowledgeBase, listen: str = DEFAULT_LISTEN,
                max_body: int = DEFAULT_MAX_BODY, cors_origin: str = "*",
                ui_dir: Optional[Path] = None, clock=now_ms) -> ThreadingHTTPServer:
    host, _, port = listen.rpartition(":")
    service = KbService(kb, max_body=max_body, cors_origin=cors_origin,
                        ui_dir=ui_dir, clock=clock)
    handler = type("BoundHandler", (KbRequestHandler,), {"service": service})
    server = ThreadingHTTPServer((host or "127.0.0.1", int(port)), handler)
    server.kb_service = service  # type: ignore[attr-defined]
    return server


def serve_forever(kb: KnowledgeBase, listen: str = DEFAULT_LISTEN, **kwargs) -> None:
    server = make_server(kb, listen, **kwargs)
    host, port = server.server_address[:2]
    print(f"seckb service listening on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
