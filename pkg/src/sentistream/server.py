"""Read-only HTTP query endpoint.

Serves search and report queries as JSON over GET. No mutation over the
wire: the pipeline itself is driven by the CLI. Report bodies come from the
same serializers the CLI uses, so the endpoint and `query` emit identical
bytes for identical state.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, urlsplit

from .analytics import (
    count_labels_from_records,
    label_report_to_json,
    sentiment_over_time,
    timeline_to_json,
)
from .index import InvertedIndex
from .types import NEGATIVE, POSITIVE, LabeledRecord


class BadQuery(ValueError):
    pass


class QueryService:
    """Query logic shared by the HTTP endpoint and the CLI subcommands.

    `records_fn` returns the current labeled records; it is called per
    request so a live pipeline's output shows up without a restart.
    """

    def __init__(
        self,
        index: InvertedIndex,
        records_fn: Callable[[], list[LabeledRecord]],
    ) -> None:
        self.index = index
        self.records_fn = records_fn

    def search_json(self, q: str, label: Optional[str], k: int) -> str:
        if not q.strip():
            raise BadQuery("query must not be empty")
        if label is not None and label not in (POSITIVE, NEGATIVE):
            raise BadQuery(f"label must be {POSITIVE!r} or {NEGATIVE!r}")
        if k < 1:
            raise BadQuery("k must be >= 1")
        hits = self.index.search(q, k=k, label=label)
        body = [
            {"doc_id": h.doc_id, "score": h.score, "snippet": h.snippet,
             "label": h.label}
            for h in hits
        ]
        return json.dumps(body, indent=2, sort_keys=False)

    def counts_json(self) -> str:
        report = count_labels_from_records(self.records_fn())
        return label_report_to_json(report)

    def timeline_json(self, window_ms: int) -> str:
        if window_ms < 1:
            raise BadQuery("window must be >= 1 ms")
        points = sentiment_over_time(self.records_fn(), window_ms)
        return timeline_to_json(points)


class _Handler(BaseHTTPRequestHandler):
    service: QueryService  # injected by make_server
    # keep-alive is safe: every reply goes through _send, which always sets
    # Content-Length, and it lets clients reuse one connection for many queries
    protocol_version = "HTTP/1.1"
    # headers and body go out as separate writes; without TCP_NODELAY, Nagle
    # plus delayed ACK adds ~40 ms to every response on a reused connection
    disable_nagle_algorithm = True

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        parts = urlsplit(self.path)
        params = parse_qs(parts.query, keep_blank_values=True)
        try:
            if parts.path == "/search":
                body = self._search(params)
            elif parts.path == "/reports/counts":
                body = self.service.counts_json()
            elif parts.path == "/reports/timeline":
                body = self._timeline(params)
            else:
                self._send(404, json.dumps({"error": "unknown path"}))
                return
        except BadQuery as exc:
            self._send(400, json.dumps({"error": str(exc)}))
            return
        self._send(200, body)

    def _search(self, params: dict[str, list[str]]) -> str:
        if "q" not in params:
            raise BadQuery("missing required parameter q")
        q = params["q"][0]
        label = params.get("label", [None])[0]
        if label == "":
            raise BadQuery("label must not be empty")
        raw_k = params.get("k", ["10"])[0]
        try:
            k = int(raw_k)
        except ValueError:
            raise BadQuery(f"k must be an integer, got {raw_k!r}") from None
        return self.service.search_json(q, label, k)

    def _timeline(self, params: dict[str, list[str]]) -> str:
        raw = params.get("window", [""])[0]
        try:
            window_ms = int(raw)
        except ValueError:
            raise BadQuery(f"window must be an integer, got {raw!r}") from None
        return self.service.timeline_json(window_ms)

    def _send(self, status: int, body: str) -> None:
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format: str, *args: object) -> None:
        pass  # quiet by default; tests assert on bodies, not logs


def make_server(host: str, port: int, service: QueryService) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    """Run the server on a daemon thread; caller stops it via server.shutdown()."""
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
