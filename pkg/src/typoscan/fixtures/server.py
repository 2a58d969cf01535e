"""HTTP server that plays fixture specs to a browser.

Requests are routed by Host header, or by a leading ``/<domain>/`` path
segment when the Host is unknown.  The matching branch's page is sent in two
parts: the head (with the dialog schedule and the script that fires it) goes
out immediately, the rest after `load_ms`, so the document finishes loading at
that offset.  A ``never_finishes`` branch holds the body open (past any 30 s
cap) and then drops the connection short of its Content-Length.  Requests for
unknown hosts are answered by closing the connection, which a browser reports
as a network error.

The page script fires each dialog at its `at_ms`, measured from navigation
start (``performance.now()``).  ``beforeunload`` entries are fired as plain
alerts since a page cannot open that dialog on its own.
"""

from __future__ import annotations

import html
import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Sequence

from ..manifest import Branch, FixtureSpec, index_by_domain

log = logging.getLogger(__name__)

SCHEDULE_ID = "typoscan-dialogs"
SCHEDULE_OPEN = f'<script type="application/json" id="{SCHEDULE_ID}">'
HOLD_S = 35.0

_SCRIPT = """<script>
(function () {
  var plan = JSON.parse(document.getElementById("%s").textContent);
  plan.forEach(function (d) {
    setTimeout(function () {
      do {
        if (d.kind === "confirm") { confirm(d.message); }
        else if (d.kind === "prompt") { prompt(d.message, ""); }
        else { alert(d.message); }
      } while (d.loop);
    }, Math.max(0, d.at_ms - performance.now()));
  });
})();
</script>""" % SCHEDULE_ID


class FixtureServerError(OSError):
    pass


def schedule_json(branch: Branch) -> str:
    plan = [d.to_dict() for d in sorted(branch.dialogs, key=lambda d: d.at_ms)]
    # keep "</script>" inside a message from closing the element
    return json.dumps(plan, ensure_ascii=False, separators=(",", ":")).replace("</", "<\\/")


def render_page(domain: str, branch: Branch) -> tuple[bytes, bytes]:
    """(head, tail) of the page for `branch`.  The schedule sits on one line of its own."""
    head = ("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n"
            f"<title>{html.escape(domain)}</title>\n"
            f"{SCHEDULE_OPEN}{schedule_json(branch)}</script>\n{_SCRIPT}\n</head>\n<body>\n")
    tail = f"<p>{html.escape(domain)}</p>\n</body></html>\n"
    return head.encode("utf-8"), tail.encode("utf-8")


def parse_schedule(document: str) -> list[dict] | None:
    """Dialog schedule embedded in a served page, or None if the marker is absent."""
    start = document.find(SCHEDULE_OPEN)
    if start < 0:
        return None
    start += len(SCHEDULE_OPEN)
    end = document.find("</script>", start)
    if end < 0:
        return None
    return json.loads(document[start:end])


@dataclass(frozen=True)
class Hit:
    domain: str
    path: str
    user_agent: str


class _Handler(BaseHTTPRequestHandler):
    server: "FixtureServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _route(self) -> FixtureSpec | None:
        host = (self.headers.get("Host") or "").rsplit(":", 1)[0].lower().rstrip(".")
        spec = self.server.specs.get(host)
        if spec is None:
            first = self.path.lstrip("/").split("/", 1)[0].lower()
            spec = self.server.specs.get(first)
        return spec

    def do_GET(self):
        spec = self._route()
        ua = self.headers.get("User-Agent", "")
        if spec is None:
            self.close_connection = True
            return
        self.server.record(Hit(spec.domain, self.path, ua))
        if self.path.rstrip("/").endswith("favicon.ico"):
            self.send_response(404)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        branch = spec.branch_for(ua) or Branch("*")
        head, tail = render_page(spec.domain, branch)
        stop = self.server.stopping
        self.send_response(200)
        self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(head) + len(tail)))
        self.send_header("Cache-Control", "no-store")
        self.send_header("Connection", "close")
        self.end_headers()
        self.close_connection = True
        try:
            self.wfile.write(head)
            self.wfile.flush()
            if branch.never_finishes:
                stop.wait(self.server.hold_s)
                return
            if stop.wait(branch.load_ms / 1000):
                return
            self.wfile.write(tail)
            self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            log.debug("client went away from %s", spec.domain)


class FixtureServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, specs: Sequence[FixtureSpec], bind: tuple[str, int], hold_s: float = HOLD_S):
        self.specs = index_by_domain(list(specs))
        self.hold_s = hold_s
        self.stopping = threading.Event()
        self.hits: list[Hit] = []
        self._hits_lock = threading.Lock()
        self._thread: threading.Thread | None = None
        try:
            super().__init__(bind, _Handler)
        except OSError as e:
            raise FixtureServerError(e.errno, f"cannot bind fixture server to {bind[0]}:{bind[1]}: "
                                              f"{e.strerror}") from None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def record(self, hit: Hit):
        with self._hits_lock:
            self.hits.append(hit)

    def user_agents(self, domain: str) -> list[str]:
        with self._hits_lock:
            return [h.user_agent for h in self.hits if h.domain == domain]

    def first_user_agent(self, domain: str) -> str | None:
        uas = self.user_agents(domain)
        return uas[0] if uas else None

    def start(self) -> "FixtureServer":
        self._thread = threading.Thread(target=self.serve_forever, name="fixture-http", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.stopping.set()
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(specs: Sequence[FixtureSpec], bind_address: str = "127.0.0.1:0",
          hold_s: float = HOLD_S) -> FixtureServer:
    """Start serving `specs` on ``host:port`` (port 0 picks a free one); returns the running server."""
    host, _, port = bind_address.rpartition(":")
    return FixtureServer(specs, (host or "127.0.0.1", int(port)), hold_s).start()
