"""A small stand-in for a debugging-enabled browser, for environments without one.

It implements the subset of the DevTools protocol the real driver uses, with
the browser's observable behaviour: the discovery endpoints (``/json/version``,
``/json/new``, ``/json/close``, ``/json/list``) on an HTTP port, one WebSocket
per page target, the User-Agent override applied to the page request, network
events for the main document (request id equal to loader id, as in Chromium),
and blocking JavaScript dialogs that wait for ``Page.handleJavaScriptDialog``.

Pages are fetched over real HTTP.  Like Chromium's ``--host-resolver-rules``,
every host name is sent to one upstream address (normally the fixture server)
with the original Host header.  Instead of running page JavaScript, the
emulator reads the dialog schedule the fixture server embeds in each page and
fires it on the same clock (milliseconds since navigation start).
"""

from __future__ import annotations

import http.client
import json
import logging
import socket
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

from websockets.exceptions import ConnectionClosed
from websockets.sync.server import serve as ws_serve

from ..driver.base import canonical_url
from .server import parse_schedule

log = logging.getLogger(__name__)

DEFAULT_UA = ("Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) "
              "HeadlessChrome/69.0.3497.100 Safari/537.36")
ABOUT_BLANK = "about:blank"


class _Navigation:
    """One page load: a fetch thread plus a script thread that fires dialogs."""

    def __init__(self, page: "_Page", url: str, loader_id: str, reply_id: int):
        self.page = page
        self.url = url
        self.page_url = canonical_url(url)
        self.loader_id = loader_id
        self.reply_id = reply_id
        self.t0 = time.monotonic()
        self.cancelled = threading.Event()
        self.sock: socket.socket | None = None
        threading.Thread(target=self._fetch, name=f"nav-{loader_id[:8]}", daemon=True).start()

    def cancel(self):
        self.cancelled.set()
        sock = self.sock
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def _fetch(self):
        page, lid = self.page, self.loader_id
        parts = urlsplit(self.url)
        host, port = page.emulator.upstream
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        ts = time.time()
        page.event("Network.requestWillBeSent", requestId=lid, loaderId=lid, documentURL=self.url,
                   type="Document", frameId=page.frame_id, timestamp=ts, wallTime=ts,
                   request={"url": self.url, "method": "GET", "headers": {"User-Agent": page.user_agent}})
        conn = http.client.HTTPConnection(host, port, timeout=page.emulator.fetch_timeout)
        try:
            conn.connect()
            self.sock = conn.sock
            if self.cancelled.is_set():
                raise OSError("navigation cancelled")
            conn.request("GET", path, headers={"Host": parts.netloc, "User-Agent": page.user_agent,
                                               "Accept": "text/html"})
            resp = conn.getresponse()
        except (OSError, http.client.HTTPException) as e:
            conn.close()
            if not self.cancelled.is_set():
                reason = "net::ERR_EMPTY_RESPONSE" if isinstance(e, http.client.HTTPException) \
                    else "net::ERR_CONNECTION_REFUSED"
                page.reply(self.reply_id, frameId=page.frame_id, loaderId=lid, errorText=reason)
                page.event("Network.loadingFailed", requestId=lid, type="Document", errorText=reason,
                           canceled=False, timestamp=time.time())
            page.finish(self)
            return
        page.event("Network.responseReceived", requestId=lid, loaderId=lid, type="Document",
                   frameId=page.frame_id, timestamp=time.time(),
                   response={"url": self.url, "status": resp.status, "mimeType": "text/html"})
        page.reply(self.reply_id, frameId=page.frame_id, loaderId=lid)
        page.event("Page.frameNavigated", type="Navigation",
                   frame={"id": page.frame_id, "loaderId": lid, "url": self.page_url,
                          "securityOrigin": f"{parts.scheme}://{parts.netloc}", "mimeType": "text/html"})
        body = b""
        scheduled = False
        try:
            while not self.cancelled.is_set():
                chunk = resp.read1(65536)
                if not chunk:
                    break
                body += chunk
                if not scheduled:
                    plan = parse_schedule(body.decode("utf-8", "replace"))
                    if plan is not None:
                        scheduled = True
                        threading.Thread(target=self._run_script, args=(plan,), daemon=True).start()
        except (OSError, http.client.HTTPException):
            pass
        finally:
            conn.close()
        if self.cancelled.is_set():
            return
        length = resp.getheader("Content-Length")
        if length is not None and int(length) != len(body):
            page.event("Network.loadingFailed", requestId=lid, type="Document", canceled=False,
                       errorText="net::ERR_CONTENT_LENGTH_MISMATCH", timestamp=time.time())
        else:
            page.event("Network.loadingFinished", requestId=lid, encodedDataLength=len(body),
                       timestamp=time.time())

    def _run_script(self, plan: list[dict]):
        for d in sorted(plan, key=lambda d: d["at_ms"]):
            delay = self.t0 + d["at_ms"] / 1000 - time.monotonic()
            if delay > 0 and self.cancelled.wait(delay):
                return
            while True:
                if not self.page.open_dialog(self, d["message"], d.get("kind", "alert")):
                    return
                if not d.get("loop"):
                    break


class _Page:
    def __init__(self, emulator: "DevToolsEmulator", target_id: str):
        self.emulator = emulator
        self.target_id = target_id
        self.frame_id = target_id
        self.user_agent = DEFAULT_UA
        self.ws = None
        self.send_lock = threading.Lock()
        self.nav: _Navigation | None = None
        self.nav_lock = threading.Lock()
        self.dialog_closed = threading.Event()
        self.dialog_open = False

    def _send(self, obj):
        ws = self.ws
        if ws is None:
            return
        try:
            with self.send_lock:
                ws.send(json.dumps(obj))
        except ConnectionClosed:
            pass

    def event(self, method, **params):
        self._send({"method": method, "params": params})

    def reply(self, mid, **result):
        self._send({"id": mid, "result": result})

    def finish(self, nav: _Navigation):
        with self.nav_lock:
            if self.nav is nav:
                self.nav = None

    def open_dialog(self, nav: _Navigation, message: str, kind: str) -> bool:
        """Show a dialog and block until it is handled; False if the navigation went away."""
        if nav.cancelled.is_set():
            return False
        kind = kind if kind in ("alert", "confirm", "prompt") else "alert"
        self.dialog_closed.clear()
        self.dialog_open = True
        self.event("Page.javascriptDialogOpening", url=nav.page_url, message=message, type=kind,
                   hasBrowserHandler=False, defaultPrompt="")
        while not self.dialog_closed.wait(0.05):
            if nav.cancelled.is_set():
                return False
        return not nav.cancelled.is_set()

    def cancel_navigation(self):
        with self.nav_lock:
            nav, self.nav = self.nav, None
        if nav is not None:
            nav.cancel()
        if self.dialog_open:
            self.dialog_open = False
            self.dialog_closed.set()

    def handle(self, msg: dict):
        mid, method, params = msg.get("id"), msg.get("method"), msg.get("params") or {}
        if method in ("Page.enable", "Network.enable", "Runtime.enable"):
            self.reply(mid)
        elif method == "Network.setUserAgentOverride":
            self.user_agent = params.get("userAgent") or DEFAULT_UA
            self.reply(mid)
        elif method == "Page.navigate":
            self.cancel_navigation()
            url = params.get("url", "")
            loader_id = uuid.uuid4().hex.upper()
            if url == ABOUT_BLANK or not url.startswith(("http://", "https://")):
                self.reply(mid, frameId=self.frame_id, loaderId=loader_id)
                self.event("Page.frameNavigated", type="Navigation",
                           frame={"id": self.frame_id, "loaderId": loader_id, "url": ABOUT_BLANK})
                return
            with self.nav_lock:
                self.nav = _Navigation(self, url, loader_id, mid)
        elif method == "Page.stopLoading":
            self.cancel_navigation()
            self.reply(mid)
        elif method == "Page.handleJavaScriptDialog":
            if not self.dialog_open:
                self._send({"id": mid, "error": {"code": -32602, "message": "No dialog is showing"}})
                return
            self.dialog_open = False
            self.dialog_closed.set()
            self.reply(mid)
        else:
            self._send({"id": mid, "error": {"code": -32601, "message": f"'{method}' wasn't found"}})


class _DiscoveryHandler(BaseHTTPRequestHandler):
    server: "_DiscoveryServer"

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)

    def _json(self, obj, status=200):
        body = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=UTF-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _dispatch(self, method: str):
        emu = self.server.emulator
        path = self.path
        if path.startswith("/json/version"):
            self._json({"Browser": "HeadlessChrome/69.0.3497.100", "Protocol-Version": "1.3",
                        "User-Agent": DEFAULT_UA})
        elif path.startswith("/json/new"):
            if method != "PUT" and emu.require_put:
                self._json({"error": "Using unsafe HTTP verb GET to invoke /json/new"}, 405)
                return
            self._json(emu.new_target())
        elif path.startswith("/json/close/"):
            ok = emu.close_target(path.rsplit("/", 1)[-1])
            self._json("Target is closing" if ok else f"No such target id: {path}", 200 if ok else 404)
        elif path.rstrip("/") in ("/json", "/json/list"):
            self._json(emu.list_targets())
        else:
            self._json({"error": "not found"}, 404)

    def do_GET(self):
        self._dispatch("GET")

    def do_PUT(self):
        self._dispatch("PUT")


class _DiscoveryServer(ThreadingHTTPServer):
    daemon_threads = True
    emulator: "DevToolsEmulator"


class DevToolsEmulator:
    """Run with ``with DevToolsEmulator(upstream="127.0.0.1:8000") as emu: emu.endpoint``."""

    def __init__(self, upstream: str, bind_host: str = "127.0.0.1", require_put: bool = True,
                 fetch_timeout: float = 60.0):
        host, _, port = upstream.rpartition(":")
        self.upstream = (host or "127.0.0.1", int(port))
        self.bind_host = bind_host
        self.require_put = require_put
        self.fetch_timeout = fetch_timeout
        self.pages: dict[str, _Page] = {}
        self.lock = threading.Lock()
        self.targets_opened = 0
        self._ws = ws_serve(self._ws_handler, bind_host, 0, max_size=None, compression=None)
        self._http = _DiscoveryServer((bind_host, 0), _DiscoveryHandler)
        self._http.emulator = self
        self._threads = [threading.Thread(target=self._ws.serve_forever, daemon=True),
                         threading.Thread(target=self._http.serve_forever, daemon=True)]
        for t in self._threads:
            t.start()

    @property
    def endpoint(self) -> str:
        return f"{self.bind_host}:{self._http.server_address[1]}"

    @property
    def ws_port(self) -> int:
        return self._ws.socket.getsockname()[1]

    def new_target(self) -> dict:
        tid = uuid.uuid4().hex.upper()
        with self.lock:
            self.pages[tid] = _Page(self, tid)
            self.targets_opened += 1
        return self._describe(tid)

    def _describe(self, tid: str) -> dict:
        return {"id": tid, "type": "page", "title": ABOUT_BLANK, "url": ABOUT_BLANK,
                "webSocketDebuggerUrl": f"ws://{self.bind_host}:{self.ws_port}/devtools/page/{tid}"}

    def list_targets(self) -> list[dict]:
        with self.lock:
            return [self._describe(t) for t in self.pages]

    def close_target(self, tid: str) -> bool:
        with self.lock:
            page = self.pages.pop(tid, None)
        if page is None:
            return False
        page.cancel_navigation()
        if page.ws is not None:
            page.ws.close()
        return True

    def _ws_handler(self, ws):
        tid = ws.request.path.rsplit("/", 1)[-1]
        with self.lock:
            page = self.pages.get(tid)
        if page is None or page.ws is not None:
            ws.close(1008, "unknown or busy target")
            return
        page.ws = ws
        try:
            for raw in ws:
                page.handle(json.loads(raw))
        except ConnectionClosed:
            pass
        finally:
            page.cancel_navigation()
            page.ws = None

    def close(self):
        with self.lock:
            pages = list(self.pages.values())
            self.pages.clear()
        for p in pages:
            p.cancel_navigation()
        self._http.shutdown()
        self._http.server_close()
        self._ws.shutdown()
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
