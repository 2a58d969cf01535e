"""Driver for a debugging-enabled Chromium speaking the DevTools protocol.

Each session owns one page target and one WebSocket.  The User-Agent override
is (re)applied before every navigation; every JavaScript dialog is recorded and
then accepted so the page keeps running.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from collections import deque

from websockets.exceptions import WebSocketException
from websockets.sync.client import connect

from .base import (DEFAULT_DIALOG_CAP, DialogEvent, DialogKind, DriverConnectionError, DriverError,
                   NavigationOutcome, NavStatus, Session, UserAgentProfile)

log = logging.getLogger(__name__)

ABOUT_BLANK = "about:blank"


class CdpConnection:
    """JSON-RPC over a WebSocket; events received while waiting for a reply are queued."""

    def __init__(self, ws_url: str, open_timeout: float = 10.0):
        self.ws = connect(ws_url, max_size=None, open_timeout=open_timeout, compression=None)
        self.ids = itertools.count(1)
        self.backlog: deque[dict] = deque()
        self.send_lock = threading.Lock()

    def send(self, method: str, **params) -> int:
        mid = next(self.ids)
        with self.send_lock:
            self.ws.send(json.dumps({"id": mid, "method": method, "params": params}))
        return mid

    def recv(self, timeout: float | None) -> dict | None:
        if self.backlog:
            return self.backlog.popleft()
        try:
            raw = self.ws.recv(timeout=max(0.0, timeout) if timeout is not None else None)
        except TimeoutError:
            return None
        return json.loads(raw)

    def call(self, method: str, timeout: float = 10.0, **params) -> dict:
        mid = self.send(method, **params)
        deadline = time.monotonic() + timeout
        held = []
        try:
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise DriverError(f"{method}: no reply within {timeout}s")
                try:
                    raw = self.ws.recv(timeout=remaining)
                except TimeoutError:
                    continue
                msg = json.loads(raw)
                if msg.get("id") == mid:
                    if "error" in msg:
                        raise DriverError(f"{method}: {msg['error'].get('message')}")
                    return msg.get("result", {})
                held.append(msg)
        finally:
            self.backlog.extend(held)

    def close(self):
        try:
            self.ws.close()
        except Exception:  # already gone
            pass


class DevToolsSession(Session):
    def __init__(self, driver: "DevToolsDriver", profile: UserAgentProfile, target: dict):
        super().__init__(profile)
        self.driver = driver
        self.target_id = target.get("id", "")
        try:
            self.conn = CdpConnection(target["webSocketDebuggerUrl"], driver.timeout)
        except (OSError, WebSocketException, KeyError) as e:
            driver._close_target(self.target_id)
            raise DriverConnectionError(driver.endpoint, f"websocket: {e}") from None
        self.conn.call("Page.enable")
        self.conn.call("Network.enable")
        self._override_ua()

    def _override_ua(self):
        self.conn.call("Network.setUserAgentOverride", userAgent=self.profile.ua_string)

    def _dismiss(self, kind: str):
        params = {"accept": True}
        if kind == DialogKind.PROMPT.value:
            params["promptText"] = ""
        self.conn.send("Page.handleJavaScriptDialog", **params)

    def _navigate(self, url, grace_ms, hard_cap_ms):
        try:
            return self._observe(url, grace_ms, hard_cap_ms)
        except (WebSocketException, OSError) as e:
            raise DriverError(f"lost connection to page target: {e}") from None

    def _observe(self, url, grace_ms, hard_cap_ms):
        cap = self.driver.dialog_cap
        self._override_ua()
        t0 = time.monotonic()
        nav_id = self.conn.send("Page.navigate", url=url)
        hard_deadline = t0 + hard_cap_ms / 1000
        loader_id = None
        finished: dict[str, float] = {}
        failed: dict[str, str] = {}
        doc_url: dict[str, str] = {}
        frame_url = ""
        dialogs: list[DialogEvent] = []
        truncated = False
        error = ""
        status = None

        while True:
            now = time.monotonic()
            load_at = finished.get(loader_id) if loader_id else None
            end = hard_deadline if load_at is None else min(load_at + grace_ms / 1000, hard_deadline)
            if now >= end:
                status = NavStatus.LOADED if load_at is not None and load_at <= hard_deadline else NavStatus.TIMEOUT
                end_at = end
                break
            msg = self.conn.recv(end - now)
            if msg is None:
                continue
            if msg.get("id") == nav_id:
                if "error" in msg:
                    error = msg["error"].get("message", "navigate failed")
                else:
                    res = msg.get("result", {})
                    error = res.get("errorText", "")
                    loader_id = res.get("loaderId")
                if error:
                    status, end_at = NavStatus.NETWORK_ERROR, time.monotonic()
                    break
                if loader_id in failed:
                    status, end_at, error = NavStatus.NETWORK_ERROR, time.monotonic(), failed[loader_id]
                    break
                continue
            method = msg.get("method")
            p = msg.get("params", {})
            if method == "Page.javascriptDialogOpening":
                kind = p.get("type", "alert")
                if len(dialogs) < cap:
                    offset = int(round((time.monotonic() - t0) * 1000))
                    dialogs.append(DialogEvent(p.get("message", ""), p.get("url") or frame_url or url,
                                               DialogKind(kind) if kind in DialogKind._value2member_map_
                                               else DialogKind.ALERT, offset))
                else:
                    truncated = True
                self._dismiss(kind)
            elif method == "Network.requestWillBeSent":
                if p.get("type") == "Document" and p.get("requestId") == p.get("loaderId"):
                    doc_url[p["requestId"]] = p.get("request", {}).get("url", url)
            elif method == "Network.loadingFinished":
                finished.setdefault(p.get("requestId"), time.monotonic())
            elif method == "Network.loadingFailed":
                if not p.get("canceled"):
                    failed[p.get("requestId")] = p.get("errorText", "loading failed")
                    if p.get("requestId") == loader_id:
                        status, end_at, error = NavStatus.NETWORK_ERROR, time.monotonic(), failed[loader_id]
                        break
            elif method == "Page.frameNavigated":
                frame = p.get("frame", {})
                if not frame.get("parentId") and frame.get("url") not in (None, "", ABOUT_BLANK):
                    frame_url = frame["url"]

        final_url = frame_url or doc_url.get(loader_id) or url
        duration = int(round((min(end_at, hard_deadline) - t0) * 1000))
        self._reset()
        if status is NavStatus.NETWORK_ERROR:
            return NavigationOutcome(url, final_url, status, (), duration, False, error)
        dialogs = [d for d in dialogs if d.offset_ms <= duration]
        return NavigationOutcome(url, final_url, status, tuple(dialogs), duration, truncated)

    def _reset(self, timeout: float = 5.0):
        """Leave the page on about:blank, dismissing anything still popping up."""
        self.conn.send("Page.stopLoading")
        nav_id = self.conn.send("Page.navigate", url=ABOUT_BLANK)
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            msg = self.conn.recv(deadline - time.monotonic())
            if msg is None:
                continue
            if msg.get("id") == nav_id:
                return
            if msg.get("method") == "Page.javascriptDialogOpening":
                self._dismiss(msg.get("params", {}).get("type", "alert"))
        log.warning("page %s did not return to about:blank", self.target_id)

    def _release(self):
        self.conn.close()
        self.driver._close_target(self.target_id)


class DevToolsDriver:
    """Opens one page target per session on the browser at `endpoint` (host:port)."""

    def __init__(self, endpoint: str = "127.0.0.1:9222", dialog_cap: int = DEFAULT_DIALOG_CAP,
                 timeout: float = 10.0):
        self.endpoint = endpoint
        self.dialog_cap = dialog_cap
        self.timeout = timeout

    def _http(self, path: str, method: str = "GET"):
        req = urllib.request.Request(f"http://{self.endpoint}{path}", method=method)
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            body = resp.read().decode("utf-8")
        try:
            return json.loads(body)
        except json.JSONDecodeError:
            return body

    def version(self) -> dict:
        try:
            return self._http("/json/version")
        except (OSError, urllib.error.URLError) as e:
            raise DriverConnectionError(self.endpoint, str(e)) from None

    def open_session(self, profile: UserAgentProfile) -> DevToolsSession:
        path = "/json/new?" + urllib.parse.quote(ABOUT_BLANK, safe=":")
        try:
            try:
                target = self._http(path, "PUT")
            except urllib.error.HTTPError as e:
                if e.code != 405:
                    raise
                target = self._http(path, "GET")
        except (OSError, urllib.error.URLError) as e:
            raise DriverConnectionError(self.endpoint, str(e)) from None
        if not isinstance(target, dict) or "webSocketDebuggerUrl" not in target:
            raise DriverConnectionError(self.endpoint, f"unexpected /json/new reply: {target!r}")
        return DevToolsSession(self, profile, target)

    def _close_target(self, target_id: str):
        if not target_id:
            return
        try:
            self._http(f"/json/close/{target_id}")
        except (OSError, urllib.error.URLError):
            log.debug("closing target %s failed", target_id)
