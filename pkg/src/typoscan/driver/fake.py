"""Scripted driver that replays a fixture manifest in virtual time.

No browser and no network: each navigation is computed from the matching
branch, so outcomes are exact and repeatable.  Window rules are the same as
the DevTools driver's (load-finished + grace, capped by the hard cap).
"""

from __future__ import annotations

import threading
import time
from typing import Iterable
from urllib.parse import urlsplit

from ..manifest import Branch, FixtureSpec, index_by_domain, load_manifest
from .base import (DEFAULT_DIALOG_CAP, DialogEvent, NavigationOutcome, NavStatus, Session,
                   UserAgentProfile, canonical_url)


def replay_branch(branch: Branch | None, url: str, grace_ms: int, hard_cap_ms: int,
                  dialog_cap: int) -> NavigationOutcome:
    if branch is None:
        branch = Branch("*")
    if branch.never_finishes or branch.load_ms > hard_cap_ms:
        end, status = hard_cap_ms, NavStatus.TIMEOUT
    else:
        end, status = min(branch.load_ms + grace_ms, hard_cap_ms), NavStatus.LOADED

    page = canonical_url(url)
    fired: list[DialogEvent] = []
    truncated = False
    for d in sorted(branch.dialogs, key=lambda d: d.at_ms):
        if d.at_ms > end:
            break
        if d.loop:
            # the loop blocks the page's script thread: nothing scheduled later runs
            while len(fired) < dialog_cap:
                fired.append(DialogEvent(d.message, page, d.kind, d.at_ms))
            truncated = True
            break
        if len(fired) == dialog_cap:
            truncated = True
            break
        fired.append(DialogEvent(d.message, page, d.kind, d.at_ms))
    return NavigationOutcome(url, page, status, tuple(fired), end, truncated)


class FakeSession(Session):
    def __init__(self, driver: "FakeDriver", profile: UserAgentProfile):
        super().__init__(profile)
        self.driver = driver

    def _navigate(self, url, grace_ms, hard_cap_ms):
        return self.driver._run(self, url, grace_ms, hard_cap_ms)

    def _release(self):
        self.driver._forget(self)


class FakeDriver:
    """Driver backed by a manifest.  Unknown hosts yield NETWORK_ERROR.

    `delay_s` makes each navigation take real time, which lets tests observe
    pool concurrency; `max_in_flight` records the highest concurrent count.
    """

    def __init__(self, specs: Iterable[FixtureSpec], dialog_cap: int = DEFAULT_DIALOG_CAP,
                 delay_s: float = 0.0):
        self.specs = index_by_domain(list(specs))
        self.dialog_cap = dialog_cap
        self.delay_s = delay_s
        self._lock = threading.Lock()
        self.open_sessions: set[FakeSession] = set()
        self.in_flight = 0
        self.max_in_flight = 0
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_file(cls, path, **kw) -> "FakeDriver":
        return cls(load_manifest(path), **kw)

    def open_session(self, profile: UserAgentProfile) -> FakeSession:
        s = FakeSession(self, profile)
        with self._lock:
            self.open_sessions.add(s)
        return s

    def _forget(self, session):
        with self._lock:
            self.open_sessions.discard(session)

    def _run(self, session, url, grace_ms, hard_cap_ms):
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.calls.append((url, session.profile.label))
        try:
            if self.delay_s:
                time.sleep(self.delay_s)
            host = (urlsplit(url).hostname or "").lower()
            spec = self.specs.get(host)
            if spec is None:
                return NavigationOutcome(url, url, NavStatus.NETWORK_ERROR, error="net::ERR_NAME_NOT_RESOLVED")
            branch = spec.branch_for(session.profile.ua_string)
            return replay_branch(branch, url, grace_ms, hard_cap_ms, self.dialog_cap)
        finally:
            with self._lock:
                self.in_flight -= 1
