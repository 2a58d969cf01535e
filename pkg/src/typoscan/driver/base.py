from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Protocol
from urllib.parse import urlsplit, urlunsplit


class DriverError(Exception):
    pass


class DriverConnectionError(DriverError):
    def __init__(self, endpoint: str, reason: str):
        super().__init__(f"cannot reach browser backend at {endpoint}: {reason}")
        self.endpoint = endpoint


class SessionClosedError(DriverError):
    pass


@dataclass(frozen=True)
class UserAgentProfile:
    label: str
    ua_string: str
    os_name: str = ""
    browser_name: str = ""
    is_mobile: bool = False

    def __post_init__(self):
        if not self.label:
            raise ValueError("profile label is empty")
        if not self.ua_string:
            raise ValueError(f"profile {self.label!r} has an empty user agent string")

    def to_dict(self) -> dict:
        return {"label": self.label, "ua_string": self.ua_string, "os_name": self.os_name,
                "browser_name": self.browser_name, "is_mobile": self.is_mobile}


# Header values used for the five scan passes, verbatim.
BUILTIN_PROFILES: dict[str, UserAgentProfile] = {p.label: p for p in (
    UserAgentProfile(
        "chrome",
        "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) "
        "Chrome/69.0.3497.100 Safari/537.36",
        "Windows 10", "Chrome 69", False),
    UserAgentProfile(
        "ie",
        "Mozilla/5.0 (Windows NT 6.1; WOW64; Trident/7.0; rv:11.0) like Gecko",
        "Windows 7", "Internet Explorer 11", False),
    UserAgentProfile(
        "iossafari",
        "Mozilla/5.0 (iPhone; CPU iPhone OS 12_0_1 like Mac OS X) AppleWebKit/605.1.15 "
        "(KHTML, like Gecko) Version/12.0 Mobile/15E148 Safari/604.1",
        "iOS 12", "Safari 12", True),
    UserAgentProfile(
        "firefox",
        "Mozilla/5.0 (Windows NT 10.0; WOW64; rv:46.0) Gecko/20100101 Firefox/46.0",
        "Windows 10", "Firefox 46", False),
    UserAgentProfile(
        "androidchrome",
        "Mozilla/5.0 (Linux; Android 8.1.0; TA-1053 Build/OPR1.170623.026) AppleWebKit/537.36 "
        "(KHTML, like Gecko) Chrome/69.0.3497.100 Mobile Safari/537.3",
        "Android 8.1", "Chrome 69", True),
)}

PROFILE_ORDER = tuple(BUILTIN_PROFILES)


class DialogKind(str, enum.Enum):
    ALERT = "alert"
    CONFIRM = "confirm"
    PROMPT = "prompt"
    BEFOREUNLOAD = "beforeunload"


class NavStatus(str, enum.Enum):
    LOADED = "LOADED"
    TIMEOUT = "TIMEOUT"
    NETWORK_ERROR = "NETWORK_ERROR"


@dataclass(frozen=True)
class DialogEvent:
    message: str
    page_url: str
    kind: DialogKind = DialogKind.ALERT
    offset_ms: int = 0

    def __post_init__(self):
        if self.offset_ms < 0:
            raise ValueError("dialog offset_ms must be >= 0")
        object.__setattr__(self, "kind", DialogKind(self.kind))

    def to_dict(self) -> dict:
        return {"message": self.message, "page_url": self.page_url, "kind": self.kind.value,
                "offset_ms": self.offset_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "DialogEvent":
        return cls(d["message"], d["page_url"], DialogKind(d["kind"]), int(d["offset_ms"]))


@dataclass(frozen=True)
class NavigationOutcome:
    requested_url: str
    final_url: str
    status: NavStatus
    dialogs: tuple[DialogEvent, ...] = ()
    duration_ms: int = 0
    truncated: bool = False
    error: str = ""


def canonical_url(url: str) -> str:
    """The form a browser reports for a typed URL: lowercase host, "/" for an empty path."""
    parts = urlsplit(url)
    return urlunsplit((parts.scheme, parts.netloc.lower(), parts.path or "/", parts.query, ""))


DEFAULT_GRACE_MS = 1000
DEFAULT_HARD_CAP_MS = 30000
DEFAULT_DIALOG_CAP = 100


class Session:
    """One browser tab bound to one user agent profile.

    Subclasses implement `_navigate` and `_release`.  `close` is idempotent;
    navigating a closed session raises `SessionClosedError`.
    """

    def __init__(self, profile: UserAgentProfile):
        self.profile = profile
        self.closed = False

    def navigate(self, url: str, grace_ms: int = DEFAULT_GRACE_MS,
                 hard_cap_ms: int = DEFAULT_HARD_CAP_MS) -> NavigationOutcome:
        if self.closed:
            raise SessionClosedError("navigate on a closed session")
        if not url.startswith(("http://", "https://")):
            raise ValueError(f"not an http(s) URL: {url!r}")
        if grace_ms < 0 or hard_cap_ms <= 0:
            raise ValueError("grace_ms must be >= 0 and hard_cap_ms > 0")
        return self._navigate(url, grace_ms, hard_cap_ms)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._release()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _navigate(self, url, grace_ms, hard_cap_ms) -> NavigationOutcome:
        raise NotImplementedError

    def _release(self) -> None:
        pass


class Driver(Protocol):
    dialog_cap: int

    def open_session(self, profile: UserAgentProfile) -> Session: ...


def close_session(session: Session) -> None:
    session.close()
