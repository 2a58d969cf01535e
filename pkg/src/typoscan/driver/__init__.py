from .base import (BUILTIN_PROFILES, DEFAULT_DIALOG_CAP, DEFAULT_GRACE_MS, DEFAULT_HARD_CAP_MS,
                   PROFILE_ORDER, DialogEvent, DialogKind, Driver, DriverConnectionError, DriverError,
                   NavigationOutcome, NavStatus, Session, SessionClosedError, UserAgentProfile,
                   canonical_url, close_session)
from .fake import FakeDriver, replay_branch


def open_session(driver: Driver, profile: UserAgentProfile) -> Session:
    return driver.open_session(profile)


def navigate(session: Session, url: str, grace_ms: int = DEFAULT_GRACE_MS,
             hard_cap_ms: int = DEFAULT_HARD_CAP_MS) -> NavigationOutcome:
    return session.navigate(url, grace_ms, hard_cap_ms)
