import socket

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from typoscan.driver import BUILTIN_PROFILES, navigate, open_session
from typoscan.driver.base import (DialogKind, DriverConnectionError, NavStatus, SessionClosedError,
                                  UserAgentProfile, canonical_url)
from typoscan.driver.devtools import DevToolsDriver
from typoscan.driver.fake import FakeDriver, replay_branch
from typoscan.manifest import Branch, ScriptedDialog, spec_from_dict

CHROME = BUILTIN_PROFILES["chrome"]
IPHONE = BUILTIN_PROFILES["iossafari"]


def site(domain, branches):
    return spec_from_dict({"domain": domain, "branches": branches})


SPECS = [
    site("plain.test", [{"ua_pattern": "*", "load_ms": 800,
                         "dialogs": [{"message": "edge", "at_ms": 1800},
                                     {"message": "past", "at_ms": 1801}]}]),
    site("mobile.test", [{"ua_pattern": "iPhone", "load_ms": 300,
                          "dialogs": [{"message": "iphone only", "at_ms": 100, "kind": "confirm"}]},
                         {"ua_pattern": "*", "load_ms": 300}]),
    site("slow.test", [{"ua_pattern": "*", "load_ms": 45000,
                        "dialogs": [{"message": "early", "at_ms": 50}]}]),
    site("many.test", [{"ua_pattern": "*", "load_ms": 100,
                        "dialogs": [{"message": f"m{i}", "at_ms": i} for i in range(10)]}]),
]


def test_profile_table():
    assert list(BUILTIN_PROFILES) == ["chrome", "ie", "iossafari", "firefox", "androidchrome"]
    assert [p.is_mobile for p in BUILTIN_PROFILES.values()] == [False, False, True, False, True]
    assert BUILTIN_PROFILES["ie"].os_name == "Windows 7"
    with pytest.raises(ValueError):
        UserAgentProfile("x", "")


def test_canonical_url():
    assert canonical_url("http://GoGle.com") == "http://gogle.com/"
    assert canonical_url("http://a.com/x?q=1#frag") == "http://a.com/x?q=1"


def test_grace_boundary_is_inclusive():
    with FakeDriver(SPECS).open_session(CHROME) as s:
        out = s.navigate("http://plain.test", grace_ms=1000)
    assert out.status is NavStatus.LOADED
    assert [d.message for d in out.dialogs] == ["edge"]
    assert out.duration_ms == 1800
    assert out.final_url == "http://plain.test/"


def test_load_beyond_cap_is_timeout():
    with FakeDriver(SPECS).open_session(CHROME) as s:
        out = s.navigate("http://slow.test", hard_cap_ms=30000)
    assert out.status is NavStatus.TIMEOUT and out.duration_ms == 30000
    assert [d.message for d in out.dialogs] == ["early"]


def test_branch_selection_by_user_agent():
    drv = FakeDriver(SPECS)
    with drv.open_session(IPHONE) as s:
        out = s.navigate("http://mobile.test")
    assert [(d.message, d.kind) for d in out.dialogs] == [("iphone only", DialogKind.CONFIRM)]
    with drv.open_session(CHROME) as s:
        assert s.navigate("http://mobile.test").dialogs == ()


def test_dialog_cap_without_loop():
    with FakeDriver(SPECS, dialog_cap=4).open_session(CHROME) as s:
        out = s.navigate("http://many.test")
    assert [d.message for d in out.dialogs] == ["m0", "m1", "m2", "m3"]
    assert out.truncated


def test_unknown_host_is_network_error():
    with FakeDriver(SPECS).open_session(CHROME) as s:
        out = s.navigate("http://nowhere.test")
    assert out.status is NavStatus.NETWORK_ERROR and out.dialogs == ()


def test_session_lifecycle():
    drv = FakeDriver(SPECS)
    s = open_session(drv, CHROME)
    assert navigate(s, "http://plain.test").status is NavStatus.LOADED
    with pytest.raises(ValueError):
        s.navigate("ftp://plain.test")
    with pytest.raises(ValueError):
        s.navigate("http://plain.test", grace_ms=-1)
    s.close()
    s.close()
    assert drv.open_sessions == set()
    with pytest.raises(SessionClosedError):
        s.navigate("http://plain.test")


dialog_st = st.builds(ScriptedDialog, st.text(min_size=1, max_size=5), st.integers(0, 40000),
                      st.sampled_from(["alert", "confirm", "prompt"]), st.booleans())


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 40000), st.lists(dialog_st, max_size=8), st.booleans(),
       st.integers(0, 3000), st.integers(1, 40000), st.integers(1, 20))
def test_replay_window_properties(load_ms, dialogs, never, grace, cap, dialog_cap):
    out = replay_branch(Branch("*", load_ms, tuple(dialogs), never), "http://p.test", grace, cap, dialog_cap)
    assert out.duration_ms <= cap
    assert len(out.dialogs) <= dialog_cap
    assert all(d.offset_ms <= out.duration_ms for d in out.dialogs)
    assert [d.offset_ms for d in out.dialogs] == sorted(d.offset_ms for d in out.dialogs)
    if out.status is NavStatus.TIMEOUT:
        assert out.duration_ms == cap
    else:
        assert out.duration_ms == min(load_ms + grace, cap)


# --- DevTools driver through the emulator ---------------------------------------

def test_devtools_dialog_kinds_and_url(fixture_site):
    specs = [site("Kinds.test", [{"ua_pattern": "*", "load_ms": 100, "dialogs": [
        {"message": "a", "at_ms": 50, "kind": "alert"},
        {"message": "c", "at_ms": 150, "kind": "confirm"},
        {"message": "p", "at_ms": 250, "kind": "prompt"}]}])]
    _, emu = fixture_site(specs)
    drv = DevToolsDriver(emu.endpoint)
    assert "Browser" in drv.version()
    with drv.open_session(CHROME) as s:
        out = s.navigate("http://KINDS.test", grace_ms=600)
        again = s.navigate("http://kinds.test/", grace_ms=600)
    assert out.status is NavStatus.LOADED
    assert [(d.message, d.kind.value) for d in out.dialogs] == [("a", "alert"), ("c", "confirm"), ("p", "prompt")]
    assert out.final_url == again.final_url == "http://kinds.test/"
    assert all(d.page_url == "http://kinds.test/" for d in out.dialogs)
    assert [d.message for d in again.dialogs] == ["a", "c", "p"]
    assert emu.list_targets() == []


def test_devtools_unknown_host_is_network_error(fixture_site):
    _, emu = fixture_site(SPECS)
    with DevToolsDriver(emu.endpoint).open_session(CHROME) as s:
        out = s.navigate("http://nowhere.test")
    assert out.status is NavStatus.NETWORK_ERROR
    assert out.error


def test_devtools_targeting_by_user_agent(fixture_site):
    srv, emu = fixture_site(SPECS)
    drv = DevToolsDriver(emu.endpoint)
    with drv.open_session(IPHONE) as s:
        mobile = s.navigate("http://mobile.test", grace_ms=300)
    with drv.open_session(CHROME) as s:
        desktop = s.navigate("http://mobile.test", grace_ms=300)
    assert [d.message for d in mobile.dialogs] == ["iphone only"]
    assert desktop.dialogs == ()
    assert srv.user_agents("mobile.test") == [IPHONE.ua_string, CHROME.ua_string]


def _closed_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_devtools_unreachable_endpoint():
    drv = DevToolsDriver(f"127.0.0.1:{_closed_port()}", timeout=1)
    with pytest.raises(DriverConnectionError, match="cannot reach"):
        drv.version()
    with pytest.raises(DriverConnectionError):
        drv.open_session(CHROME)
