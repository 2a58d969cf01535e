import json
import sys
from pathlib import Path

import pytest

from typoscan.domains import GenResources
from typoscan.fixtures.emulator import DevToolsEmulator
from typoscan.fixtures.server import serve

TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    title_, results = _criteria.setdefault(n, (title, []))
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        results.append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, results = _criteria[n]
        if any(r == "failed" for r in results):
            verdict = "FAIL"
        elif results and all(r == "skipped" for r in results):
            verdict = "SKIP"
        elif results:
            verdict = "PASS"
        else:
            verdict = "NOT RUN"
        skipped = sum(r == "skipped" for r in results)
        note = f" ({skipped} check(s) skipped)" if skipped and verdict == "PASS" else ""
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {title}{note}")


@pytest.fixture(scope="session")
def res():
    return GenResources.default()


@pytest.fixture(scope="session")
def corpus():
    return json.loads((TESTS / "data" / "classifier_corpus.json").read_text("utf-8"))


@pytest.fixture
def fixture_site():
    """Serve `specs` and put the emulated browser in front: yields a starter function."""
    started = []

    def start(specs, **kw):
        srv = serve(specs, **kw)
        emu = DevToolsEmulator(srv.address)
        started.append((srv, emu))
        return srv, emu

    yield start
    for srv, emu in started:
        emu.close()
        srv.stop()
