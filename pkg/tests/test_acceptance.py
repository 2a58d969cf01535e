"""One test group per acceptance criterion.

Each test carries ``@pytest.mark.criterion(n, title)``; the terminal summary
prints a PASS/FAIL line per criterion (see conftest.py).
"""

import itertools
import json
import os
import random
import time
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_generate, ground_truth as oracle_truth
from typoscan.classify import Category, ClassifiedMessage, RuleTable, classify_message
from typoscan.config import load_config
from typoscan.domains import DomainName, Technique, generate, generate_all, parse_domain
from typoscan.driver.base import BUILTIN_PROFILES, DialogEvent, NavStatus, PROFILE_ORDER
from typoscan.driver.devtools import DevToolsDriver
from typoscan.driver.fake import FakeDriver
from typoscan.fixtures.population import generate_population, write_population
from typoscan.manifest import spec_from_dict
from typoscan.pipeline import cmd_pipeline
from typoscan.report import build_report, distinct_counts, message_index, ua_exclusivity
from typoscan.scanner import ScanRecord, build_workload
from typoscan.store import JsonlStore, RecordEnvelope

criterion = pytest.mark.criterion
GRACE, CAP, DIALOG_CAP = 1000, 30000, 100

# The five published user agent header values, copied character for character.
PUBLISHED_UA = {
    "chrome": "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) "
              "Chrome/69.0.3497.100 Safari/537.36",
    "ie": "Mozilla/5.0 (Windows NT 6.1; WOW64; Trident/7.0; rv:11.0) like Gecko",
    "iossafari": "Mozilla/5.0 (iPhone; CPU iPhone OS 12_0_1 like Mac OS X) AppleWebKit/605.1.15 "
                 "(KHTML, like Gecko) Version/12.0 Mobile/15E148 Safari/604.1",
    "firefox": "Mozilla/5.0 (Windows NT 10.0; WOW64; rv:46.0) Gecko/20100101 Firefox/46.0",
    "androidchrome": "Mozilla/5.0 (Linux; Android 8.1.0; TA-1053 Build/OPR1.170623.026) AppleWebKit/537.36 "
                     "(KHTML, like Gecko) Chrome/69.0.3497.100 Mobile Safari/537.3",
}


def spec(domain, load_ms=0, dialogs=(), never_finishes=False, truth=None):
    return spec_from_dict({
        "domain": domain,
        "branches": [{"ua_pattern": "*", "load_ms": load_ms, "never_finishes": never_finishes,
                      "dialogs": list(dialogs)}],
        "truth": truth or {"category": "MISC", "language": "en", "malicious": False},
    })


def devtools_navigate(emu, url, profile="chrome", grace=GRACE, cap=CAP, dialog_cap=DIALOG_CAP):
    drv = DevToolsDriver(emu.endpoint, dialog_cap=dialog_cap)
    with drv.open_session(BUILTIN_PROFILES[profile]) as s:
        return s.navigate(url, grace, cap)


def fake_navigate(specs, url, profile="chrome", grace=GRACE, cap=CAP, dialog_cap=DIALOG_CAP):
    with FakeDriver(specs, dialog_cap=dialog_cap).open_session(BUILTIN_PROFILES[profile]) as s:
        return s.navigate(url, grace, cap)


# --- 1 ---------------------------------------------------------------------------

@criterion(1, "generator output equals brute-force oracle over {a,b,c,1}, length <= 5, < 30 s")
def test_c1_generators_match_oracle(res):
    tables = {"adjacency": res.adjacency, "glyph_map": res.glyph_map, "homophones": res.homophones,
              "keywords": res.keywords, "separators": res.separators}
    start = time.perf_counter()
    checked = 0
    for n in range(1, 6):
        for chars in itertools.product("abc1", repeat=n):
            label = "".join(chars)
            seed = DomainName((label,), "com")
            for t in Technique:
                got = {c.candidate.name for c in generate(seed, t, res)}
                assert got == brute_generate.expected(label, "com", t.value, tables), (label, t)
                checked += 1
    elapsed = time.perf_counter() - start
    assert checked == 8 * sum(4 ** n for n in range(1, 6))
    assert elapsed < 30, f"exhaustive suite took {elapsed:.1f} s"


@criterion(1, "generator output equals brute-force oracle over {a,b,c,1}, length <= 5, < 30 s")
def test_c1_oracle_with_crafted_tables():
    from typoscan.domains import GenResources
    tables = {"adjacency": {"a": ("b",), "b": ("a", "c"), "c": ("b", "1"), "1": ("c",)},
              "glyph_map": {"1": ("l", "i"), "a": ("4",), "c": ("k", "cc")},
              "homophones": {"ab": ("ba", "abb"), "c1": ("see1",)},
              "keywords": ("go", "a1"), "separators": ("", "-")}
    res = GenResources(adjacency=tables["adjacency"], glyph_map=tables["glyph_map"],
                       homophones=tables["homophones"], keywords=tables["keywords"])
    for n in range(1, 5):
        for chars in itertools.product("abc1", repeat=n):
            label = "".join(chars)
            seed = DomainName((label,), "net")
            for t in Technique:
                got = {c.candidate.name for c in generate(seed, t, res)}
                assert got == brute_generate.expected(label, "net", t.value, tables), (label, t)


# --- 2 ---------------------------------------------------------------------------

def _random_seed(rng):
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    n = rng.randint(1, 20)
    label = [rng.choice(alphabet) for _ in range(n)]
    if n > 2:
        for i in range(1, n - 1):
            if rng.random() < 0.05:
                label[i] = "-"
    labels = ["".join(label)]
    if rng.random() < 0.2:
        labels.insert(0, rng.choice(["www", "mail", "shop"]))
    return ".".join(labels + [rng.choice(["com", "de", "cn", "net", "org"])])


def _one_bit_pre_fold(orig, new):
    return any(chr(ord(orig) ^ (1 << b)).lower() == new for b in range(8))


@criterion(2, "10 000 random seeds: candidates re-parse, differ from seed, bitsquats are one bit")
def test_c2_generator_validity(res):
    rng = random.Random(20190330)
    total = 0
    for _ in range(10_000):
        seed = parse_domain(_random_seed(rng))
        for c in generate_all(seed, res, set(Technique)):
            total += 1
            assert c.candidate != seed
            assert parse_domain(c.candidate.name, [seed.tld]) == c.candidate
            if c.technique is Technique.BITSQUAT:
                a, b = seed.labels[-1], c.candidate.labels[-1]
                assert len(a) == len(b)
                diff = [(x, y) for x, y in zip(a, b) if x != y]
                assert len(diff) == 1 and _one_bit_pre_fold(*diff[0]), (a, b)
    assert total > 10_000


# --- 3 ---------------------------------------------------------------------------

@criterion(3, "server-logged User-Agent headers equal the published strings")
def test_c3_builtin_profiles_match_published():
    assert list(BUILTIN_PROFILES) == list(PUBLISHED_UA)
    for label, ua in PUBLISHED_UA.items():
        assert BUILTIN_PROFILES[label].ua_string == ua


@criterion(3, "server-logged User-Agent headers equal the published strings")
def test_c3_user_agents_logged_by_server(fixture_site):
    srv, emu = fixture_site([spec("ua.test", 50)])
    for label in PROFILE_ORDER:
        out = devtools_navigate(emu, "http://ua.test/", label)
        assert out.status is NavStatus.LOADED
    logged = srv.user_agents("ua.test")
    assert logged == [PUBLISHED_UA[p] for p in PROFILE_ORDER]
    assert all(h.encode("latin-1") == PUBLISHED_UA[p].encode("latin-1") for h, p in zip(logged, PROFILE_ORDER))


# --- 4 ---------------------------------------------------------------------------

LOAD = 500
TIMING_SPECS = [
    spec("early.test", LOAD, [{"message": "inside grace", "at_ms": LOAD + 500}]),
    spec("late.test", LOAD, [{"message": "after grace", "at_ms": LOAD + 1500}]),
]


def _check_grace(nav):
    early = nav("http://early.test/")
    late = nav("http://late.test/")
    assert early.status is NavStatus.LOADED and late.status is NavStatus.LOADED
    assert [d.message for d in early.dialogs] == ["inside grace"]
    assert late.dialogs == ()


@criterion(4, "grace window boundary and 30 s hard cap")
def test_c4_grace_window_fake():
    _check_grace(lambda url: fake_navigate(TIMING_SPECS, url))


@criterion(4, "grace window boundary and 30 s hard cap")
def test_c4_grace_window_devtools(fixture_site):
    _, emu = fixture_site(TIMING_SPECS)
    _check_grace(lambda url: devtools_navigate(emu, url))


@criterion(4, "grace window boundary and 30 s hard cap")
def test_c4_never_finishing_page_fake():
    out = fake_navigate([spec("hang.test", 200, never_finishes=True)], "http://hang.test/")
    assert out.status is NavStatus.TIMEOUT
    assert abs(out.duration_ms - CAP) <= 500


@pytest.mark.slow
@criterion(4, "grace window boundary and 30 s hard cap")
def test_c4_never_finishing_page_devtools(fixture_site):
    _, emu = fixture_site([spec("hang.test", 200, never_finishes=True)])
    t0 = time.monotonic()
    out = devtools_navigate(emu, "http://hang.test/")
    wall = (time.monotonic() - t0) * 1000
    assert out.status is NavStatus.TIMEOUT
    assert abs(out.duration_ms - CAP) <= 500, out.duration_ms
    assert wall < CAP + 2000


# --- 5 ---------------------------------------------------------------------------

LOOP_SPECS = [spec("loop.test", 300, [{"message": "you must click", "at_ms": 100, "loop": True}])]


def _check_loop(out, elapsed_ms):
    assert len(out.dialogs) == DIALOG_CAP
    assert out.truncated
    assert {d.message for d in out.dialogs} == {"you must click"}
    assert elapsed_ms < CAP + 2000


@criterion(5, "infinite alert loop: exactly dialog_cap events, truncated, bounded run time")
def test_c5_loop_fake():
    t0 = time.monotonic()
    out = fake_navigate(LOOP_SPECS, "http://loop.test/")
    _check_loop(out, (time.monotonic() - t0) * 1000)


@criterion(5, "infinite alert loop: exactly dialog_cap events, truncated, bounded run time")
def test_c5_loop_devtools(fixture_site):
    _, emu = fixture_site(LOOP_SPECS)
    t0 = time.monotonic()
    out = devtools_navigate(emu, "http://loop.test/")
    _check_loop(out, (time.monotonic() - t0) * 1000)


# --- 6 ---------------------------------------------------------------------------

def _population(tmp_path, seed=42, size=200):
    specs = generate_population(seed, size)
    paths = write_population(specs, tmp_path / "pop")
    return specs, paths


def _run_pipeline(paths, work_dir, **overrides):
    cfg = load_config(paths["config"])
    cfg.work_dir = Path(work_dir)
    for k, v in overrides.items():
        if k in ("pool_size",):
            setattr(cfg.scan, k, v)
        else:
            setattr(cfg, k, v)
    cfg.validate()
    result = cmd_pipeline(cfg)
    return {p.stem: p.read_text("utf-8") for p in result.report}


def _oracle(paths):
    return oracle_truth.tables(json.loads(Path(paths["specs"]).read_text("utf-8")))


@criterion(6, "seed 42 / 200-spec population: report equals independent ground truth")
def test_c6_fake_pipeline_matches_oracle(tmp_path):
    _, paths = _population(tmp_path)
    got = _run_pipeline(paths, tmp_path / "w1")
    expected = _oracle(paths)
    assert sorted(got) == sorted(expected)
    for name in expected:
        assert got[name] == expected[name], name


@criterion(6, "seed 42 / 200-spec population: report equals independent ground truth")
def test_c6_repeated_runs_identical(tmp_path):
    _, paths = _population(tmp_path)
    first = _run_pipeline(paths, tmp_path / "w1")
    again_same_dir = _run_pipeline(paths, tmp_path / "w1")
    fresh_dir = _run_pipeline(paths, tmp_path / "w2")
    assert first == again_same_dir == fresh_dir
    _, paths2 = _population(tmp_path / "again")
    assert Path(paths["specs"]).read_bytes() == Path(paths2["specs"]).read_bytes()


@pytest.mark.slow
@criterion(6, "seed 42 / 200-spec population: report equals independent ground truth")
def test_c6_devtools_route_matches_oracle(tmp_path, fixture_site):
    specs, paths = _population(tmp_path)
    _, emu = fixture_site(specs)
    got = _run_pipeline(paths, tmp_path / "w", driver="devtools", devtools_endpoint=emu.endpoint,
                        pool_size=64)
    assert got == _oracle(paths)


@pytest.mark.slow
@criterion(6, "seed 42 / 200-spec population: report equals independent ground truth")
def test_c6_live_browser_matches_oracle(tmp_path):
    endpoint = os.environ.get("TYPOSCAN_DEVTOOLS_ENDPOINT")
    bind = os.environ.get("TYPOSCAN_FIXTURE_BIND")
    if not endpoint or not bind:
        pytest.skip("set TYPOSCAN_DEVTOOLS_ENDPOINT and TYPOSCAN_FIXTURE_BIND to run against a real browser")
    from typoscan.fixtures.server import serve
    specs, paths = _population(tmp_path)
    with serve(specs, bind):
        got = _run_pipeline(paths, tmp_path / "w", driver="devtools", devtools_endpoint=endpoint,
                            pool_size=16)
    assert got == _oracle(paths)


# --- 7 ---------------------------------------------------------------------------

@criterion(7, "60-message corpus classifies with 100% agreement; malicious rule holds")
def test_c7_corpus_agreement(corpus):
    table = RuleTable.load()
    assert len(corpus) == 60
    per_cat = {}
    for item in corpus:
        per_cat[item["category"]] = per_cat.get(item["category"], 0) + 1
    assert set(per_cat) == {c.value for c in Category} and min(per_cat.values()) >= 4
    langs = {item["language"] for item in corpus}
    assert {"zh", "de"} <= langs
    wrong = []
    for item in corpus:
        got = classify_message(item["message"], table)
        if (got.category.value, got.language) != (item["category"], item["language"]):
            wrong.append((item["message"], got.category.value, got.language))
    assert wrong == []


@criterion(7, "60-message corpus classifies with 100% agreement; malicious rule holds")
def test_c7_malicious_iff_category():
    for c in Category:
        assert c.malicious == (c.value in {"FRAUD", "LOTTERY", "APK"})
        if c.malicious:
            ClassifiedMessage("m", c, "en", True, "r")
        with pytest.raises(ValueError):
            ClassifiedMessage("m", c, "en", not c.malicious, "r")


# --- 8 ---------------------------------------------------------------------------

M1, M2, M3, M4, M5 = ("Gewinner! You won an iPhone", "下载APK", "Mobile Seite öffnen",
                      "Get our app", "Hello there")
MICRO_LABELS = {
    M1: ClassifiedMessage(M1, Category.LOTTERY, "en", True, "hand"),
    M2: ClassifiedMessage(M2, Category.APK, "zh", True, "hand"),
    M3: ClassifiedMessage(M3, Category.MOBILE_SITE, "de", False, "hand"),
    M4: ClassifiedMessage(M4, Category.MOBILE_CLIENT, "en", False, "hand"),
    M5: ClassifiedMessage(M5, Category.MISC, "en", False, "hand"),
}
MICRO = [
    ("a.com", "chrome", [M5]), ("a.com", "ie", []), ("a.com", "iossafari", [M1, M1]),
    ("b.com", "iossafari", [M1]), ("b.com", "androidchrome", [M2]),
    ("c.com", "androidchrome", [M2, M3]), ("c.com", "chrome", []),
    ("d.com", "firefox", [M4]), ("d.com", "ie", []),
    ("e.com", "androidchrome", [M3]), ("e.com", "iossafari", []), ("f.com", "chrome", []),
]


def micro_records():
    out = []
    for i, (host, profile, msgs) in enumerate(MICRO):
        url = "http://" + host
        dialogs = tuple(DialogEvent(m, url + "/", "alert", 10 * k) for k, m in enumerate(msgs))
        out.append(ScanRecord(f"r{i + 1}", "micro", url, url + "/", profile, NavStatus.LOADED, dialogs, "", 900))
    return out


MICRO_EXPECTED = {
    "fig1_messages_single_ua": ({("androidchrome",): 2, ("chrome",): 1, ("firefox",): 1, ("ie",): 0,
                                 ("iossafari",): 1, ("multi",): 0}, 5),
    "fig2_sites_single_ua": ({("androidchrome",): 2, ("chrome",): 0, ("firefox",): 1, ("ie",): 0,
                              ("iossafari",): 0, ("multi",): 2}, 5),
    "fig3_messages_per_category": ({("APK",): 1, ("LOTTERY",): 1, ("MISC",): 1, ("MOBILE",): 2}, 5),
    "fig4_sites_per_category": ({("APK",): 2, ("LOTTERY",): 2, ("MISC",): 1, ("MOBILE",): 3}, 5),
    "fig5_messages_category_ua": ({("APK", "androidchrome"): 1, ("LOTTERY", "iossafari"): 1}, 2),
    "fig6_sites_category_ua": ({("APK", "androidchrome"): 2, ("LOTTERY", "iossafari"): 2}, 3),
    "fig7_sites_per_language": ({("de",): 2, ("en",): 3, ("zh",): 2}, 5),
    "fig8_messages_language_category": ({("APK", "zh"): 1, ("LOTTERY", "en"): 1, ("MISC", "en"): 1,
                                         ("MOBILE", "de"): 1, ("MOBILE", "en"): 1}, 5),
    "fig9_sites_language_category": ({("APK", "zh"): 2, ("LOTTERY", "en"): 2, ("MISC", "en"): 1,
                                      ("MOBILE", "de"): 2, ("MOBILE", "en"): 1}, 5),
    "fig10_messages_language_ua": ({("de", "androidchrome"): 1, ("en", "chrome"): 1, ("en", "firefox"): 1,
                                    ("en", "iossafari"): 1, ("zh", "androidchrome"): 1}, 5),
    "fig11_sites_language_ua": ({("de", "androidchrome"): 2, ("en", "chrome"): 1, ("en", "firefox"): 1,
                                 ("en", "iossafari"): 2, ("zh", "androidchrome"): 2}, 5),
}


@criterion(8, "12-record micro-fixture: counts, exclusivity and distributions by hand")
def test_c8_distinct_counts():
    assert distinct_counts(micro_records(), MICRO_LABELS) == {
        "distinct_urls": 5, "distinct_sites": 5, "distinct_messages": 5,
        "total_alerts": 9, "malicious_alerts": 5}


@criterion(8, "12-record micro-fixture: counts, exclusivity and distributions by hand")
def test_c8_exclusivity():
    ex = ua_exclusivity(micro_records(), list(PROFILE_ORDER))
    assert dict(ex.url_single) == {"androidchrome": 2, "firefox": 1}
    assert ex.url_multi == 2
    assert dict(ex.message_single) == {"androidchrome": 2, "chrome": 1, "firefox": 1, "iossafari": 1}
    assert ex.message_multi == 0
    assert ex.missing_passes == ()


@criterion(8, "12-record micro-fixture: counts, exclusivity and distributions by hand")
def test_c8_tables():
    tables = {t.name: t for t in build_report(micro_records(), MICRO_LABELS, list(PROFILE_ORDER))}
    for name, (rows, total) in MICRO_EXPECTED.items():
        assert tables[name].as_dict() == rows, name
        assert tables[name].total == total, name
    summary = tables["summary"].as_dict()
    assert summary[("single_ua_urls",)] == 3 and summary[("multi_ua_urls",)] == 2
    assert summary[("single_ua_messages",)] == 5 and summary[("multi_ua_messages",)] == 0
    assert tables["summary"].total == 9


@criterion(8, "12-record micro-fixture: counts, exclusivity and distributions by hand")
def test_c8_mobile_merge_keeps_both_fine_categories():
    index = message_index(micro_records())
    assert {MICRO_LABELS[m].category for m in index} >= {Category.MOBILE_SITE, Category.MOBILE_CLIENT}
    assert Category.MOBILE_SITE.display == Category.MOBILE_CLIENT.display == "MOBILE"


# --- 9 ---------------------------------------------------------------------------

_POOLS = ["abcXYZ 0123", "äöüÄÖÜß", "中奖恭喜您下载应用", "😀🎉💰🔥", "é́\t\"\\/", "  "]


def _random_envelope(rng, i):
    msg = "".join(rng.choice(rng.choice(_POOLS)) for _ in range(rng.randint(1, 40)))
    url = f"http://d{i}.test"
    payload = {"job_id": f"j{i}", "run_id": "rt", "url": url, "final_url": url + "/",
               "profile_label": rng.choice(PROFILE_ORDER), "status": "LOADED",
               "duration_ms": rng.randint(0, 30000), "started_at": "2019-03-30T00:00:00.000000Z",
               "dialogs": [{"message": msg, "page_url": url + "/", "kind": "alert", "offset_ms": k}
                           for k in range(rng.randint(0, 3))]}
    if rng.random() < 0.3:
        return RecordEnvelope("classification", {
            "message": msg, "category": "LOTTERY", "language": "de", "malicious": True,
            "matched_rule_id": "r", "rule_table_checksum": "c"}, "2019-03-30T00:00:00Z")
    return RecordEnvelope("scan", payload, "2019-03-30T00:00:00Z")


@criterion(9, "store round-trip of 1 000 envelopes; one corrupt line is skipped and counted")
def test_c9_round_trip(tmp_path):
    rng = random.Random(9)
    envs = [_random_envelope(rng, i) for i in range(1000)]
    store = JsonlStore(tmp_path / "s.jsonl")
    offsets = [store.append(e) for e in envs]
    assert offsets == sorted(offsets) and len(set(offsets)) == 1000
    loaded = store.load_all()
    assert loaded.corrupt_count == 0
    assert loaded.envelopes == envs
    assert b"".join(e.to_line().encode("utf-8") for e in loaded) == store.path.read_bytes()


@criterion(9, "store round-trip of 1 000 envelopes; one corrupt line is skipped and counted")
def test_c9_corrupt_line(tmp_path):
    rng = random.Random(10)
    envs = [_random_envelope(rng, i) for i in range(1000)]
    store = JsonlStore(tmp_path / "s.jsonl", fsync=False)
    store.extend(envs)
    lines = store.path.read_bytes().split(b"\n")
    lines[500] = lines[500][: len(lines[500]) // 2]
    store.path.write_bytes(b"\n".join(lines))
    loaded = store.load_all()
    assert loaded.corrupt_count == 1 and loaded.corrupt_lines == [501]
    assert len(loaded) == 999
    assert loaded.envelopes == envs[:500] + envs[501:]


# --- 10 --------------------------------------------------------------------------

@criterion(10, "build_workload: 5N jobs in 5 contiguous passes")
@settings(max_examples=100, deadline=None)
@given(st.lists(st.from_regex(r"[a-z0-9]{1,10}\.(com|de)", fullmatch=True), min_size=1, max_size=60, unique=True))
def test_c10_workload_shape(domains):
    jobs = build_workload(domains, list(BUILTIN_PROFILES.values()))
    n = len(domains)
    assert len(jobs) == 5 * n
    assert len({j.job_id for j in jobs}) == 5 * n
    for k, label in enumerate(PROFILE_ORDER):
        block = jobs[k * n:(k + 1) * n]
        assert {j.profile_label for j in block} == {label}
        assert [j.url for j in block] == ["http://" + d for d in domains]
