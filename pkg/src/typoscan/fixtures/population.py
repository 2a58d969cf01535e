"""Synthetic typosquat populations with known ground truth.

Every fixture domain is a real generator candidate of one of the bundled brand
seeds, so a population can be pushed through the whole pipeline (generate,
resolve against a static zone, scan, classify, report).  Messages come from a
bundled bank whose entries are labelled with the category and language the
shipped rule table assigns them.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..classify import Category, ClassifiedMessage
from ..domains import DomainName, GenResources, Technique, generate_all, parse_domain
from ..driver.base import (BUILTIN_PROFILES, DEFAULT_DIALOG_CAP, DEFAULT_GRACE_MS, DEFAULT_HARD_CAP_MS,
                           PROFILE_ORDER)
from ..driver.fake import replay_branch
from ..manifest import (CATEGORY_NAMES, MALICIOUS_CATEGORIES, Branch, FixtureSpec, ScriptedDialog,
                        Truth, dump_manifest)
from ..report import ReportTable, build_report
from ..scanner import ScanRecord, url_for

# A substring of exactly one built-in User-Agent string, used as the branch pattern.
UA_MARKERS = {
    "chrome": "Win64; x64",
    "ie": "Trident/7.0",
    "iossafari": "iPhone",
    "firefox": "Firefox/46.0",
    "androidchrome": "Android 8.1.0",
}
MOBILE = ("iossafari", "androidchrome")
DESKTOP = ("chrome", "ie", "firefox")
STEP_MS = 100


class MixError(ValueError):
    pass


@dataclass(frozen=True)
class MixEntry:
    """One truth profile: a category/language shown to `targets`.  category None means no dialogs."""
    category: str | None
    language: str = "und"
    targets: tuple[str, ...] = PROFILE_ORDER
    weight: float = 0.0


DEFAULT_MIX: tuple[MixEntry, ...] = (
    MixEntry("APK", "zh", ("androidchrome",), 0.12),
    MixEntry("APK", "zh", MOBILE, 0.08),
    MixEntry("LOTTERY", "de", MOBILE, 0.12),
    MixEntry("LOTTERY", "en", ("iossafari",), 0.06),
    MixEntry("LOTTERY", "zh", ("androidchrome",), 0.04),
    MixEntry("FRAUD", "zh", MOBILE, 0.06),
    MixEntry("FRAUD", "en", PROFILE_ORDER, 0.03),
    MixEntry("GAMBLING", "zh", PROFILE_ORDER, 0.08),
    MixEntry("MOBILE_SITE", "zh", MOBILE, 0.06),
    MixEntry("MOBILE_CLIENT", "en", ("iossafari",), 0.03),
    MixEntry("MOBILE_CLIENT", "de", ("androidchrome",), 0.02),
    MixEntry("ERRORS", "en", PROFILE_ORDER, 0.05),
    MixEntry("ERRORS", "de", PROFILE_ORDER, 0.02),
    MixEntry("DOWNLOAD", "en", DESKTOP, 0.04),
    MixEntry("ADULT", "en", PROFILE_ORDER, 0.03),
    MixEntry("ADULT", "zh", PROFILE_ORDER, 0.02),
    MixEntry("MISC", "en", PROFILE_ORDER, 0.04),
    MixEntry("MISC", "de", ("chrome",), 0.02),
    MixEntry(None, "und", (), 0.08),
)


def _data_text(name: str, path=None) -> str:
    if path is not None:
        return Path(path).read_text("utf-8")
    return resources.files("typoscan.data").joinpath(name).read_text("utf-8")


def load_message_bank(path=None) -> dict[tuple[str, str], tuple[str, ...]]:
    raw = json.loads(_data_text("fixture_messages.json", path))
    bank = {}
    for key, msgs in raw.items():
        cat, _, lang = key.partition("/")
        if cat not in CATEGORY_NAMES or not lang or not msgs:
            raise MixError(f"bad message bank entry {key!r}")
        bank[(cat, lang)] = tuple(msgs)
    return bank


def load_brands(path=None) -> list[DomainName]:
    return [parse_domain(d) for d in json.loads(_data_text("brands.json", path))]


def parse_mix(text: str, bank: Mapping[tuple[str, str], Sequence[str]] | None = None) -> tuple[MixEntry, ...]:
    """Parse ``CAT[/lang][@p1+p2]=weight,...`` (e.g. ``LOTTERY/de@iossafari=0.5,APK=0.5``).

    Omitted language picks the first of en, de, zh present in the bank; omitted
    targets mean every built-in profile.  ``NONE`` stands for silent sites.
    """
    bank = load_message_bank() if bank is None else bank
    entries = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        lhs, eq, weight = part.rpartition("=")
        if not eq:
            raise MixError(f"mix entry {part!r} needs =weight")
        lhs, _, targets = lhs.partition("@")
        cat, _, lang = lhs.partition("/")
        cat = cat.strip().upper()
        try:
            w = float(weight)
        except ValueError:
            raise MixError(f"bad weight in {part!r}") from None
        if cat == "NONE":
            entries.append(MixEntry(None, "und", (), w))
            continue
        if not lang:
            lang = next((l for l in ("en", "de", "zh") if (cat, l) in bank), "en")
        tgt = tuple(t for t in targets.split("+") if t) if targets else PROFILE_ORDER
        entries.append(MixEntry(cat, lang, tgt, w))
    return tuple(entries)


def validate_mix(mix: Sequence[MixEntry], bank: Mapping[tuple[str, str], Sequence[str]]) -> None:
    if not mix:
        raise MixError("mix is empty")
    for e in mix:
        if e.weight < 0 or not math.isfinite(e.weight):
            raise MixError(f"negative or non-finite weight for {e.category}")
        if e.category is None:
            if e.targets:
                raise MixError("a silent mix entry cannot have targets")
            continue
        if e.category not in CATEGORY_NAMES:
            raise MixError(f"unknown category {e.category!r}")
        if (e.category, e.language) not in bank:
            raise MixError(f"no fixture messages for {e.category}/{e.language}")
        if not e.targets or any(t not in UA_MARKERS for t in e.targets):
            raise MixError(f"targets must be a non-empty subset of {', '.join(PROFILE_ORDER)}")
    total = sum(e.weight for e in mix)
    if not math.isclose(total, 1.0, abs_tol=1e-9):
        raise MixError(f"mix weights sum to {total}, not 1")


def _candidate_pool(brands: Sequence[DomainName], res: GenResources) -> list[tuple[DomainName, str]]:
    pool, seen = [], set()
    for b in brands:
        for c in sorted(generate_all(b, res, set(Technique)), key=lambda c: c.candidate.name):
            if c.candidate.name not in seen:
                seen.add(c.candidate.name)
                pool.append((b, c.candidate.name))
    return pool


def _dialogs(rng: random.Random, load_ms: int, messages: Sequence[str]) -> tuple[ScriptedDialog, ...]:
    n = rng.choice((1, 1, 1, 2, 3))
    # quantised offsets, all inside the grace window of a page that loads at load_ms
    offsets = sorted(rng.sample(range(0, load_ms + 501, STEP_MS), n))
    return tuple(ScriptedDialog(rng.choice(messages), at, rng.choice(("alert", "alert", "confirm", "prompt")))
                 for at in offsets)


def generate_population(seed: int, size: int, mix: Sequence[MixEntry] = DEFAULT_MIX, *,
                        bank: Mapping[tuple[str, str], Sequence[str]] | None = None,
                        brands: Sequence[DomainName] | None = None,
                        res: GenResources | None = None) -> list[FixtureSpec]:
    """`size` fixture specs drawn deterministically from `seed`."""
    if size < 1:
        raise MixError("population size must be >= 1")
    bank = load_message_bank() if bank is None else bank
    mix = tuple(mix)
    validate_mix(mix, bank)
    pool = _candidate_pool(load_brands() if brands is None else brands, res or GenResources.default())
    if size > len(pool):
        raise MixError(f"population of {size} exceeds the {len(pool)} available candidate domains")
    rng = random.Random(seed)
    picks = rng.sample(pool, size)
    entries = rng.choices(mix, weights=[e.weight for e in mix], k=size)
    specs = []
    for (_, domain), e in zip(picks, entries):
        load_ms = STEP_MS * rng.randint(1, 15)
        if e.category is None:
            specs.append(FixtureSpec(domain, (Branch("*", load_ms),), Truth()))
            continue
        dialogs = _dialogs(rng, load_ms, bank[(e.category, e.language)])
        targets = tuple(p for p in PROFILE_ORDER if p in e.targets)
        if set(targets) == set(PROFILE_ORDER):
            branches = (Branch("*", load_ms, dialogs),)
        else:
            branches = tuple(Branch(UA_MARKERS[p], load_ms, dialogs) for p in targets)
            branches += (Branch("*", STEP_MS * rng.randint(1, 15)),)
        truth = Truth(e.category, e.language, e.category in MALICIOUS_CATEGORIES, targets)
        specs.append(FixtureSpec(domain, branches, truth))
    return specs


def seed_brands(specs: Iterable[FixtureSpec], brands: Sequence[DomainName] | None = None,
                res: GenResources | None = None) -> list[DomainName]:
    """The brand seeds whose candidates cover every fixture domain, in bundled order."""
    brands = load_brands() if brands is None else brands
    owner = {}
    for b, name in _candidate_pool(brands, res or GenResources.default()):
        owner.setdefault(name, b)
    needed = set()
    for s in specs:
        if s.domain not in owner:
            raise MixError(f"{s.domain} is not a candidate of any bundled brand")
        needed.add(owner[s.domain])
    return [b for b in brands if b in needed]


def ground_truth(specs: Sequence[FixtureSpec], profiles: Sequence[str] = PROFILE_ORDER,
                 grace_ms: int = DEFAULT_GRACE_MS, hard_cap_ms: int = DEFAULT_HARD_CAP_MS,
                 dialog_cap: int = DEFAULT_DIALOG_CAP) -> list[ReportTable]:
    """Report tables implied by the specs: replayed dialogs labelled with each spec's truth."""
    records, labels = [], {}
    for label in profiles:
        ua = BUILTIN_PROFILES[label].ua_string
        for i, s in enumerate(specs):
            url = url_for(s.domain)
            out = replay_branch(s.branch_for(ua), url, grace_ms, hard_cap_ms, dialog_cap)
            records.append(ScanRecord(f"{label}-{i}", "truth", url, out.final_url, label, out.status,
                                      out.dialogs, "", out.duration_ms))
            for d in out.dialogs:
                if s.truth.category is None:
                    raise MixError(f"{s.domain}: silent truth but dialogs are shown")
                cat = Category(s.truth.category)
                labels.setdefault(d.message, ClassifiedMessage(d.message, cat, s.truth.language,
                                                               cat.malicious, "truth"))
    return build_report(records, labels, profiles)


def write_population(specs: Sequence[FixtureSpec], out_dir, *, brands: Sequence[DomainName] | None = None,
                     res: GenResources | None = None) -> dict[str, Path]:
    """Write the manifest, a seed list, a static DNS zone and a pipeline config into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"specs": out / "specs.json", "seeds": out / "seeds.csv", "zone": out / "zone.json",
             "config": out / "config.json"}
    dump_manifest(specs, paths["specs"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "domain"])
    for rank, b in enumerate(seed_brands(specs, brands, res), start=1):
        w.writerow([rank, b.name])
    paths["seeds"].write_text(buf.getvalue(), encoding="utf-8", newline="")
    zone = {s.domain: ["127.0.0.1"] for s in sorted(specs, key=lambda s: s.domain)}
    paths["zone"].write_text(json.dumps(zone, indent=1) + "\n", encoding="utf-8", newline="")
    config = {
        "seeds": "seeds.csv",
        "work_dir": "work",
        "manifest": "specs.json",
        "resolver": {"zone": "zone.json", "rate_per_ns": 100000, "max_in_flight": 32},
        "scan": {"pool_size": 16, "run_id": "fixture-run"},
    }
    paths["config"].write_text(json.dumps(config, indent=1) + "\n", encoding="utf-8", newline="")
    return paths
