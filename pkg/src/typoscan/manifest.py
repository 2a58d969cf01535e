"""Fixture manifest: the JSON file that drives both the fixture HTTP server and
the scripted fake driver.

    [{"domain": "gogle.com",
      "branches": [{"ua_pattern": "iPhone", "load_ms": 800, "never_finishes": false,
                    "dialogs": [{"message": "...", "at_ms": 300, "kind": "alert", "loop": false}]},
                   {"ua_pattern": "*", "load_ms": 500, "dialogs": []}],
      "truth": {"category": "LOTTERY", "language": "de", "malicious": true,
                "targeted_profiles": ["iossafari"]}}]

Branches are tried in order; the first whose `ua_pattern` is ``*`` or a
substring of the request's User-Agent wins.  `at_ms` counts from navigation
start.  A dialog with ``loop: true`` re-opens forever once it first fires.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from urllib.parse import urlsplit

DIALOG_KINDS = ("alert", "confirm", "prompt", "beforeunload")
MALICIOUS_CATEGORIES = frozenset({"FRAUD", "LOTTERY", "APK"})
CATEGORY_NAMES = ("FRAUD", "LOTTERY", "APK", "GAMBLING", "ERRORS", "DOWNLOAD", "ADULT",
                  "MOBILE_SITE", "MOBILE_CLIENT", "MISC")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ScriptedDialog:
    message: str
    at_ms: int
    kind: str = "alert"
    loop: bool = False

    def __post_init__(self):
        if self.kind not in DIALOG_KINDS:
            raise ManifestError(f"unknown dialog kind {self.kind!r}")

    def to_dict(self):
        d = {"message": self.message, "at_ms": self.at_ms, "kind": self.kind}
        if self.loop:
            d["loop"] = True
        return d


@dataclass(frozen=True)
class Branch:
    ua_pattern: str
    load_ms: int = 0
    dialogs: tuple[ScriptedDialog, ...] = ()
    never_finishes: bool = False

    def matches(self, user_agent: str) -> bool:
        return self.ua_pattern == "*" or self.ua_pattern in user_agent

    def to_dict(self):
        return {"ua_pattern": self.ua_pattern, "load_ms": self.load_ms,
                "dialogs": [d.to_dict() for d in self.dialogs],
                "never_finishes": self.never_finishes}


@dataclass(frozen=True)
class Truth:
    category: str | None = None
    language: str = "und"
    malicious: bool = False
    targeted_profiles: tuple[str, ...] = ()

    def to_dict(self):
        return {"category": self.category, "language": self.language, "malicious": self.malicious,
                "targeted_profiles": list(self.targeted_profiles)}


@dataclass(frozen=True)
class FixtureSpec:
    domain: str
    branches: tuple[Branch, ...]
    truth: Truth = field(default_factory=Truth)

    def __post_init__(self):
        t = self.truth
        if t.category is not None and t.category not in CATEGORY_NAMES:
            raise ManifestError(f"{self.domain}: unknown truth category {t.category!r}")
        if t.malicious != (t.category in MALICIOUS_CATEGORIES):
            raise ManifestError(f"{self.domain}: truth.malicious inconsistent with category {t.category}")

    def branch_for(self, user_agent: str) -> Branch | None:
        for b in self.branches:
            if b.matches(user_agent):
                return b
        return None

    def to_dict(self):
        return {"domain": self.domain, "branches": [b.to_dict() for b in self.branches],
                "truth": self.truth.to_dict()}


def _host(text: str) -> str:
    if "//" in text:
        text = urlsplit(text).hostname or ""
    return text.lower().rstrip(".")


def spec_from_dict(d: dict) -> FixtureSpec:
    try:
        domain = _host(d.get("domain") or d["url"])
        branches = tuple(
            Branch(
                ua_pattern=b.get("ua_pattern", "*"),
                load_ms=int(b.get("load_ms", 0)),
                never_finishes=bool(b.get("never_finishes", False)),
                dialogs=tuple(ScriptedDialog(x["message"], int(x["at_ms"]), x.get("kind", "alert"),
                                             bool(x.get("loop", False)))
                              for x in b.get("dialogs", ())),
            )
            for b in d.get("branches", ())
        )
        t = d.get("truth") or {}
        truth = Truth(t.get("category"), t.get("language", "und"), bool(t.get("malicious", False)),
                      tuple(t.get("targeted_profiles", ())))
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"bad fixture entry {d.get('domain', d.get('url'))!r}: {e}") from None
    for b in branches:
        if b.load_ms < 0 or any(x.at_ms < 0 for x in b.dialogs):
            raise ManifestError(f"{domain}: negative timing")
    return FixtureSpec(domain, branches, truth)


def load_manifest(path) -> list[FixtureSpec]:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: {e}") from None
    if not isinstance(data, list):
        raise ManifestError(f"{path}: expected a JSON array")
    return [spec_from_dict(d) for d in data]


def dump_manifest(specs: Iterable[FixtureSpec], path) -> None:
    text = json.dumps([s.to_dict() for s in specs], ensure_ascii=False, indent=1) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="")


def index_by_domain(specs: Sequence[FixtureSpec]) -> dict[str, FixtureSpec]:
    out = {}
    for s in specs:
        if s.domain in out:
            raise ManifestError(f"duplicate fixture domain {s.domain}")
        out[s.domain] = s
    return out
