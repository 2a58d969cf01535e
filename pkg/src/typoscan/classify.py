"""Rule-based categorisation of captured dialog messages.

Messages are normalised (NFC, collapsed whitespace), tagged with a language
(zh / de / en / und) and assigned the category of the first matching rule in an
ordered rule table.  The table is data; its SHA-256 over the canonical JSON is
stored next to every classification so results can be tied to the exact rules.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .manifest import MALICIOUS_CATEGORIES


class Category(str, enum.Enum):
    FRAUD = "FRAUD"
    LOTTERY = "LOTTERY"
    APK = "APK"
    GAMBLING = "GAMBLING"
    ERRORS = "ERRORS"
    DOWNLOAD = "DOWNLOAD"
    ADULT = "ADULT"
    MOBILE_SITE = "MOBILE_SITE"
    MOBILE_CLIENT = "MOBILE_CLIENT"
    MISC = "MISC"

    @property
    def malicious(self) -> bool:
        return self.value in MALICIOUS_CATEGORIES

    @property
    def display(self) -> str:
        """Chart key: the two mobile categories share one bar."""
        return "MOBILE" if self in (Category.MOBILE_SITE, Category.MOBILE_CLIENT) else self.value


LANGUAGES = ("zh", "de", "en", "und")
FALLBACK_RULE = "fallback"


class RuleError(ValueError):
    pass


_WS = re.compile(r"\s+")


def normalize(message: str) -> str:
    return _WS.sub(" ", unicodedata.normalize("NFC", message)).strip()


# --- language -----------------------------------------------------------------

_CJK_RANGES = (
    (0x3400, 0x4DBF), (0x4E00, 0x9FFF), (0xF900, 0xFAFF),
    (0x20000, 0x2A6DF), (0x2A700, 0x2EBEF), (0x2F800, 0x2FA1F), (0x30000, 0x3134F),
)
_WORD = re.compile(r"[^\W\d_]+")
_UMLAUTS = frozenset("äöüß")


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


@dataclass(frozen=True)
class LanguageDetector:
    stopwords: Mapping[str, frozenset[str]]
    cjk_ratio: float = 0.30

    @classmethod
    def load(cls, path=None, cjk_ratio: float = 0.30) -> "LanguageDetector":
        if path is None:
            text = resources.files("typoscan.data").joinpath("stopwords.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        data = json.loads(text)
        return cls({lang: frozenset(w.lower() for w in words) for lang, words in data.items()}, cjk_ratio)

    def __call__(self, message: str) -> str:
        text = normalize(message)
        letters = [ch for ch in text if ch.isalpha() or _is_cjk(ch)]
        if letters and sum(map(_is_cjk, letters)) / len(letters) >= self.cjk_ratio:
            return "zh"
        words = [w.lower() for w in _WORD.findall(text)]
        de = sum(w in self.stopwords.get("de", ()) for w in words)
        de += sum(ch in _UMLAUTS for ch in text.lower())
        en = sum(w in self.stopwords.get("en", ()) for w in words)
        if de > en:
            return "de"
        if en > 0:
            return "en"
        return "und"


_default_detector: LanguageDetector | None = None


def detect_language(message: str, detector: LanguageDetector | None = None) -> str:
    global _default_detector
    if detector is None:
        if _default_detector is None:
            _default_detector = LanguageDetector.load()
        detector = _default_detector
    return detector(message)


# --- rules ----------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    rule_id: str
    category: Category
    any_of: tuple[re.Pattern, ...]
    all_of: tuple[re.Pattern, ...] = ()
    language_scope: str | None = None

    def matches(self, text: str, language: str) -> bool:
        if self.language_scope is not None and self.language_scope != language:
            return False
        return any(p.search(text) for p in self.any_of) and all(p.search(text) for p in self.all_of)


def _compile(rule_id, patterns, field_name):
    if isinstance(patterns, str) or not isinstance(patterns, list):
        raise RuleError(f"rule {rule_id}: {field_name} must be a list of patterns")
    out = []
    for pat in patterns:
        try:
            out.append(re.compile(pat, re.IGNORECASE))
        except (re.error, TypeError) as e:
            raise RuleError(f"rule {rule_id}: bad pattern {pat!r} in {field_name}: {e}") from None
    return tuple(out)


@dataclass(frozen=True)
class RuleTable:
    rules: tuple[Rule, ...]
    checksum: str

    @classmethod
    def from_data(cls, data: Sequence[dict]) -> "RuleTable":
        if not isinstance(data, list):
            raise RuleError("rule table must be a JSON array")
        rules, seen = [], set()
        for i, r in enumerate(data):
            rid = r.get("rule_id") if isinstance(r, dict) else None
            if not rid or not isinstance(rid, str):
                raise RuleError(f"rule #{i}: missing rule_id")
            if rid in seen:
                raise RuleError(f"rule {rid}: duplicate rule_id")
            seen.add(rid)
            try:
                cat = Category(r.get("category"))
            except ValueError:
                raise RuleError(f"rule {rid}: unknown category {r.get('category')!r}") from None
            any_of = _compile(rid, r.get("any_of"), "any_of")
            if not any_of:
                raise RuleError(f"rule {rid}: any_of is empty")
            all_of = _compile(rid, r.get("all_of") or [], "all_of")
            scope = r.get("language_scope")
            if scope is not None and scope not in LANGUAGES:
                raise RuleError(f"rule {rid}: unknown language_scope {scope!r}")
            rules.append(Rule(rid, cat, any_of, all_of, scope))
        return cls(tuple(rules), table_checksum(data))

    @classmethod
    def load(cls, path=None) -> "RuleTable":
        if path is None:
            text = resources.files("typoscan.data").joinpath("rules.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise RuleError(f"{path or 'rules.json'}: {e}") from None
        return cls.from_data(data)


def table_checksum(data) -> str:
    canon = json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ClassifiedMessage:
    message: str
    category: Category
    language: str
    malicious: bool
    matched_rule_id: str

    def __post_init__(self):
        if self.malicious != self.category.malicious:
            raise ValueError("malicious flag disagrees with category")

    def to_payload(self, checksum: str) -> dict:
        return {"message": self.message, "category": self.category.value, "language": self.language,
                "malicious": self.malicious, "matched_rule_id": self.matched_rule_id,
                "rule_table_checksum": checksum}

    @classmethod
    def from_payload(cls, p: dict) -> "ClassifiedMessage":
        cat = Category(p["category"])
        return cls(p["message"], cat, p["language"], cat.malicious, p["matched_rule_id"])


def categorize(message: str, language: str, rules: RuleTable,
               translation: str | None = None) -> ClassifiedMessage:
    """First rule whose scope and patterns match wins; otherwise MISC.

    `translation`, when given, is an English rendering of the message that the
    patterns are also tried against.
    """
    texts = [message] if not translation else [message, normalize(translation)]
    for rule in rules.rules:
        if any(rule.matches(t, language) for t in texts):
            return ClassifiedMessage(message, rule.category, language, rule.category.malicious, rule.rule_id)
    return ClassifiedMessage(message, Category.MISC, language, False, FALLBACK_RULE)


def classify_message(raw: str, rules: RuleTable, detector: LanguageDetector | None = None,
                     translation: str | None = None) -> ClassifiedMessage:
    msg = normalize(raw)
    return categorize(msg, detect_language(msg, detector), rules, translation)


def classify_run(records: Iterable, rules: RuleTable, detector: LanguageDetector | None = None,
                 translations: Mapping[str, str] | None = None
                 ) -> tuple[list[ClassifiedMessage], dict[str, list[tuple[str, str]]]]:
    """Classify every distinct normalised message across `records` once.

    Returns the classifications in first-seen order and an index from each
    message to the distinct (url, profile_label) pairs that displayed it.
    """
    translations = {normalize(k): v for k, v in (translations or {}).items()}
    seen: dict[str, dict[tuple[str, str], None]] = {}
    for rec in records:
        for d in rec.dialogs:
            seen.setdefault(normalize(d.message), {})[(rec.url, rec.profile_label)] = None
    index = {m: list(pairs) for m, pairs in seen.items()}
    out = [categorize(m, detect_language(m, detector), rules, translations.get(m)) for m in index]
    return out, index
