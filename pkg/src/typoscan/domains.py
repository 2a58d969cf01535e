"""Typosquatting candidate generation.

Every generator mutates only the second-level label (the label directly left of
the public suffix) and yields single-edit variants.  Resource tables
(keyboard adjacency, glyph map, homophones, keywords) are plain data loaded
from JSON so alternative layouts or dictionaries can be dropped in.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

LABEL_CHARS = frozenset("abcdefghijklmnopqrstuvwxyz0123456789-")
MAX_LABEL = 63
MAX_NAME = 253
DEFAULT_SUFFIXES: tuple[str, ...] = ()


class DomainError(ValueError):
    pass


class MissingResourceError(DomainError):
    def __init__(self, table: str, technique: "Technique"):
        super().__init__(f"technique {technique.name} needs resource table '{table}'")
        self.table = table
        self.technique = technique


class Technique(enum.Enum):
    DELETION = "deletion"
    INSERTION = "insertion"
    SUBSTITUTION = "substitution"
    TRANSPOSITION = "transposition"
    BITSQUAT = "bitsquat"
    HOMOGLYPH = "homoglyph"
    SOUNDSQUAT = "soundsquat"
    COMBOSQUAT = "combosquat"

    @property
    def order(self) -> int:
        return _TECHNIQUE_ORDER[self]

    @classmethod
    def parse(cls, text: str) -> "Technique":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise DomainError(f"unknown technique {text!r}") from None


_TECHNIQUE_ORDER = {t: i for i, t in enumerate(Technique)}


def label_problem(label: str) -> str | None:
    """Return why `label` is not a valid DNS label, or None if it is."""
    if not label:
        return "empty label"
    if len(label) > MAX_LABEL:
        return f"label longer than {MAX_LABEL} characters"
    for ch in label:
        if ch not in LABEL_CHARS:
            return f"illegal character {ch!r}"
    if label[0] == "-" or label[-1] == "-":
        return "leading or trailing hyphen"
    return None


@dataclass(frozen=True, order=True)
class DomainName:
    labels: tuple[str, ...]
    tld: str

    def __post_init__(self):
        labels = tuple(l.lower() for l in self.labels)
        tld = self.tld.lower()
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tld", tld)
        if not labels:
            raise DomainError("domain needs at least one label left of the suffix")
        for label in labels + tuple(tld.split(".")):
            problem = label_problem(label)
            if problem:
                raise DomainError(f"{problem} in label {label!r}")
        if len(self.name) > MAX_NAME:
            raise DomainError(f"name longer than {MAX_NAME} characters: {self.name[:40]}...")

    @property
    def name(self) -> str:
        return ".".join(self.labels + (self.tld,))

    @property
    def sld(self) -> str:
        """The second-level label, the one generators mutate."""
        return self.labels[-1]

    def with_sld(self, sld: str) -> "DomainName":
        return DomainName(self.labels[:-1] + (sld,), self.tld)

    def __str__(self) -> str:
        return self.name


def parse_domain(text: str, suffixes: Iterable[str] = DEFAULT_SUFFIXES) -> DomainName:
    """Parse and validate a domain name.

    The rightmost label is the suffix unless one of `suffixes` (e.g. ``co.uk``)
    matches the tail, in which case the longest matching suffix wins.
    """
    if not text or not text.strip():
        raise DomainError("empty domain")
    name = text.strip().lower().rstrip(".")
    parts = name.split(".")
    for part in parts:
        problem = label_problem(part)
        if problem:
            raise DomainError(f"{problem} in label {part!r}")
    n_suffix = 1
    for suffix in suffixes:
        s_parts = suffix.lower().strip(".").split(".")
        if len(s_parts) > n_suffix and len(parts) > len(s_parts) and parts[-len(s_parts):] == s_parts:
            n_suffix = len(s_parts)
    if len(parts) <= n_suffix:
        raise DomainError(f"no label left of the suffix in {name!r}")
    return DomainName(tuple(parts[:-n_suffix]), ".".join(parts[-n_suffix:]))


@dataclass(frozen=True)
class CandidateDomain:
    original: DomainName
    candidate: DomainName
    technique: Technique

    def __post_init__(self):
        if self.candidate == self.original:
            raise DomainError(f"candidate equals original: {self.candidate}")


def _freeze_map(m: Mapping[str, Iterable[str]] | None):
    if m is None:
        return None
    return {k: tuple(v) for k, v in m.items()}


@dataclass(frozen=True)
class GenResources:
    adjacency: Mapping[str, tuple[str, ...]] | None = None
    glyph_map: Mapping[str, tuple[str, ...]] | None = None
    homophones: Mapping[str, tuple[str, ...]] | None = None
    keywords: tuple[str, ...] | None = None
    separators: tuple[str, ...] = ("", "-")
    homoglyph_cap: int = 1

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _freeze_map(self.adjacency))
        object.__setattr__(self, "glyph_map", _freeze_map(self.glyph_map))
        object.__setattr__(self, "homophones", _freeze_map(self.homophones))
        if self.keywords is not None:
            object.__setattr__(self, "keywords", tuple(self.keywords))
        object.__setattr__(self, "separators", tuple(self.separators))
        if self.homoglyph_cap < 1:
            raise DomainError("homoglyph_cap must be >= 1")
        for table in ("adjacency", "glyph_map"):
            for key, values in (getattr(self, table) or {}).items():
                if len(key) != 1 or key not in LABEL_CHARS:
                    raise DomainError(f"{table}: key {key!r} is not a single DNS character")
                for v in values:
                    if not v or set(v) - LABEL_CHARS:
                        raise DomainError(f"{table}: value {v!r} for {key!r} is not DNS-legal")
        for word, alts in (self.homophones or {}).items():
            for w in (word, *alts):
                if not w or set(w) - LABEL_CHARS:
                    raise DomainError(f"homophones: {w!r} is not DNS-legal")
        for w in (*(self.keywords or ()), *self.separators):
            if set(w) - LABEL_CHARS:
                raise DomainError(f"keyword/separator {w!r} is not DNS-legal")

    @classmethod
    def load(cls, adjacency=None, glyphs=None, homophones=None, keywords=None, **kw) -> "GenResources":
        """Load resource tables from JSON files; None selects the shipped default."""
        return cls(
            adjacency=_load_json(adjacency, "adjacency_qwerty.json"),
            glyph_map=_load_json(glyphs, "glyphs.json"),
            homophones=_load_json(homophones, "homophones.json"),
            keywords=_load_json(keywords, "keywords.json"),
            **kw,
        )

    @classmethod
    def default(cls) -> "GenResources":
        return cls.load()


def _load_json(path, default_name):
    if path is None:
        return json.loads(resources.files("typoscan.data").joinpath(default_name).read_text("utf-8"))
    return json.loads(Path(path).read_text("utf-8"))


@dataclass
class GenStats:
    """Per-run counters for candidates that were dropped as invalid."""
    dropped: Counter = field(default_factory=Counter)

    def drop(self, technique: Technique, reason: str):
        self.dropped[(technique.value, reason)] += 1

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())


def _deletion(label, res):
    for i in range(len(label)):
        yield label[:i] + label[i + 1:]


def _insertion(label, res):
    adj = res.adjacency
    for i, ch in enumerate(label):
        for key in adj.get(ch, ()):
            yield label[:i] + key + label[i:]
            yield label[:i + 1] + key + label[i + 1:]


def _substitution(label, res):
    adj = res.adjacency
    for i, ch in enumerate(label):
        for key in adj.get(ch, ()):
            yield label[:i] + key + label[i + 1:]


def _transposition(label, res):
    for i in range(len(label) - 1):
        yield label[:i] + label[i + 1] + label[i] + label[i + 2:]


def _bitsquat(label, res):
    for i, ch in enumerate(label):
        octet = ord(ch)
        for bit in range(8):
            flipped = chr(octet ^ (1 << bit)).lower()
            if flipped in LABEL_CHARS:
                yield label[:i] + flipped + label[i + 1:]


def _homoglyph(label, res):
    gm = res.glyph_map
    spots = [i for i, ch in enumerate(label) if gm.get(ch)]
    for k in range(1, min(res.homoglyph_cap, len(spots)) + 1):
        for positions in itertools.combinations(spots, k):
            for glyphs in itertools.product(*(gm[label[p]] for p in positions)):
                out = list(label)
                for p, g in zip(positions, glyphs):
                    out[p] = g
                yield "".join(out)


def _soundsquat(label, res):
    for word, alts in res.homophones.items():
        start = label.find(word)
        while start != -1:
            for alt in alts:
                yield label[:start] + alt + label[start + len(word):]
            start = label.find(word, start + 1)


def _combosquat(label, res):
    for kw in res.keywords:
        for sep in res.separators:
            yield kw + sep + label
            yield label + sep + kw


_GENERATORS = {
    Technique.DELETION: (_deletion, None),
    Technique.INSERTION: (_insertion, "adjacency"),
    Technique.SUBSTITUTION: (_substitution, "adjacency"),
    Technique.TRANSPOSITION: (_transposition, None),
    Technique.BITSQUAT: (_bitsquat, None),
    Technique.HOMOGLYPH: (_homoglyph, "glyph_map"),
    Technique.SOUNDSQUAT: (_soundsquat, "homophones"),
    Technique.COMBOSQUAT: (_combosquat, "keywords"),
}


def generate(seed: DomainName, technique: Technique, res: GenResources,
             stats: GenStats | None = None) -> set[CandidateDomain]:
    func, table = _GENERATORS[technique]
    if table is not None and getattr(res, table) is None:
        raise MissingResourceError(table, technique)
    out = set()
    for label in set(func(seed.sld, res)):
        if label == seed.sld:
            continue
        problem = label_problem(label)
        if problem is None:
            try:
                cand = seed.with_sld(label)
            except DomainError:
                problem = "name too long"
        if problem is not None:
            if stats is not None:
                stats.drop(technique, problem)
            continue
        out.add(CandidateDomain(seed, cand, technique))
    return out


def generate_all(seed: DomainName, res: GenResources, enabled: Iterable[Technique],
                 stats: GenStats | None = None) -> set[CandidateDomain]:
    """Union of `generate` over the enabled techniques.

    A name produced by several techniques is attributed to the one that comes
    first in `Technique` declaration order, whatever order `enabled` is in.
    """
    enabled = sorted(set(enabled), key=lambda t: t.order)
    if not enabled:
        raise DomainError("enabled technique set is empty")
    by_name: dict[str, CandidateDomain] = {}
    for technique in enabled:
        for cand in generate(seed, technique, res, stats):
            by_name.setdefault(cand.candidate.name, cand)
    return set(by_name.values())


def sort_candidates(cands: Iterable[CandidateDomain]) -> list[CandidateDomain]:
    return sorted(cands, key=lambda c: (c.original.name, c.technique.order, c.candidate.name))


# --- file formats -----------------------------------------------------------

CANDIDATE_HEADER = ["technique", "original", "candidate"]


def read_seed_list(path, suffixes: Iterable[str] = DEFAULT_SUFFIXES,
                   problems: list | None = None) -> list[DomainName]:
    """Read an Alexa-style ``rank,domain`` CSV.

    Malformed rows are skipped and reported as ``(line_number, reason)`` in
    `problems`.  Rows are returned in file order; rank is otherwise ignored.
    """
    seeds = []
    seen = set()
    suffixes = tuple(suffixes)
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                _problem(problems, lineno, f"expected 2 columns, got {len(row)}")
                continue
            rank, domain = row
            if not rank.strip().isdigit():
                if lineno == 1 and rank.strip().lower() == "rank":
                    continue
                _problem(problems, lineno, f"bad rank {rank!r}")
                continue
            try:
                d = parse_domain(domain, suffixes)
            except DomainError as e:
                _problem(problems, lineno, str(e))
                continue
            if d not in seen:
                seen.add(d)
                seeds.append(d)
    return seeds


def _problem(problems, lineno, reason):
    log.warning("line %d: %s", lineno, reason)
    if problems is not None:
        problems.append((lineno, reason))


def write_candidates(cands: Iterable[CandidateDomain], out) -> int:
    """Write candidates as ``technique,original,candidate`` CSV (LF endings)."""
    rows = sort_candidates(cands)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CANDIDATE_HEADER)
    for c in rows:
        w.writerow([c.technique.value, c.original.name, c.candidate.name])
    Path(out).write_text(buf.getvalue(), encoding="utf-8", newline="")
    return len(rows)


def read_candidates(path, suffixes: Iterable[str] = DEFAULT_SUFFIXES) -> list[CandidateDomain]:
    suffixes = tuple(suffixes)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if header != CANDIDATE_HEADER:
            raise DomainError(f"{path}: expected header {','.join(CANDIDATE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DomainError(f"{path}:{lineno}: expected 3 columns")
            tech, orig, cand = row
            try:
                out.append(CandidateDomain(parse_domain(orig, suffixes), parse_domain(cand, suffixes),
                                           Technique.parse(tech)))
            except DomainError as e:
                raise DomainError(f"{path}:{lineno}: {e}") from None
    return out


def techniques_from(names: Sequence[str] | str | None) -> set[Technique]:
    if names is None:
        return set(Technique)
    if isinstance(names, str):
        names = [n for n in re.split(r"[,\s]+", names) if n]
    if any(n.lower() == "all" for n in names):
        return set(Technique)
    return {Technique.parse(n) for n in names}
