"""Metrics over scan and classification records, emitted as plot-ready tables.

Every table is a pure function of (records, classifications).  A "site" is the
host of the requested URL and a "url" is the requested URL string; messages are
compared after normalisation.  Rows hold only observed keys and are sorted by
key, except the per-profile exclusivity tables which list every configured
profile (zeros included) plus a ``multi`` row.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .classify import ClassifiedMessage, normalize
from .driver.base import PROFILE_ORDER

log = logging.getLogger(__name__)

DIMENSIONS = ("category", "language", "profile")
MULTI = "multi"


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ReportTable:
    name: str
    dimensions: tuple[str, ...]
    rows: tuple[tuple[tuple[str, ...], int], ...]
    total: int

    def as_dict(self) -> dict[tuple[str, ...], int]:
        return dict(self.rows)

    def to_json(self) -> dict:
        return {"name": self.name, "dimensions": list(self.dimensions),
                "rows": [{"key": list(k), "count": c} for k, c in self.rows], "total": self.total}

    @classmethod
    def from_json(cls, d: dict) -> "ReportTable":
        return cls(d["name"], tuple(d["dimensions"]),
                   tuple((tuple(r["key"]), int(r["count"])) for r in d["rows"]), int(d["total"]))


def _table(name, dimensions, counts: Mapping[tuple, int], total: int) -> ReportTable:
    rows = tuple(sorted((tuple(k), int(v)) for k, v in counts.items()))
    if any(c < 0 for _, c in rows):
        raise ReportError(f"{name}: negative count")
    return ReportTable(name, tuple(dimensions), rows, total)


def site_of(url: str) -> str:
    return (urlsplit(url).hostname or url).lower()


def message_index(records: Iterable) -> dict[str, list[tuple[str, str]]]:
    """Normalised message -> distinct (url, profile_label) pairs that showed it, first-seen order."""
    seen: dict[str, dict[tuple[str, str], None]] = {}
    for rec in records:
        for d in rec.dialogs:
            seen.setdefault(normalize(d.message), {})[(rec.url, rec.profile_label)] = None
    return {m: list(pairs) for m, pairs in seen.items()}


def _lookup(classifications) -> dict[str, ClassifiedMessage]:
    if isinstance(classifications, Mapping):
        return dict(classifications)
    return {c.message: c for c in classifications}


# --- distinct counts ------------------------------------------------------------

def distinct_counts(records: Sequence, classifications) -> dict[str, int]:
    by_msg = _lookup(classifications)
    urls, sites, messages = set(), set(), set()
    total = malicious = 0
    for rec in records:
        for d in rec.dialogs:
            msg = normalize(d.message)
            cm = by_msg.get(msg)
            if cm is None:
                raise ReportError(f"message has no classification: {msg!r}")
            total += 1
            malicious += cm.malicious
            urls.add(rec.url)
            sites.add(site_of(rec.url))
            messages.add(msg)
    return {"distinct_urls": len(urls), "distinct_sites": len(sites),
            "distinct_messages": len(messages), "total_alerts": total, "malicious_alerts": malicious}


# --- user agent exclusivity -----------------------------------------------------

@dataclass
class Exclusivity:
    profiles: tuple[str, ...]
    url_single: Counter = field(default_factory=Counter)
    url_multi: int = 0
    message_single: Counter = field(default_factory=Counter)
    message_multi: int = 0
    missing_passes: tuple[str, ...] = ()


def ua_exclusivity(records: Sequence, profiles: Sequence[str] | None = None) -> Exclusivity:
    """Single-target vs multi-target counts at url and at message granularity.

    A url (message) is single-target when it produced dialogs under exactly one
    profile.  Repeated (url, profile) observations count once.
    """
    seen_profiles = []
    for rec in records:
        if rec.profile_label not in seen_profiles:
            seen_profiles.append(rec.profile_label)
    if profiles is None:
        profiles = [p for p in PROFILE_ORDER if p in seen_profiles]
        profiles += [p for p in seen_profiles if p not in profiles]
    ex = Exclusivity(tuple(profiles))
    ex.missing_passes = tuple(p for p in profiles if p not in seen_profiles)
    if ex.missing_passes:
        log.warning("records are missing the pass(es) for %s; exclusivity is incomplete",
                    ", ".join(ex.missing_passes))
    by_url: dict[str, set[str]] = defaultdict(set)
    by_msg: dict[str, set[str]] = defaultdict(set)
    for rec in records:
        for d in rec.dialogs:
            by_url[rec.url].add(rec.profile_label)
            by_msg[normalize(d.message)].add(rec.profile_label)
    for labels, single, attr in ((by_url, ex.url_single, "url_multi"), (by_msg, ex.message_single, "message_multi")):
        for who in labels.values():
            if len(who) == 1:
                single[next(iter(who))] += 1
            else:
                setattr(ex, attr, getattr(ex, attr) + 1)
    return ex


def _exclusivity_table(name, single: Counter, multi: int, profiles) -> ReportTable:
    counts = {(p,): single.get(p, 0) for p in profiles}
    for p, n in single.items():
        counts[(p,)] = n
    counts[(MULTI,)] = multi
    return _table(name, ("profile",), counts, sum(counts.values()))


# --- distributions --------------------------------------------------------------

def distribution(classifications, index: Mapping[str, Sequence[tuple[str, str]]],
                 group_by: Iterable[str], granularity: str = "message",
                 only_malicious: bool = False, name: str = "") -> ReportTable:
    """Distinct messages (or sites) per key over the `group_by` dimensions.

    Categories use their display key, so both mobile categories land in MOBILE.
    A unit seen under several key values counts once for each of them.
    """
    group_by = set(group_by)
    unknown = group_by - set(DIMENSIONS)
    if unknown:
        raise ReportError(f"unknown group_by key(s): {', '.join(sorted(unknown))}")
    if not group_by:
        raise ReportError("group_by must name at least one dimension")
    if granularity not in ("message", "site"):
        raise ReportError(f"unknown granularity {granularity!r}")
    dims = tuple(d for d in DIMENSIONS if d in group_by)
    by_msg = _lookup(classifications)
    pairs: set[tuple[str, tuple[str, ...]]] = set()
    for msg, seen in index.items():
        cm = by_msg.get(msg)
        if cm is None:
            raise ReportError(f"message has no classification: {msg!r}")
        if only_malicious and not cm.malicious:
            continue
        for url, profile in seen:
            values = {"category": cm.category.display, "language": cm.language, "profile": profile}
            unit = msg if granularity == "message" else site_of(url)
            pairs.add((unit, tuple(values[d] for d in dims)))
    counts = Counter(key for _, key in pairs)
    return _table(name or "_".join((granularity,) + dims), dims, counts, len({u for u, _ in pairs}))


# Report file name -> (granularity, group_by, malicious only)
FIGURES = {
    "fig3_messages_per_category": ("message", ("category",), False),
    "fig4_sites_per_category": ("site", ("category",), False),
    "fig5_messages_category_ua": ("message", ("category", "profile"), True),
    "fig6_sites_category_ua": ("site", ("category", "profile"), True),
    "fig7_sites_per_language": ("site", ("language",), False),
    "fig8_messages_language_category": ("message", ("language", "category"), False),
    "fig9_sites_language_category": ("site", ("language", "category"), False),
    "fig10_messages_language_ua": ("message", ("language", "profile"), False),
    "fig11_sites_language_ua": ("site", ("language", "profile"), False),
}


def build_report(records: Sequence, classifications, profiles: Sequence[str] | None = None
                 ) -> list[ReportTable]:
    """All figure tables plus a ``summary`` table, in file-name order."""
    by_msg = _lookup(classifications)
    counts = distinct_counts(records, by_msg)
    ex = ua_exclusivity(records, profiles)
    index = message_index(records)
    tables = [
        _exclusivity_table("fig1_messages_single_ua", ex.message_single, ex.message_multi, ex.profiles),
        _exclusivity_table("fig2_sites_single_ua", ex.url_single, ex.url_multi, ex.profiles),
    ]
    for name, (gran, dims, mal) in FIGURES.items():
        tables.append(distribution(by_msg, index, dims, gran, mal, name))
    summary = dict(counts)
    summary.update(single_ua_urls=sum(ex.url_single.values()), multi_ua_urls=ex.url_multi,
                   single_ua_messages=sum(ex.message_single.values()), multi_ua_messages=ex.message_multi,
                   missing_passes=len(ex.missing_passes))
    tables.append(_table("summary", ("metric",), {(k,): v for k, v in summary.items()},
                         counts["total_alerts"]))
    return tables


# --- files ----------------------------------------------------------------------

def table_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(table.dimensions) + ["count"])
    for key, count in table.rows:
        w.writerow(list(key) + [count])
    return buf.getvalue()


def table_json(table: ReportTable) -> str:
    return json.dumps(table.to_json(), ensure_ascii=False, indent=1) + "\n"


def emit_report(tables: Iterable[ReportTable], out_dir, fmt: str = "csv") -> list[Path]:
    """Write one file per table (``<name>.csv`` or ``<name>.json``); returns the paths."""
    if fmt not in ("csv", "json"):
        raise ReportError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create report directory {out}: {e.strerror}") from None
    paths = []
    for t in tables:
        p = out / f"{t.name}.{fmt}"
        text = table_csv(t) if fmt == "csv" else table_json(t)
        try:
            p.write_text(text, encoding="utf-8", newline="")
        except OSError as e:
            raise ReportError(f"cannot write {p}: {e.strerror}") from None
        paths.append(p)
    return paths


def load_table(path) -> ReportTable:
    """Read a table written by `emit_report`.  CSV carries no total, so it is the row sum."""
    p = Path(path)
    text = p.read_text("utf-8")
    if p.suffix == ".json":
        return ReportTable.from_json(json.loads(text))
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][-1:] != ["count"]:
        raise ReportError(f"{p}: not a report table")
    dims = tuple(rows[0][:-1])
    body = tuple((tuple(r[:-1]), int(r[-1])) for r in rows[1:])
    return ReportTable(p.stem, dims, body, sum(c for _, c in body))
