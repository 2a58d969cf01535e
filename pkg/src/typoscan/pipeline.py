"""Pipeline stages over files: generate, resolve, scan, classify, report.

Each stage reads the previous stage's output and writes its own, so stages can
be run (and re-run) independently.  Scan and classify append to the record
store and skip work that is already there, which makes a repeated pipeline run
a no-op apart from regenerating the report.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .classify import ClassifiedMessage, RuleError, classify_run, normalize
from .config import PipelineConfig
from .domains import (CandidateDomain, DomainError, generate_all, read_candidates, read_seed_list,
                      write_candidates)
from .driver.base import Driver, DriverError
from .driver.fake import FakeDriver
from .manifest import ManifestError
from .report import ReportError, build_report, emit_report
from .resolver import (FilterSummary, Resolver, ResolverUnavailableError, StaticZoneBackend, UdpBackend,
                       filter_registered, write_audit)
from .scanner import RunSummary, ScanConfig, ScanRecord, SinkError, build_workload, run
from .store import JsonlStore, RecordEnvelope, StoreError

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _need(stage: str, path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise StageError(stage, f"{what} not found: {path} (run the previous stage first)")
    return Path(path)


def _parent(path: Path) -> Path:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return Path(path)


def cmd_generate(cfg: PipelineConfig, seed_list=None, out=None) -> int:
    """Seed list -> candidate CSV.  Returns the number of candidates written."""
    seed_list = seed_list or cfg.seeds
    if seed_list is None:
        raise StageError("generate", "no seed list given (--seeds or 'seeds' in the config)")
    out = _parent(out or cfg.path("candidates"))
    problems: list = []
    try:
        seeds = read_seed_list(seed_list, cfg.suffixes, problems)
    except OSError as e:
        raise StageError("generate", f"cannot read {seed_list}: {e.strerror}") from None
    for lineno, reason in problems:
        log.warning("%s:%d: skipped: %s", seed_list, lineno, reason)
    if not seeds:
        log.warning("%s: no usable seed domains", seed_list)
    res, techniques = cfg.gen_resources(), cfg.technique_set()
    cands: list[CandidateDomain] = []
    try:
        for s in seeds:
            cands.extend(generate_all(s, res, techniques))
    except DomainError as e:
        raise StageError("generate", str(e)) from None
    return write_candidates(cands, out)


def cmd_resolve(cfg: PipelineConfig, candidates=None, out=None, audit=None, backend=None) -> FilterSummary:
    """Candidate CSV -> registered CSV (same columns) plus a per-candidate audit CSV."""
    src = _need("resolve", candidates or cfg.path("candidates"), "candidate file")
    out = _parent(out or cfg.path("registered"))
    audit = _parent(audit or cfg.path("audit"))
    try:
        cands = read_candidates(src, cfg.suffixes)
    except DomainError as e:
        raise StageError("resolve", str(e)) from None
    if backend is None:
        backend = StaticZoneBackend.from_file(cfg.resolver.zone) if cfg.resolver.zone else UdpBackend()
    try:
        results = Resolver(cfg.resolver.to_config(), backend).resolve_batch(cands)
    except ResolverUnavailableError as e:
        raise StageError("resolve", str(e)) from None
    registered, summary = filter_registered(results)
    write_candidates(registered, out)
    write_audit(results, audit)
    return summary


def make_driver(cfg: PipelineConfig) -> Driver:
    if cfg.driver == "fake":
        if cfg.manifest is None:
            raise StageError("scan", "the fake driver needs a fixture manifest (--manifest or 'manifest')")
        try:
            return FakeDriver.from_file(cfg.manifest, dialog_cap=cfg.scan.dialog_cap)
        except ManifestError as e:
            raise StageError("scan", str(e)) from None
    from .driver.devtools import DevToolsDriver
    drv = DevToolsDriver(cfg.devtools_endpoint, dialog_cap=cfg.scan.dialog_cap)
    try:
        drv.version()
    except DriverError as e:
        raise StageError("scan", str(e)) from None
    return drv


def _scan_records(store: JsonlStore, run_id: str | None = None) -> list[ScanRecord]:
    report = store.load_all("scan", run_id=run_id)
    if report.corrupt_count:
        log.warning("%s: skipped %d corrupt line(s) (lines %s)", store.path, report.corrupt_count,
                    ", ".join(map(str, report.corrupt_lines[:10])))
    return [ScanRecord.from_payload(e.payload) for e in report]


def cmd_scan(cfg: PipelineConfig, registered=None, store=None, driver: Driver | None = None) -> RunSummary:
    """Registered CSV -> scan records appended to the store (one pass per profile).

    Jobs whose (url, profile) already has a record under the same run_id are skipped.
    """
    src = _need("scan", registered or cfg.path("registered"), "registered-domain file")
    store = JsonlStore(_parent(store or cfg.path("store")))
    s = cfg.scan
    profiles = {label: cfg.profiles[label] for label in s.profiles}
    try:
        names = list(dict.fromkeys(c.candidate.name for c in read_candidates(src, cfg.suffixes)))
    except DomainError as e:
        raise StageError("scan", str(e)) from None
    if not names:
        log.warning("%s: no registered domains to scan", src)
        return RunSummary(s.run_id)
    workload = build_workload(names, list(profiles.values()))
    done = {(r.url, r.profile_label) for r in _scan_records(store, s.run_id)}
    todo = [j for j in workload if (j.url, j.profile_label) not in done]
    if len(todo) < len(workload):
        log.info("resuming run %s: %d of %d jobs already stored", s.run_id, len(workload) - len(todo),
                 len(workload))
    driver = driver or make_driver(cfg)

    def sink(rec: ScanRecord):
        store.append(RecordEnvelope("scan", rec.to_payload()))

    scfg = ScanConfig(s.pool_size, s.grace_ms, s.hard_cap_ms, s.max_attempts, s.run_id, s.progress_every)
    try:
        return run(todo, driver, s.pool_size, sink, profiles=profiles, cfg=scfg)
    except SinkError as e:
        raise StageError("scan", str(e)) from None


def _translations(cfg: PipelineConfig) -> dict[str, str]:
    if cfg.translations is None:
        return {}
    try:
        data = json.loads(Path(cfg.translations).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise StageError("classify", f"translations: {e}") from None
    if not isinstance(data, dict):
        raise StageError("classify", "translations must map messages to English text")
    return data


def _classifications(store: JsonlStore, checksum: str) -> dict[str, ClassifiedMessage]:
    out = {}
    for e in store.load_all("classification", where=lambda e: e.payload["rule_table_checksum"] == checksum):
        out[e.payload["message"]] = ClassifiedMessage.from_payload(e.payload)
    return out


def cmd_classify(cfg: PipelineConfig, store=None) -> int:
    """Classify every stored message not yet classified under the current rule table."""
    store = JsonlStore(_need("classify", store or cfg.path("store"), "record store"))
    try:
        table = cfg.rule_table()
    except RuleError as e:
        raise StageError("classify", str(e)) from None
    have = _classifications(store, table.checksum)
    records = _scan_records(store)
    results, _ = classify_run(records, table, cfg.detector(), _translations(cfg))
    new = [c for c in results if c.message not in have]
    for c in new:
        store.append(RecordEnvelope("classification", c.to_payload(table.checksum)))
    return len(new)


def latest_run_id(store: JsonlStore) -> str | None:
    scans = store.load_all("scan").envelopes
    return scans[-1].payload["run_id"] if scans else None


def cmd_report(cfg: PipelineConfig, store=None, out_dir=None, run_id: str | None = None,
               fmt: str | None = None) -> list[Path]:
    """Figure tables for one run (default: the most recent run in the store)."""
    store = JsonlStore(store or cfg.path("store"))
    out_dir = out_dir or cfg.path("report_dir")
    try:
        run_id = run_id or latest_run_id(store)
        records = _scan_records(store, run_id) if run_id else []
        labels = _classifications(store, cfg.rule_table().checksum)
        missing = {normalize(d.message) for r in records for d in r.dialogs} - set(labels)
        if missing:
            raise StageError("report", f"{len(missing)} message(s) have no classification under the "
                                       f"current rule table (run classify first), e.g. {sorted(missing)[0]!r}")
        tables = build_report(records, labels, cfg.scan.profiles)
        return emit_report(tables, out_dir, fmt or cfg.report_format)
    except (ReportError, StoreError, RuleError) as e:
        raise StageError("report", str(e)) from None


@dataclass
class PipelineResult:
    candidates: int
    resolution: FilterSummary
    scan: RunSummary
    classified: int
    report: list[Path]


def cmd_pipeline(cfg: PipelineConfig, driver: Driver | None = None, backend=None) -> PipelineResult:
    n = cmd_generate(cfg)
    res = cmd_resolve(cfg, backend=backend)
    scan = cmd_scan(cfg, driver=driver)
    classified = cmd_classify(cfg) if cfg.path("store").is_file() else 0
    paths = cmd_report(cfg)
    return PipelineResult(n, res, scan, classified, paths)

