"""Scan workload construction and the bounded worker pool that runs it.

The workload is one full pass over the registered domains per user agent
profile.  A coordinator keeps at most a bounded window of jobs in the pool and
hands finished records to the sink strictly in workload order.
"""

from __future__ import annotations

import logging
import sys
import threading
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Mapping, Sequence, TextIO

from .domains import CandidateDomain
from .driver.base import (BUILTIN_PROFILES, DEFAULT_GRACE_MS, DEFAULT_HARD_CAP_MS, DialogEvent,
                          Driver, DriverError, NavigationOutcome, NavStatus, Session,
                          UserAgentProfile)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScanJob:
    job_id: str
    url: str
    profile_label: str
    attempt: int = 1


@dataclass(frozen=True)
class ScanRecord:
    job_id: str
    run_id: str
    url: str
    final_url: str
    profile_label: str
    status: NavStatus
    dialogs: tuple[DialogEvent, ...]
    started_at: str
    duration_ms: int

    def to_payload(self) -> dict:
        return {
            "job_id": self.job_id, "run_id": self.run_id, "url": self.url, "final_url": self.final_url,
            "profile_label": self.profile_label, "status": self.status.value,
            "duration_ms": self.duration_ms, "started_at": self.started_at,
            "dialogs": [d.to_dict() for d in self.dialogs],
        }

    @classmethod
    def from_payload(cls, p: dict) -> "ScanRecord":
        return cls(p["job_id"], p["run_id"], p["url"], p["final_url"], p["profile_label"],
                   NavStatus(p["status"]), tuple(DialogEvent.from_dict(d) for d in p["dialogs"]),
                   p["started_at"], p["duration_ms"])


def url_for(domain: CandidateDomain | str) -> str:
    name = domain.candidate.name if isinstance(domain, CandidateDomain) else str(domain)
    return "http://" + name


def build_workload(domains: Iterable[CandidateDomain | str],
                   profiles: Sequence[UserAgentProfile | str]) -> list[ScanJob]:
    """|domains| x |profiles| jobs, one contiguous pass per profile.

    Sequences keep their order within a pass; sets are sorted by name first so
    the workload is reproducible.
    """
    if isinstance(domains, (set, frozenset)):
        domains = sorted(domains, key=lambda d: d.candidate.name if isinstance(d, CandidateDomain) else d)
    domains = list(domains)
    if not profiles:
        raise ValueError("build_workload needs at least one profile")
    if not domains:
        raise ValueError("build_workload needs at least one domain")
    labels = [p.label if isinstance(p, UserAgentProfile) else p for p in profiles]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate profile in workload")
    width = len(str(len(domains) - 1))
    return [ScanJob(f"{label}-{i:0{width}d}", url_for(d), label)
            for label in labels for i, d in enumerate(domains)]


class SinkError(RuntimeError):
    """The record sink failed; `last_durable_job_id` is the last job it accepted."""

    def __init__(self, cause: BaseException, last_durable_job_id: str | None, delivered: int):
        super().__init__(f"sink failed after {delivered} records "
                         f"(last durable job: {last_durable_job_id or 'none'}): {cause}")
        self.last_durable_job_id = last_durable_job_id
        self.delivered = delivered


@dataclass
class RunSummary:
    run_id: str
    jobs: int = 0
    records: int = 0
    attempts: int = 0
    by_status: Counter = field(default_factory=Counter)


@dataclass
class ScanConfig:
    pool_size: int = 8
    grace_ms: int = DEFAULT_GRACE_MS
    hard_cap_ms: int = DEFAULT_HARD_CAP_MS
    max_attempts: int = 2
    run_id: str = "run-1"
    progress_every: int = 0


def _utc_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


class _Worker:
    """Per-thread session cache: a worker keeps one session and swaps it when the profile changes."""

    def __init__(self, driver: Driver, profiles: Mapping[str, UserAgentProfile]):
        self.driver = driver
        self.profiles = profiles
        self.local = threading.local()
        self.lock = threading.Lock()
        self.sessions: list[Session] = []

    def session_for(self, label: str) -> Session:
        s = getattr(self.local, "session", None)
        if s is not None and not s.closed and s.profile.label == label:
            return s
        if s is not None:
            s.close()
        s = self.driver.open_session(self.profiles[label])
        self.local.session = s
        with self.lock:
            self.sessions.append(s)
        return s

    def drop(self):
        s = getattr(self.local, "session", None)
        if s is not None:
            s.close()
            self.local.session = None

    def close_all(self):
        with self.lock:
            for s in self.sessions:
                s.close()
            self.sessions.clear()


def run(workload: Sequence[ScanJob], driver: Driver, pool_size: int,
        sink: Callable[[ScanRecord], object], *,
        profiles: Mapping[str, UserAgentProfile] | None = None,
        cfg: ScanConfig | None = None, progress: TextIO | None = None) -> RunSummary:
    """Run every job through `driver` with at most `pool_size` navigations in flight.

    NETWORK_ERROR outcomes (and driver failures) are retried until
    `cfg.max_attempts` is used up; TIMEOUT is a valid observation and is never
    retried.  Exactly one record per job reaches `sink`, in workload order.
    """
    cfg = cfg or ScanConfig()
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if cfg.max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    profiles = dict(profiles or BUILTIN_PROFILES)
    unknown = {j.profile_label for j in workload} - set(profiles)
    if unknown:
        raise ValueError(f"unknown profile label(s): {', '.join(sorted(unknown))}")
    summary = RunSummary(cfg.run_id, jobs=len(workload))
    if not workload:
        return summary
    progress = progress if progress is not None else sys.stderr
    worker = _Worker(driver, profiles)
    attempts_lock = threading.Lock()

    def execute(job: ScanJob) -> ScanRecord:
        started = _utc_iso()
        outcome = None
        for attempt in range(1, cfg.max_attempts + 1):
            with attempts_lock:
                summary.attempts += 1
            started = _utc_iso()
            try:
                session = worker.session_for(job.profile_label)
                outcome = session.navigate(job.url, cfg.grace_ms, cfg.hard_cap_ms)
            except DriverError as e:
                log.warning("%s attempt %d: %s", job.job_id, attempt, e)
                worker.drop()
                outcome = NavigationOutcome(job.url, job.url, NavStatus.NETWORK_ERROR, error=str(e))
            if outcome.status is not NavStatus.NETWORK_ERROR:
                break
        return ScanRecord(job.job_id, cfg.run_id, job.url, outcome.final_url, job.profile_label,
                          outcome.status, outcome.dialogs, started, outcome.duration_ms)

    window = pool_size * 4
    pending: deque = deque()
    jobs = iter(workload)
    last_ok = None
    pool = ThreadPoolExecutor(max_workers=pool_size, thread_name_prefix="scan")
    try:
        for job in jobs:
            pending.append(pool.submit(execute, job))
            if len(pending) >= window:
                break
        while pending:
            record = pending.popleft().result()
            try:
                sink(record)
            except Exception as e:
                for f in pending:
                    f.cancel()
                raise SinkError(e, last_ok, summary.records) from e
            last_ok = record.job_id
            summary.records += 1
            summary.by_status[record.status.value] += 1
            if cfg.progress_every and summary.records % cfg.progress_every == 0:
                print(f"[scan {cfg.run_id}] {summary.records}/{summary.jobs} jobs done "
                      f"({dict(summary.by_status)})", file=progress, flush=True)
            nxt = next(jobs, None)
            if nxt is not None:
                pending.append(pool.submit(execute, nxt))
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        worker.close_all()
    return summary
