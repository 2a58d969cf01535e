"""Registered-domain filtering by concurrent DNS resolution.

A candidate counts as registered when it has an A or AAAA record, or failing
that an NS record.  Queries go through a `Backend` callable so tests (and the
fixture pipeline) can plug in a deterministic stub; `UdpBackend` speaks plain
DNS over UDP to the configured nameservers.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import random
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .domains import CandidateDomain

RCODE_NOERROR = 0
RCODE_SERVFAIL = 2
RCODE_NXDOMAIN = 3

QTYPE = {"A": 1, "NS": 2, "AAAA": 28}


class Status(str, enum.Enum):
    REGISTERED = "REGISTERED"
    UNREGISTERED = "UNREGISTERED"
    UNRESOLVED = "UNRESOLVED"


class DnsTimeout(Exception):
    pass


class NameserverUnreachable(OSError):
    pass


class ResolverUnavailableError(RuntimeError):
    """No nameserver could be reached for any query in the batch."""


@dataclass(frozen=True)
class Answer:
    rcode: int
    records: tuple[str, ...] = ()
    authoritative: bool = False


class Backend(Protocol):
    def __call__(self, name: str, rdtype: str, nameserver: str, timeout: float) -> Answer: ...


@dataclass
class ResolverConfig:
    nameservers: list[str] = field(default_factory=lambda: ["8.8.8.8:53"])
    max_in_flight: int = 64
    timeout_ms: int = 3000
    retries: int = 2
    rate_per_ns: float = 100.0

    def __post_init__(self):
        if not self.nameservers:
            raise ValueError("resolver needs at least one nameserver")
        for ns in self.nameservers:
            split_hostport(ns)
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.timeout_ms <= 0 or self.rate_per_ns <= 0:
            raise ValueError("timeout_ms and rate_per_ns must be positive")


@dataclass(frozen=True)
class ResolutionResult:
    candidate: CandidateDomain
    status: Status
    addresses: tuple[str, ...]
    queried_at: datetime


def split_hostport(text: str, default_port: int = 53) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or "]" in port:
        return text.strip("[]"), default_port
    if not port.isdigit():
        raise ValueError(f"bad nameserver endpoint {text!r}")
    return host.strip("[]"), int(port)


class TokenBucket:
    def __init__(self, rate: float, burst: float | None = None, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = burst if burst is not None else max(1.0, rate)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.stamp = clock()
        self.lock = threading.Lock()

    def acquire(self):
        while True:
            with self.lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1 - 1e-9:  # float slack, or pacing can spin on 0.999...
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


# --- wire format ---------------------------------------------------------------

def build_query(name: str, rdtype: str, qid: int) -> bytes:
    header = struct.pack(">HHHHHH", qid, 0x0100, 1, 0, 0, 0)
    qname = b"".join(bytes([len(p)]) + p.encode("ascii") for p in name.rstrip(".").split(".")) + b"\0"
    return header + qname + struct.pack(">HH", QTYPE[rdtype], 1)


def _skip_name(msg: bytes, off: int) -> int:
    while True:
        if off >= len(msg):
            raise ValueError("truncated name")
        n = msg[off]
        if n == 0:
            return off + 1
        if n & 0xC0 == 0xC0:
            return off + 2
        off += 1 + n


def _read_name(msg: bytes, off: int) -> str:
    parts = []
    for _ in range(128):
        n = msg[off]
        if n == 0:
            break
        if n & 0xC0 == 0xC0:
            off = ((n & 0x3F) << 8) | msg[off + 1]
            continue
        parts.append(msg[off + 1:off + 1 + n].decode("ascii", "replace"))
        off += 1 + n
    return ".".join(parts)


def parse_response(msg: bytes, qid: int, rdtype: str) -> Answer:
    if len(msg) < 12:
        raise ValueError("short DNS response")
    rid, flags, qd, an, _ns, _ar = struct.unpack(">HHHHHH", msg[:12])
    if rid != qid:
        raise ValueError("response id mismatch")
    off = 12
    for _ in range(qd):
        off = _skip_name(msg, off) + 4
    want = QTYPE[rdtype]
    records = []
    for _ in range(an):
        off = _skip_name(msg, off)
        rtype, _rclass, _ttl, rdlen = struct.unpack(">HHIH", msg[off:off + 10])
        off += 10
        rdata = msg[off:off + rdlen]
        if rtype == want:
            if rtype == 1 and rdlen == 4:
                records.append(socket.inet_ntop(socket.AF_INET, rdata))
            elif rtype == 28 and rdlen == 16:
                records.append(socket.inet_ntop(socket.AF_INET6, rdata))
            elif rtype == 2:
                records.append(_read_name(msg, off))
        off += rdlen
    return Answer(rcode=flags & 0x000F, records=tuple(records), authoritative=bool(flags & 0x0400))


class UdpBackend:
    """Minimal stub resolver: one UDP datagram per query, no EDNS, no TCP fallback."""

    def __call__(self, name: str, rdtype: str, nameserver: str, timeout: float) -> Answer:
        host, port = split_hostport(nameserver)
        qid = random.getrandbits(16)
        family = socket.AF_INET6 if ":" in host else socket.AF_INET
        with socket.socket(family, socket.SOCK_DGRAM) as sock:
            sock.settimeout(timeout)
            try:
                sock.connect((host, port))
                sock.send(build_query(name, rdtype, qid))
                deadline = time.monotonic() + timeout
                while True:
                    data = sock.recv(4096)
                    try:
                        return parse_response(data, qid, rdtype)
                    except ValueError:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0:
                            raise socket.timeout()
                        sock.settimeout(remaining)
            except socket.timeout:
                raise DnsTimeout(f"{name} {rdtype} @{nameserver}") from None
            except (ConnectionRefusedError, OSError) as e:
                raise NameserverUnreachable(f"{nameserver}: {e}") from None


class StaticZoneBackend:
    """Answers from an in-memory zone: names present resolve, all others are NXDOMAIN.

    `zone` maps a name to its A addresses; an empty list marks an NS-only name.
    """

    def __init__(self, zone: Mapping[str, Sequence[str]]):
        self.zone = {k.lower().rstrip("."): list(v) for k, v in zone.items()}

    @classmethod
    def from_file(cls, path) -> "StaticZoneBackend":
        data = json.loads(Path(path).read_text("utf-8"))
        if isinstance(data, list):
            data = {name: ["127.0.0.1"] for name in data}
        return cls(data)

    def __call__(self, name, rdtype, nameserver, timeout):
        addrs = self.zone.get(name.lower().rstrip("."))
        if addrs is None:
            return Answer(RCODE_NXDOMAIN)
        if rdtype == "A":
            return Answer(RCODE_NOERROR, tuple(a for a in addrs if ":" not in a))
        if rdtype == "AAAA":
            return Answer(RCODE_NOERROR, tuple(a for a in addrs if ":" in a))
        return Answer(RCODE_NOERROR, ("ns1.fixture.invalid",), authoritative=True)


class _Unresolved(Exception):
    pass


class Resolver:
    """Resolves batches of candidates against `cfg.nameservers` through `backend`.

    One batch at a time per instance; separate instances are independent.
    """

    def __init__(self, cfg: ResolverConfig | None = None, backend: Backend | None = None,
                 clock: Callable[[], datetime] | None = None):
        self.cfg = cfg or ResolverConfig()
        self.backend = backend or UdpBackend()
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.buckets = {ns: TokenBucket(self.cfg.rate_per_ns) for ns in self.cfg.nameservers}
        self._lock = threading.Lock()
        self._responses = 0
        self._unreachable = 0

    def _query(self, name: str, rdtype: str, slot: int) -> Answer:
        nss = self.cfg.nameservers
        timeout = self.cfg.timeout_ms / 1000
        for attempt in range(self.cfg.retries + 1):
            ns = nss[(slot + attempt) % len(nss)]
            self.buckets[ns].acquire()
            try:
                ans = self.backend(name, rdtype, ns, timeout)
            except DnsTimeout:
                continue
            except NameserverUnreachable:
                with self._lock:
                    self._unreachable += 1
                continue
            with self._lock:
                self._responses += 1
            if ans.rcode == RCODE_SERVFAIL:
                continue
            return ans
        raise _Unresolved(name)

    def _resolve_one(self, slot: int, cand: CandidateDomain) -> ResolutionResult:
        name = cand.candidate.name
        try:
            for rdtype in ("A", "AAAA", "NS"):
                ans = self._query(name, rdtype, slot)
                if ans.rcode == RCODE_NXDOMAIN:
                    status, addrs = Status.UNREGISTERED, ()
                    break
                if ans.rcode != RCODE_NOERROR:
                    continue
                if ans.records and rdtype != "NS":
                    status, addrs = Status.REGISTERED, ans.records
                    break
                if rdtype == "NS" and (ans.records or ans.authoritative):
                    status, addrs = Status.REGISTERED, ()
                    break
            else:
                status, addrs = Status.UNREGISTERED, ()
        except _Unresolved:
            status, addrs = Status.UNRESOLVED, ()
        return ResolutionResult(cand, status, tuple(addrs), self.clock())

    def resolve_batch(self, candidates: Iterable[CandidateDomain]) -> list[ResolutionResult]:
        cands = list(candidates)
        if not cands:
            return []
        self._responses = self._unreachable = 0
        with ThreadPoolExecutor(max_workers=min(self.cfg.max_in_flight, len(cands))) as pool:
            results = list(pool.map(self._resolve_one, itertools.count(), cands))
        if self._responses == 0 and self._unreachable > 0:
            raise ResolverUnavailableError(
                "no nameserver reachable: " + ", ".join(self.cfg.nameservers))
        return results


def resolve_batch(candidates: Iterable[CandidateDomain], cfg: ResolverConfig | None = None,
                  backend: Backend | None = None) -> list[ResolutionResult]:
    return Resolver(cfg, backend).resolve_batch(candidates)


@dataclass(frozen=True)
class FilterSummary:
    registered: int = 0
    unregistered: int = 0
    unresolved: int = 0


def filter_registered(results: Iterable[ResolutionResult]) -> tuple[set[CandidateDomain], FilterSummary]:
    results = list(results)
    registered = {r.candidate for r in results if r.status is Status.REGISTERED}
    counts = {s: sum(1 for r in results if r.status is s) for s in Status}
    return registered, FilterSummary(counts[Status.REGISTERED], counts[Status.UNREGISTERED],
                                     counts[Status.UNRESOLVED])


def write_audit(results: Iterable[ResolutionResult], out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["candidate", "status", "first_address", "queried_at"])
    for r in results:
        w.writerow([r.candidate.candidate.name, r.status.value, r.addresses[0] if r.addresses else "",
                    r.queried_at.strftime("%Y-%m-%dT%H:%M:%S.%fZ")])
    Path(out).write_text(buf.getvalue(), encoding="utf-8", newline="")
