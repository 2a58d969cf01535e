"""Append-only JSON-Lines store for scan and classification records.

One envelope per LF-terminated line::

    {"schema_version": 1, "record_type": "scan", "written_at": "...Z", "payload": {...}}

Appends go through a single O_APPEND write per line followed by fsync, so a
concurrent reader sees a prefix of the sequence.  A line that fails to parse
(typically a crash-truncated tail) is skipped and counted, never fatal.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

SCHEMA_VERSION = 1
RECORD_TYPES = ("scan", "classification")


class StoreError(Exception):
    pass


class SchemaError(StoreError):
    pass


def utcnow_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


_SCAN_FIELDS = {
    "job_id": str, "run_id": str, "url": str, "final_url": str, "profile_label": str,
    "status": str, "duration_ms": int, "started_at": str, "dialogs": list,
}
_DIALOG_FIELDS = {"message": str, "page_url": str, "kind": str, "offset_ms": int}
_CLASSIFICATION_FIELDS = {
    "message": str, "category": str, "language": str, "malicious": bool,
    "matched_rule_id": str, "rule_table_checksum": str,
}


def _check_fields(obj, spec, where):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    for name, typ in spec.items():
        if name not in obj:
            raise SchemaError(f"{where}: missing field {name!r}")
        value = obj[name]
        if typ is int and isinstance(value, bool) or not isinstance(value, typ):
            raise SchemaError(f"{where}: field {name!r} must be {typ.__name__}")


def validate_payload(record_type: str, payload) -> None:
    if record_type == "scan":
        _check_fields(payload, _SCAN_FIELDS, "scan payload")
        for i, d in enumerate(payload["dialogs"]):
            _check_fields(d, _DIALOG_FIELDS, f"scan payload dialogs[{i}]")
    elif record_type == "classification":
        _check_fields(payload, _CLASSIFICATION_FIELDS, "classification payload")
    else:
        raise SchemaError(f"unknown record_type {record_type!r}")


@dataclass(frozen=True)
class RecordEnvelope:
    record_type: str
    payload: dict
    written_at: str = field(default_factory=utcnow_iso)
    schema_version: int = SCHEMA_VERSION

    def to_line(self) -> str:
        return json.dumps({"schema_version": self.schema_version, "record_type": self.record_type,
                           "written_at": self.written_at, "payload": self.payload},
                          ensure_ascii=False, separators=(",", ":")) + "\n"

    @classmethod
    def from_obj(cls, obj) -> "RecordEnvelope":
        if not isinstance(obj, dict) or set(obj) != {"schema_version", "record_type", "written_at", "payload"}:
            raise SchemaError("envelope fields do not match")
        if not isinstance(obj["schema_version"], int) or obj["schema_version"] > SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {obj['schema_version']!r}")
        validate_payload(obj["record_type"], obj["payload"])
        return cls(obj["record_type"], obj["payload"], obj["written_at"], obj["schema_version"])


@dataclass
class LoadReport:
    envelopes: list[RecordEnvelope]
    corrupt_count: int = 0
    corrupt_lines: list[int] = field(default_factory=list)

    def __iter__(self):
        return iter(self.envelopes)

    def __len__(self):
        return len(self.envelopes)


class JsonlStore:
    """Single-writer, many-reader store at `path`."""

    def __init__(self, path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()

    def append(self, envelope: RecordEnvelope) -> int:
        """Write one envelope; returns its byte offset, which grows strictly with each append."""
        validate_payload(envelope.record_type, envelope.payload)
        line = envelope.to_line().encode("utf-8")
        with self._lock:
            try:
                fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            except OSError as e:
                raise StoreError(f"{self.path}: {e.strerror}") from None
            try:
                pos = os.lseek(fd, 0, os.SEEK_END)
                if pos > 0 and self._last_byte(fd) != b"\n":
                    # terminate a torn tail left by a crash so it stays one corrupt line
                    os.write(fd, b"\n")
                    pos += 1
                written = os.write(fd, line)
                if written != len(line):
                    raise StoreError(f"{self.path}: short write ({written}/{len(line)} bytes)")
                if self.fsync:
                    os.fsync(fd)
            except OSError as e:
                raise StoreError(f"{self.path}: {e.strerror}") from None
            finally:
                os.close(fd)
        return pos

    def _last_byte(self, fd) -> bytes:
        with open(self.path, "rb") as fh:
            fh.seek(-1, os.SEEK_END)
            return fh.read(1)

    def extend(self, envelopes: Iterable[RecordEnvelope]) -> list[int]:
        return [self.append(e) for e in envelopes]

    def load_all(self, record_type: str | None = None, run_id: str | None = None,
                 where: Callable[[RecordEnvelope], bool] | None = None) -> LoadReport:
        if not self.path.exists():
            return LoadReport([])
        try:
            data = self.path.read_bytes()
        except OSError as e:
            raise StoreError(f"{self.path}: {e.strerror}") from None
        report = LoadReport([])
        for lineno, raw in enumerate(data.split(b"\n"), start=1):
            if not raw.strip():
                continue
            try:
                env = RecordEnvelope.from_obj(json.loads(raw.decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError, SchemaError, KeyError, TypeError):
                report.corrupt_count += 1
                report.corrupt_lines.append(lineno)
                continue
            if record_type is not None and env.record_type != record_type:
                continue
            if run_id is not None and env.payload.get("run_id") != run_id:
                continue
            if where is not None and not where(env):
                continue
            report.envelopes.append(env)
        return report


def append(store: JsonlStore, envelope: RecordEnvelope) -> int:
    return store.append(envelope)


def load_all(store: JsonlStore, **filters) -> LoadReport:
    return store.load_all(**filters)
