"""Pipeline configuration: JSON file, ``TYPOSCAN_*`` environment overrides, CLI flags.

Relative paths in a config file are resolved against the file's directory.
Unset resource paths fall back to the tables bundled with the package.

Environment variables (applied after the file, before command-line flags)::

    TYPOSCAN_WORK_DIR  TYPOSCAN_STORE  TYPOSCAN_REPORT_DIR  TYPOSCAN_DRIVER
    TYPOSCAN_DEVTOOLS_ENDPOINT  TYPOSCAN_MANIFEST  TYPOSCAN_PROFILES
    TYPOSCAN_TECHNIQUES  TYPOSCAN_POOL_SIZE  TYPOSCAN_RUN_ID  TYPOSCAN_ZONE
    TYPOSCAN_NAMESERVERS
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .classify import LanguageDetector, RuleError, RuleTable
from .domains import DomainError, GenResources, Technique, techniques_from
from .driver.base import BUILTIN_PROFILES, DEFAULT_DIALOG_CAP, DEFAULT_GRACE_MS, DEFAULT_HARD_CAP_MS, UserAgentProfile
from .resolver import ResolverConfig

ENV_PREFIX = "TYPOSCAN_"
DRIVERS = ("fake", "devtools")


class ConfigError(ValueError):
    pass


@dataclass
class ScanSettings:
    profiles: list[str] = field(default_factory=lambda: list(BUILTIN_PROFILES))
    pool_size: int = 8
    grace_ms: int = DEFAULT_GRACE_MS
    hard_cap_ms: int = DEFAULT_HARD_CAP_MS
    dialog_cap: int = DEFAULT_DIALOG_CAP
    max_attempts: int = 2
    run_id: str = "run-1"
    progress_every: int = 0


@dataclass
class ResolverSettings:
    nameservers: list[str] = field(default_factory=lambda: ["8.8.8.8:53"])
    max_in_flight: int = 64
    timeout_ms: int = 3000
    retries: int = 2
    rate_per_ns: float = 100.0
    zone: Path | None = None

    def to_config(self) -> ResolverConfig:
        return ResolverConfig(list(self.nameservers), self.max_in_flight, self.timeout_ms, self.retries,
                              self.rate_per_ns)


@dataclass
class PipelineConfig:
    seeds: Path | None = None
    work_dir: Path = Path("typoscan-work")
    candidates: Path | None = None
    registered: Path | None = None
    audit: Path | None = None
    store: Path | None = None
    report_dir: Path | None = None
    report_format: str = "csv"
    techniques: list[str] = field(default_factory=lambda: ["all"])
    suffixes: list[str] = field(default_factory=list)
    adjacency: Path | None = None
    glyphs: Path | None = None
    homophones: Path | None = None
    keywords: Path | None = None
    rules: Path | None = None
    stopwords: Path | None = None
    translations: Path | None = None
    driver: str = "fake"
    devtools_endpoint: str = "127.0.0.1:9222"
    manifest: Path | None = None
    resolver: ResolverSettings = field(default_factory=ResolverSettings)
    scan: ScanSettings = field(default_factory=ScanSettings)
    extra_profiles: dict[str, UserAgentProfile] = field(default_factory=dict)

    # stage files default to fixed names under work_dir
    def path(self, name: str) -> Path:
        explicit = getattr(self, name)
        if explicit is not None:
            return Path(explicit)
        default = {"candidates": "candidates.csv", "registered": "registered.csv", "audit": "resolution.csv",
                   "store": "store.jsonl", "report_dir": "report"}[name]
        return Path(self.work_dir) / default

    @property
    def profiles(self) -> dict[str, UserAgentProfile]:
        known = dict(BUILTIN_PROFILES)
        known.update(self.extra_profiles)
        return known

    def technique_set(self) -> set[Technique]:
        return techniques_from(self.techniques)

    def gen_resources(self) -> GenResources:
        return GenResources.load(self.adjacency, self.glyphs, self.homophones, self.keywords)

    def rule_table(self) -> RuleTable:
        return RuleTable.load(self.rules)

    def detector(self) -> LanguageDetector:
        return LanguageDetector.load(self.stopwords)

    def validate(self) -> "PipelineConfig":
        """Check values and load every resource table once; raises ConfigError."""
        if self.driver not in DRIVERS:
            raise ConfigError(f"driver must be one of {', '.join(DRIVERS)}, not {self.driver!r}")
        if self.report_format not in ("csv", "json"):
            raise ConfigError(f"report_format must be csv or json, not {self.report_format!r}")
        s = self.scan
        unknown = [p for p in s.profiles if p not in self.profiles]
        if unknown:
            raise ConfigError(f"unknown profile label(s): {', '.join(unknown)} "
                              f"(known: {', '.join(self.profiles)})")
        if not s.profiles or len(set(s.profiles)) != len(s.profiles):
            raise ConfigError("scan.profiles must be a non-empty list without duplicates")
        for name in ("pool_size", "hard_cap_ms", "dialog_cap", "max_attempts"):
            if getattr(s, name) < 1:
                raise ConfigError(f"scan.{name} must be >= 1")
        if s.grace_ms < 0 or s.progress_every < 0:
            raise ConfigError("scan.grace_ms and scan.progress_every must be >= 0")
        if not s.run_id:
            raise ConfigError("scan.run_id is empty")
        for name in ("adjacency", "glyphs", "homophones", "keywords", "rules", "stopwords", "translations"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name}: no such file {p}")
        if self.resolver.zone is not None and not Path(self.resolver.zone).is_file():
            raise ConfigError(f"resolver.zone: no such file {self.resolver.zone}")
        try:
            self.technique_set()
            self.gen_resources()
            self.rule_table()
            self.detector()
            self.resolver.to_config()
        except (DomainError, RuleError, OSError, ValueError) as e:
            raise ConfigError(str(e)) from None
        return self


_PATH_KEYS = {"seeds", "work_dir", "candidates", "registered", "audit", "store", "report_dir", "adjacency",
              "glyphs", "homophones", "keywords", "rules", "stopwords", "translations", "manifest"}


def _section(cls, data: Mapping, where: str, base: Path):
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(extra))}")
    out = cls()
    for k, v in data.items():
        if k == "zone" and v is not None:
            v = base / v
        setattr(out, k, v)
    return out


def from_dict(data: Mapping, base: Path = Path(".")) -> PipelineConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    cfg = PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(extra))}")
    for k, v in data.items():
        if k == "resolver":
            cfg.resolver = _section(ResolverSettings, v, "resolver", base)
        elif k == "scan":
            cfg.scan = _section(ScanSettings, v, "scan", base)
        elif k == "extra_profiles":
            try:
                cfg.extra_profiles = {label: UserAgentProfile(label, **p) for label, p in v.items()}
            except (TypeError, ValueError, AttributeError) as e:
                raise ConfigError(f"extra_profiles: {e}") from None
        elif k in _PATH_KEYS:
            setattr(cfg, k, None if v is None else base / v)
        else:
            setattr(cfg, k, v)
    if isinstance(cfg.techniques, str):
        cfg.techniques = [cfg.techniques]
    return cfg


def _split(v: str) -> list[str]:
    return [x.strip() for x in v.split(",") if x.strip()]


def apply_env(cfg: PipelineConfig, env: Mapping[str, str] = os.environ) -> PipelineConfig:
    def get(name):
        return env.get(ENV_PREFIX + name)

    for name, attr in (("WORK_DIR", "work_dir"), ("STORE", "store"), ("REPORT_DIR", "report_dir"),
                       ("MANIFEST", "manifest")):
        if get(name):
            setattr(cfg, attr, Path(get(name)))
    if get("DRIVER"):
        cfg.driver = get("DRIVER")
    if get("DEVTOOLS_ENDPOINT"):
        cfg.devtools_endpoint = get("DEVTOOLS_ENDPOINT")
    if get("PROFILES"):
        cfg.scan.profiles = _split(get("PROFILES"))
    if get("TECHNIQUES"):
        cfg.techniques = _split(get("TECHNIQUES"))
    if get("RUN_ID"):
        cfg.scan.run_id = get("RUN_ID")
    if get("ZONE"):
        cfg.resolver.zone = Path(get("ZONE"))
    if get("NAMESERVERS"):
        cfg.resolver.nameservers = _split(get("NAMESERVERS"))
    if get("POOL_SIZE"):
        try:
            cfg.scan.pool_size = int(get("POOL_SIZE"))
        except ValueError:
            raise ConfigError(f"{ENV_PREFIX}POOL_SIZE must be an integer") from None
    return cfg


def load_config(path=None, env: Mapping[str, str] = os.environ) -> PipelineConfig:
    """Defaults, then the JSON file at `path` (if any), then environment overrides."""
    if path is None:
        cfg = PipelineConfig()
    else:
        p = Path(path)
        try:
            data = json.loads(p.read_text("utf-8"))
        except OSError as e:
            raise ConfigError(f"{p}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: {e}") from None
        cfg = from_dict(data, p.parent)
    return apply_env(cfg, env)
