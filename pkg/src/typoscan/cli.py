"""Command line entry point: ``typoscan <stage> [options]``.

Exit status is 0 on success, 1 when a stage fails and 2 for usage or
configuration errors.  Diagnostics go to standard error prefixed with the
stage name.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import DRIVERS, ConfigError, PipelineConfig, load_config
from .pipeline import (StageError, cmd_classify, cmd_generate, cmd_pipeline, cmd_report, cmd_resolve,
                       cmd_scan)

log = logging.getLogger("typoscan")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON pipeline config")
    p.add_argument("--driver", choices=DRIVERS, help="browser backend (default: fake)")
    p.add_argument("--profiles", metavar="LABELS", help="comma-separated user agent profile labels")
    p.add_argument("--techniques", metavar="NAMES", help="comma-separated generation techniques, or 'all'")
    p.add_argument("--manifest", metavar="PATH", help="fixture manifest for the fake driver")
    p.add_argument("--endpoint", metavar="HOST:PORT", help="DevTools endpoint for the devtools driver")
    p.add_argument("--work-dir", metavar="DIR", help="directory for stage files")
    p.add_argument("--store", metavar="PATH", help="JSON-Lines record store")
    p.add_argument("--run-id", metavar="ID", help="scan run identifier")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="typoscan", description="Scan typosquatting domains for "
                                     "JavaScript dialog scams and report what they show to whom.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", parents=[common], help="seed list -> candidate CSV")
    p.add_argument("--seeds", metavar="PATH", help="rank,domain CSV")
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("resolve", parents=[common], help="candidate CSV -> registered CSV")
    p.add_argument("--candidates", metavar="PATH")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--audit", metavar="PATH", help="per-candidate resolution CSV")
    p.add_argument("--zone", metavar="PATH", help="answer from a static JSON zone instead of DNS")

    p = sub.add_parser("scan", parents=[common], help="registered CSV -> scan records in the store")
    p.add_argument("--registered", metavar="PATH")
    p.add_argument("--pool-size", type=int)

    sub.add_parser("classify", parents=[common], help="classify stored dialog messages")

    p = sub.add_parser("report", parents=[common], help="store -> figure tables")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--format", choices=("csv", "json"))

    p = sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    p.add_argument("--seeds", metavar="PATH")
    p.add_argument("--out", metavar="DIR", help="report directory")
    p.add_argument("--zone", metavar="PATH")

    fx = sub.add_parser("fixtures", help="synthetic fixture populations")
    fsub = fx.add_subparsers(dest="fixtures_command", required=True, metavar="action")
    p = fsub.add_parser("generate", parents=[common], help="write a population, seeds, zone and config")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--mix", metavar="SPEC", help="e.g. LOTTERY/de@iossafari=0.6,APK=0.4")
    p.add_argument("--out", metavar="DIR", required=True)
    p = fsub.add_parser("truth", parents=[common], help="ground-truth tables of a manifest")
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p = fsub.add_parser("serve", parents=[common], help="serve a manifest over HTTP")
    p.add_argument("--bind", default="127.0.0.1:8000", metavar="HOST:PORT")
    p = fsub.add_parser("emulate", parents=[common], help="run the DevTools emulator against a fixture server")
    p.add_argument("--upstream", required=True, metavar="HOST:PORT")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.driver:
        cfg.driver = args.driver
    if args.profiles:
        cfg.scan.profiles = [x.strip() for x in args.profiles.split(",") if x.strip()]
    if args.techniques:
        cfg.techniques = [x.strip() for x in args.techniques.split(",") if x.strip()]
    if args.manifest:
        cfg.manifest = Path(args.manifest)
    if args.endpoint:
        cfg.devtools_endpoint = args.endpoint
    if args.work_dir:
        cfg.work_dir = Path(args.work_dir)
    if args.store:
        cfg.store = Path(args.store)
    if args.run_id:
        cfg.scan.run_id = args.run_id
    if getattr(args, "seeds", None):
        cfg.seeds = Path(args.seeds)
    if getattr(args, "zone", None):
        cfg.resolver.zone = Path(args.zone)
    if getattr(args, "pool_size", None):
        cfg.scan.pool_size = args.pool_size
    if getattr(args, "format", None) and args.command == "report":
        cfg.report_format = args.format
    if args.command == "pipeline" and args.out:
        cfg.report_dir = Path(args.out)
    return cfg.validate()


def _fixtures(args, cfg: PipelineConfig) -> int:
    from .fixtures.population import generate_population, ground_truth, parse_mix, write_population, DEFAULT_MIX
    from .manifest import load_manifest
    from .report import emit_report

    if args.fixtures_command == "generate":
        mix = parse_mix(args.mix) if args.mix else DEFAULT_MIX
        specs = generate_population(args.seed, args.size, mix)
        paths = write_population(specs, args.out)
        print(f"wrote {len(specs)} fixture specs to {paths['specs']}; config: {paths['config']}")
        return 0
    if cfg.manifest is None:
        raise StageError("fixtures", "--manifest is required")
    specs = load_manifest(cfg.manifest)
    if args.fixtures_command == "truth":
        tables = ground_truth(specs, cfg.scan.profiles, cfg.scan.grace_ms, cfg.scan.hard_cap_ms,
                              cfg.scan.dialog_cap)
        emit_report(tables, args.out, args.format)
        return 0
    if args.fixtures_command == "serve":
        from .fixtures.server import serve
        server = serve(specs, args.bind)
        print(f"serving {len(specs)} fixture sites on http://{server.address}/", flush=True)
        return _wait(server.stop)
    from .fixtures.emulator import DevToolsEmulator
    emu = DevToolsEmulator(args.upstream)
    print(f"DevTools endpoint: {emu.endpoint}", flush=True)
    return _wait(emu.close)


def _wait(stop) -> int:
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        stop()
    return 0


def run_command(args, cfg: PipelineConfig) -> int:
    cmd = args.command
    if cmd == "generate":
        n = cmd_generate(cfg, out=args.out)
        print(f"generate: wrote {n} candidates", file=sys.stderr)
    elif cmd == "resolve":
        s = cmd_resolve(cfg, candidates=args.candidates, out=args.out, audit=args.audit)
        print(f"resolve: {s.registered} registered, {s.unregistered} unregistered, "
              f"{s.unresolved} unresolved", file=sys.stderr)
    elif cmd == "scan":
        s = cmd_scan(cfg, registered=args.registered)
        print(f"scan: {s.records} records in run {s.run_id} ({dict(sorted(s.by_status.items()))}), "
              f"{s.attempts} attempts", file=sys.stderr)
    elif cmd == "classify":
        n = cmd_classify(cfg)
        print(f"classify: {n} new message classification(s)", file=sys.stderr)
    elif cmd == "report":
        paths = cmd_report(cfg, out_dir=args.out)
        print(f"report: wrote {len(paths)} tables to {paths[0].parent if paths else args.out}", file=sys.stderr)
    elif cmd == "pipeline":
        r = cmd_pipeline(cfg)
        print(f"pipeline: {r.candidates} candidates, {r.resolution.registered} registered, "
              f"{r.scan.records} new scan records, {r.classified} new classifications, "
              f"{len(r.report)} report tables", file=sys.stderr)
    else:
        return _fixtures(args, cfg)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    stage = args.command if args.command != "fixtures" else f"fixtures {args.fixtures_command}"
    try:
        cfg = _config(args)
    except ConfigError as e:
        print(f"typoscan {stage}: config error: {e}", file=sys.stderr)
        return 2
    try:
        return run_command(args, cfg)
    except StageError as e:
        print(f"typoscan {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"typoscan {stage}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
