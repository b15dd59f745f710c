"""stagebench command line.

Subcommands: `server start|stop` manage a staging backend on its own,
`pattern1` and `pattern2` orchestrate full benchmark runs (backend,
components, metrics), `report` re-aggregates event logs, `selftest` runs a
quick built-in health check, and `crc32` prints the shard hash of a key.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Output goes under
--out, the STAGEBENCH_OUT environment variable, or ./stagebench-out.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import shutil
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .components import EPOCH_KEY
from .datastore import DataStore, ServerInfo
from .errors import NoEventsError, StageBenchError
from .keys import crc32_hex
from .metrics import (
    aggregate_records,
    exec_time_per_iteration,
    iter_event_files,
    load_events,
    summary_to_csv,
    throughput_table,
    throughput_to_csv,
    SummaryRow,
)
from .patterns import (
    build_pattern1,
    build_pattern2,
    pattern1_configs,
    pattern2_configs,
)
from .server import ServerConfig, ServerManager, shutdown_endpoint
from .timeline import build_spans, render_svg, spans_to_json
from .workflow import launch

DEFAULT_OUT = "stagebench-out"
OUT_ENV = "STAGEBENCH_OUT"


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _parse_payloads(text: str) -> list[int]:
    sizes = []
    for part in text.split(","):
        part = part.strip()
        if part:
            sizes.append(int(part))
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"bad payload list {text!r}")
    return sizes


def _new_run_dir(args, pattern: str, payload_bytes: int) -> tuple[str, Path]:
    run_id = (
        f"{pattern}-{time.strftime('%Y%m%d-%H%M%S')}"
        f"-{payload_bytes}b-{secrets.token_hex(3)}"
    )
    run_dir = _out_root(args) / run_id
    run_dir.mkdir(parents=True)
    return run_id, run_dir


def _backend_config(args, run_id: str, run_dir: Path) -> ServerConfig:
    if args.backend == "memserver":
        return ServerConfig(
            kind="memserver", bind=["127.0.0.1:0"] * args.endpoints
        )
    if args.backend == "filesystem":
        roots = [str(run_dir / "store")]
    else:
        roots = [str(Path(tempfile.gettempdir()) / f"stagebench-{run_id}")]
    return ServerConfig(kind=args.backend, roots=roots, shard_count=args.shards)


def _write_outputs(
    run_dir: Path,
    backend: str,
    exec_component: str | None,
    exec_iters: int | None,
) -> dict:
    """Aggregate the run's events into summary/throughput/timeline files."""
    paths = iter_event_files(run_dir / "events")
    events, malformed = load_events(paths)
    summary = aggregate_records(events, malformed)
    if exec_component is not None and exec_iters:
        component_events = [e for e in events if e.component == exec_component]
        metric = exec_time_per_iteration(component_events, exec_iters)
        summary.extra_rows.append(
            SummaryRow(
                component=exec_component,
                kind="exec_time_per_iteration",
                count=exec_iters,
                mean_s=metric,
                std_s=0.0,
                total_bytes=0,
                mean_gibps=0.0,
                std_gibps=0.0,
            )
        )
    csv_text = summary_to_csv(summary)
    (run_dir / "summary.csv").write_text(csv_text)
    (run_dir / "throughput.csv").write_text(
        throughput_to_csv(throughput_table(events, backend))
    )
    spans = build_spans(events)
    (run_dir / "timeline.json").write_text(spans_to_json(spans) + "\n")
    (run_dir / "timeline.svg").write_text(render_svg(spans) + "\n")
    return {
        "n_events": summary.n_events,
        "malformed_lines": summary.malformed_lines,
        "csv": csv_text,
    }


def _check_run_outputs(run_dir: Path) -> list[str]:
    missing = [
        name
        for name in ("manifest.json", "launch_report.json", "summary.csv",
                     "throughput.csv", "timeline.json", "timeline.svg")
        if not (run_dir / name).is_file()
    ]
    if not iter_event_files(run_dir / "events"):
        missing.append("events/*.jsonl")
    return missing


def _run_pattern(args, pattern: str) -> int:
    payloads = _parse_payloads(args.payload_bytes)
    failures = 0
    for payload_bytes in payloads:
        run_id, run_dir = _new_run_dir(args, pattern, payload_bytes)
        ok = _run_once(args, pattern, payload_bytes, run_id, run_dir)
        if not ok:
            failures += 1
        print(f"{run_id}: {'ok' if ok else 'FAILED'} ({run_dir})")
    return 1 if failures else 0


def _run_once(
    args, pattern: str, payload_bytes: int, run_id: str, run_dir: Path
) -> bool:
    seed = args.seed if args.seed is not None else secrets.randbelow(2**31)
    busy = not args.sleep_mode

    if pattern == "pattern1":
        sim_cfg, trainer_cfg = pattern1_configs(
            sim_time=args.sim_time,
            ai_time=args.ai_time,
            sim_steps=args.sim_steps,
            trainer_iters=args.trainer_iters,
            write_interval=args.write_interval,
            read_interval=args.read_interval,
            payload_bytes=payload_bytes,
            keys_per_snapshot=args.keys_per_snapshot,
            stop_check_interval=args.stop_check_interval,
            steer=not args.no_steer,
            busy=busy,
            seed=seed,
            reference_scale=args.reference_scale,
        )
        sim_cfgs = [sim_cfg]
    else:
        sim_cfgs, trainer_cfg = pattern2_configs(
            n_producers=args.producers,
            sim_time=args.sim_time,
            ai_time=args.ai_time,
            trainer_iters=args.trainer_iters,
            write_interval=args.write_interval,
            read_interval=args.read_interval,
            payload_bytes=payload_bytes,
            keys_per_snapshot=args.keys_per_snapshot,
            stall_timeout=args.stall_timeout,
            busy=busy,
            seed=seed,
            reference_scale=args.reference_scale,
        )

    manager = ServerManager(_backend_config(args, run_id, run_dir))
    store = None
    try:
        info = manager.start_server()
        if pattern == "pattern1":
            graph = build_pattern1(sim_cfgs[0], trainer_cfg, info, run_dir)
        else:
            graph = build_pattern2(sim_cfgs, trainer_cfg, info, run_dir)

        manifest = {
            "run_id": run_id,
            "pattern": pattern,
            "created_unix": time.time(),
            "backend": info.to_dict(),
            "payload_bytes": payload_bytes,
            "seed": seed,
            "reference_scale": bool(args.reference_scale),
            "components": [c.to_dict() for c in sim_cfgs] + [trainer_cfg.to_dict()],
            "out_dir": str(run_dir),
        }
        (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

        store = DataStore(info, client_id="orchestrator.r0")
        store.stage_write(EPOCH_KEY, repr(time.time()).encode("ascii"))

        report = launch(graph, log_dir=run_dir / "logs")
        report.save(run_dir / "launch_report.json")
        if not report.success:
            print(f"launch failed: {report.error}", file=sys.stderr)
            return False

        exec_component = trainer_cfg.name if pattern == "pattern2" else None
        exec_iters = trainer_cfg.total_iters if pattern == "pattern2" else None
        out = _write_outputs(run_dir, args.backend, exec_component, exec_iters)
        missing = _check_run_outputs(run_dir)
        if missing:
            print(f"missing outputs: {', '.join(missing)}", file=sys.stderr)
            return False
        print(out["csv"], end="")
        if out["malformed_lines"]:
            print(f"warning: {out['malformed_lines']} malformed event lines",
                  file=sys.stderr)
        return True
    finally:
        if store is not None:
            store.close()
        manager.stop_server()
        if args.backend == "nodelocal":
            shutil.rmtree(
                Path(tempfile.gettempdir()) / f"stagebench-{run_id}",
                ignore_errors=True,
            )
        elif args.backend == "filesystem":
            shutil.rmtree(run_dir / "store", ignore_errors=True)


def cmd_pattern1(args) -> int:
    return _run_pattern(args, "pattern1")


def cmd_pattern2(args) -> int:
    return _run_pattern(args, "pattern2")


def cmd_report(args) -> int:
    events_path = Path(args.events)
    paths = iter_event_files(events_path)
    if not paths:
        raise NoEventsError(f"no event files under {events_path}")
    events, malformed = load_events(paths)
    summary = aggregate_records(events, malformed)
    if args.exec_component and args.total_iters:
        component_events = [e for e in events if e.component == args.exec_component]
        summary.extra_rows.append(
            SummaryRow(
                component=args.exec_component,
                kind="exec_time_per_iteration",
                count=args.total_iters,
                mean_s=exec_time_per_iteration(component_events, args.total_iters),
                std_s=0.0,
                total_bytes=0,
                mean_gibps=0.0,
                std_gibps=0.0,
            )
        )
    csv_text = summary_to_csv(summary)
    print(csv_text, end="")
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.csv").write_text(csv_text)
        (out_dir / "throughput.csv").write_text(
            throughput_to_csv(throughput_table(events, args.backend))
        )
    if args.timeline:
        if out_dir:
            target = out_dir
        elif events_path.is_dir():
            target = events_path
        else:
            target = Path.cwd()
        groups: dict[str, list] = {}
        for path in paths:
            try:
                rel = path.relative_to(events_path)
                group = rel.parts[0] if len(rel.parts) > 1 else "run"
            except ValueError:
                group = "run"
            groups.setdefault(group, []).append(path)
        for group, group_paths in sorted(groups.items()):
            group_events, _ = load_events(group_paths)
            spans = build_spans(group_events)
            (Path(target) / f"timeline-{group}.json").write_text(
                spans_to_json(spans) + "\n"
            )
            (Path(target) / f"timeline-{group}.svg").write_text(
                render_svg(spans) + "\n"
            )
    if malformed:
        print(f"warning: {malformed} malformed event lines", file=sys.stderr)
    return 0


def cmd_server_start(args) -> int:
    if args.config:
        config = ServerConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        if not args.backend:
            raise ValueError("either --config or --backend is required")
        config = ServerConfig(
            kind=args.backend,
            bind=args.bind or [],
            roots=args.root or [],
            shard_count=args.shards,
            info_path=args.info,
        )
    if config.info_path is None:
        config.info_path = args.info or "server_info.json"
    manager = ServerManager(config)
    info = manager.start_server()
    print(f"{config.kind} backend ready; info written to {config.info_path}")
    if config.kind == "memserver":
        print("endpoints: " + ", ".join(info.endpoints))
        try:
            manager.memserver.wait()
        except KeyboardInterrupt:
            pass
        manager.stop_server()
        print("server stopped")
    return 0


def cmd_server_stop(args) -> int:
    info = ServerInfo.load(args.info)
    if info.kind != "memserver":
        print(f"{info.kind} backend has no server process; nothing to stop")
        return 0
    stopped = sum(shutdown_endpoint(ep) for ep in info.endpoints)
    print(f"shutdown sent to {stopped}/{len(info.endpoints)} endpoints")
    return 0


def cmd_crc32(args) -> int:
    print(crc32_hex(args.key))
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return run_selftest()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagebench",
        description="Benchmark data staging between simulation and training emulators.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    server = sub.add_parser("server", help="manage a staging backend")
    server_sub = server.add_subparsers(dest="server_command", required=True)
    start = server_sub.add_parser("start", help="prepare/start a backend")
    start.add_argument("--config", help="ServerConfig JSON file")
    start.add_argument(
        "--backend", choices=("filesystem", "nodelocal", "memserver")
    )
    start.add_argument("--bind", action="append", help="host:port (repeatable)")
    start.add_argument("--root", action="append", help="storage root (repeatable)")
    start.add_argument("--shards", type=int, default=None)
    start.add_argument("--info", help="where to write ServerInfo JSON")
    start.set_defaults(func=cmd_server_start)
    stop = server_sub.add_parser("stop", help="stop a running memserver")
    stop.add_argument("--info", required=True, help="ServerInfo JSON file")
    stop.set_defaults(func=cmd_server_stop)

    for name, helptext in (
        ("pattern1", "one sim, one trainer, decoupled with steering"),
        ("pattern2", "N producers feeding one blocking trainer"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--backend",
                       choices=("filesystem", "nodelocal", "memserver"),
                       default="filesystem")
        p.add_argument("--endpoints", type=int, default=1,
                       help="memserver endpoints (cluster size)")
        p.add_argument("--shards", type=int, default=4,
                       help="shard count for directory backends")
        p.add_argument("--payload-bytes", default="1258291",
                       help="comma-separated sweep of snapshot value sizes")
        p.add_argument("--sim-time", type=float,
                       default=0.003 if name == "pattern1" else 0.006)
        p.add_argument("--ai-time", type=float, default=0.006)
        p.add_argument("--trainer-iters", type=int,
                       default=500 if name == "pattern1" else 200)
        p.add_argument("--write-interval", type=int,
                       default=100 if name == "pattern1" else 10)
        p.add_argument("--read-interval", type=int, default=10)
        p.add_argument("--keys-per-snapshot", type=int, default=2)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--sleep-mode", action="store_true",
                       help="sleep instead of busy compute")
        p.add_argument("--reference-scale", action="store_true",
                       help="use the full reference workload sizes")
        p.add_argument("--out", help=f"output root (default ${OUT_ENV} or "
                                     f"./{DEFAULT_OUT})")
        if name == "pattern1":
            p.add_argument("--sim-steps", type=int, default=5000)
            p.add_argument("--stop-check-interval", type=int, default=10)
            p.add_argument("--no-steer", action="store_true",
                           help="do not stop the sim when training finishes")
            p.set_defaults(func=cmd_pattern1)
        else:
            p.add_argument("--producers", type=int, default=4)
            p.add_argument("--stall-timeout", type=float, default=300.0)
            p.set_defaults(func=cmd_pattern2)

    report = sub.add_parser("report", help="aggregate event logs")
    report.add_argument("--events", required=True,
                        help="event file or directory of *.jsonl")
    report.add_argument("--out", help="directory for summary/throughput CSVs")
    report.add_argument("--backend", default="unknown",
                        help="backend label for the throughput table")
    report.add_argument("--timeline", action="store_true",
                        help="emit timeline JSON+SVG per run found")
    report.add_argument("--total-iters", type=int, default=None)
    report.add_argument("--exec-component", default=None,
                        help="component for the exec_time_per_iteration row")
    report.set_defaults(func=cmd_report)

    selftest = sub.add_parser("selftest", help="built-in health checks")
    selftest.set_defaults(func=cmd_selftest)

    crc = sub.add_parser("crc32", help="print the shard hash of a key")
    crc.add_argument("key")
    crc.set_defaults(func=cmd_crc32)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (StageBenchError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
