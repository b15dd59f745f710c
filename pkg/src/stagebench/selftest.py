"""Built-in health checks behind `stagebench selftest`.

Each check is independent and prints one PASS/FAIL line; the command exits
nonzero if any check fails. The final check runs a miniature pattern-1
workflow end to end in a temporary directory, so a passing selftest means
subprocess launch, staging, steering, and aggregation all work on this
host.
"""

from __future__ import annotations

import random
import tempfile
import time
import traceback
from pathlib import Path

from .components import EPOCH_KEY
from .datastore import DataStore, ServerInfo
from .keys import crc32_hex, decode_key, encode_key, shard_of
from .metrics import aggregate, iter_event_files
from .patterns import build_pattern1, pattern1_configs
from .server import MemServer, ServerConfig, ServerManager
from .workflow import launch
from . import wire


def _check_crc32() -> None:
    got = crc32_hex("123456789")
    assert got == "CBF43926", f"crc32('123456789') = {got}"
    got = crc32_hex("")
    assert got == "00000000", f"crc32('') = {got}"


def _check_key_codec() -> None:
    rng = random.Random(20240901)
    alphabet = "abcXYZ019._-%/\\ \té☃\U0001f600"
    seen = {}
    for _ in range(1000):
        key = "".join(
            rng.choice(alphabet) for _ in range(rng.randint(1, 40))
        )
        token = encode_key(key)
        assert decode_key(token) == key, f"roundtrip failed for {key!r}"
        assert seen.setdefault(token, key) == key, "codec collision"
    for key, shard in (("sim.step100.k0", shard_of("sim.step100.k0", 8)),):
        assert 0 <= shard < 8, f"shard_of({key!r}) out of range"


def _check_wire_ping() -> None:
    server = MemServer(["127.0.0.1:0"])
    endpoints = server.start()
    try:
        info = ServerInfo(kind="memserver", endpoints=endpoints, shard_count=1)
        with DataStore(info, client_id="selftest.r0") as store:
            status, payload = store._request(0, wire.OP_PING, b"")
            assert status == wire.ST_OK and payload == b"", "ping failed"
            store.stage_write("selftest.key", b"value")
            assert store.stage_read("selftest.key") == b"value"
    finally:
        server.stop()


def _check_mini_workflow() -> None:
    with tempfile.TemporaryDirectory(prefix="stagebench-selftest-") as tmp:
        run_dir = Path(tmp)
        manager = ServerManager(
            ServerConfig(kind="filesystem", roots=[str(run_dir / "store")])
        )
        try:
            info = manager.start_server()
            sim_cfg, trainer_cfg = pattern1_configs(
                sim_time=0.002,
                ai_time=0.004,
                sim_steps=60,
                trainer_iters=30,
                write_interval=20,
                read_interval=10,
                payload_bytes=4096,
                seed=7,
            )
            graph = build_pattern1(sim_cfg, trainer_cfg, info, run_dir)
            with DataStore(info, client_id="selftest.r0") as store:
                store.stage_write(EPOCH_KEY, repr(time.time()).encode("ascii"))
            report = launch(graph, log_dir=run_dir / "logs")
            assert report.success, f"mini workflow failed: {report.error}"
            summary = aggregate(iter_event_files(run_dir / "events"))
            kinds = {(r.component, r.kind) for r in summary.rows}
            assert ("sim", "sim_iter") in kinds, "no sim iterations recorded"
            assert ("trainer", "ai_iter") in kinds, "no trainer iterations recorded"
            assert ("sim", "write") in kinds, "no staging writes recorded"
        finally:
            manager.stop_server()


CHECKS = (
    ("crc32 check values", _check_crc32),
    ("key codec roundtrip", _check_key_codec),
    ("wire protocol ping", _check_wire_ping),
    ("mini pattern1 workflow", _check_mini_workflow),
)


def run_selftest() -> int:
    failures = 0
    for name, check in CHECKS:
        t0 = time.perf_counter()
        try:
            check()
        except Exception as exc:  # report, keep going
            failures += 1
            print(f"FAIL {name}: {exc}")
            traceback.print_exc()
        else:
            print(f"PASS {name} ({time.perf_counter() - t0:.2f}s)")
    if failures:
        print(f"{failures}/{len(CHECKS)} checks failed")
        return 1
    print(f"all {len(CHECKS)} checks passed")
    return 0
