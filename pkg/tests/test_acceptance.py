"""Release acceptance checks.

One test per release criterion, each at its stated tolerance. Running
`pytest tests/test_acceptance.py -v` prints one pass/fail line per criterion.
These tests exercise the installed package end to end, real subprocesses and
real backends included, and take a couple of minutes in total.
"""
from __future__ import annotations

import dataclasses
import json
import math
import multiprocessing
import random
import shutil
import threading
import time
import zlib
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import BACKEND_PARAMS, make_backend
from stagebench.cli import main
from stagebench.components import (
    EPOCH_KEY,
    SimComponentConfig,
    TrainerComponentConfig,
    expected_write_events,
    run_simulation,
)
from stagebench.datastore import DataStore, ServerInfo
from stagebench.errors import KeyNotFoundError, WorkflowValidationError
from stagebench.kernels import (
    DiscretePdf,
    KernelRunner,
    KernelSpec,
    calibrate_primitive,
    fft_radix2,
    ifft_radix2,
)
from stagebench.metrics import (
    EventRecorder,
    RunClock,
    aggregate,
    load_events,
    iter_event_files,
    summary_to_csv,
)
from stagebench.patterns import (
    build_pattern1,
    build_pattern2,
    pattern2_configs,
)
from stagebench.payload import seal_payload, verify_payload
from stagebench.server import ServerConfig, ServerManager
from stagebench.workflow import ComponentSpec, WorkflowGraph, launch

import sys

PY = sys.executable


def _launch_run(graph, info: ServerInfo, run_dir: Path, warmup: float = 0.0):
    """Stage the shared epoch (optionally after a warmup delay so every
    process is past interpreter startup) and run the graph."""

    def stage_epoch():
        with DataStore(info) as store:
            store.stage_write(EPOCH_KEY, repr(time.time()).encode("ascii"))

    timer = None
    if warmup > 0:
        timer = threading.Timer(warmup, stage_epoch)
        timer.start()
    else:
        stage_epoch()
    try:
        return launch(graph, log_dir=run_dir / "logs")
    finally:
        if timer is not None:
            timer.join()


def _events_from(run_dir: Path):
    events, malformed = load_events(iter_event_files(run_dir / "events"))
    assert malformed == 0
    return events


# criterion 1: the shard hash matches the published check values


def test_c01_shard_hash_check_values(capsys):
    """`stagebench crc32` prints CBF43926 for "123456789" and 00000000
    for the empty string."""
    assert main(["crc32", "123456789"]) == 0
    assert capsys.readouterr().out.strip() == "CBF43926"
    assert main(["crc32", ""]) == 0
    assert capsys.readouterr().out.strip() == "00000000"


# criterion 2: the write schedule is exactly predictable


def test_c02_write_schedule_formula():
    """Write-event counts for a run follow init + k * (steps // W) exactly."""
    assert expected_write_events(10108, 100, 2) == 203
    assert expected_write_events(10507, 100, 2) == 211
    assert expected_write_events(10507, 100, 2, emit_init=False) == 210
    assert expected_write_events(25, 10, 2) == 5
    assert expected_write_events(0, 10, 2) == 1


# criterion 3: emulated compute holds its per-iteration time budget


def test_c03_pattern1_sim_iteration_timing(tmp_path):
    """A decoupled sim+trainer run with a 10 ms compute budget keeps the
    sim iteration mean inside [0.010, 0.011] s with std <= 0.002 s over
    at least 500 iterations."""
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    sim_cfg = SimComponentConfig(
        name="sim",
        kernels=[
            KernelSpec(
                name="MatMulSimple2D", data_size=[64, 64], run_time=0.01
            )
        ],
        steps=600,
        write_interval=100,
        keys_per_snapshot=2,
        payload_bytes=4096,
        stop_check_interval=10,
        stop_key=None,
        seed=5,
    )
    # The trainer sleeps through its iterations so the single CPU stays
    # with the sim; the criterion is about the sim's busy-loop fidelity.
    trainer_cfg = TrainerComponentConfig(
        name="trainer",
        total_iters=20,
        read_interval=10,
        producers=["sim"],
        iter_time=0.004,
        busy=False,
        producer_interval=100,
        keys_per_snapshot=2,
        seed=5,
    )
    config = ServerConfig(
        kind="filesystem",
        roots=[str(tmp_path / "store")],
        shard_count=4,
        info_path=str(run_dir / "server_info.json"),
    )
    with ServerManager(config) as manager:
        info = manager.get_server_info()
        graph = build_pattern1(sim_cfg, trainer_cfg, info, run_dir)
        # 2 s warmup lets both interpreters finish importing before t=0
        report = _launch_run(graph, info, run_dir, warmup=2.0)
    assert report.success, report.error
    durations = [
        e.duration
        for e in _events_from(run_dir)
        if e.component == "sim" and e.kind == "sim_iter"
    ]
    assert len(durations) >= 500
    mean = math.fsum(durations) / len(durations)
    var = math.fsum((d - mean) ** 2 for d in durations) / (len(durations) - 1)
    std = math.sqrt(var)
    assert 0.010 <= mean <= 0.011, f"mean={mean:.6f}"
    assert std <= 0.002, f"std={std:.6f}"


# criterion 4: concurrent staging never tears or loses a value


STRESS_WRITERS = 8
STRESS_KEYS = 1000
STRESS_VALUE = 1 << 20


def _stress_writer(info_dict: dict, writer: int) -> None:
    info = ServerInfo.from_dict(info_dict)
    body = random.Random(1000 + writer).randbytes(STRESS_VALUE)
    with DataStore(info) as store:
        for n in range(STRESS_KEYS):
            key = f"stress.w{writer}.n{n:04d}"
            header = key.encode("ascii")
            data = header + body[len(header):STRESS_VALUE - 4]
            store.stage_write(key, seal_payload(data))


def test_c04_concurrent_writers_no_torn_or_lost_data(tmp_path):
    """8 writer processes staging 1000 checksummed 1 MiB values each, with
    a reader polling and verifying concurrently: zero lost keys, zero torn
    values, under two minutes."""
    root = tmp_path / "stress-store"
    config = ServerConfig(
        kind="filesystem",
        roots=[str(root)],
        shard_count=8,
        info_path=str(tmp_path / "info.json"),
    )
    ctx = multiprocessing.get_context("fork")
    started = time.monotonic()
    try:
        with ServerManager(config) as manager:
            info = manager.get_server_info()
            writers = [
                ctx.Process(target=_stress_writer, args=(info.to_dict(), w))
                for w in range(STRESS_WRITERS)
            ]
            for proc in writers:
                proc.start()
            lost = []
            torn = []
            # read round-robin across writers so the reader trails all of
            # them closely and verifies values while they are cache-hot
            with DataStore(info) as store:
                for n in range(STRESS_KEYS):
                    for w in range(STRESS_WRITERS):
                        key = f"stress.w{w}.n{n:04d}"
                        if not store.poll_staged_data(
                            [key], timeout=90.0, interval=0.02
                        ):
                            lost.append(key)
                            continue
                        value = store.stage_read(key)
                        if (
                            len(value) != STRESS_VALUE
                            or not value.startswith(key.encode("ascii"))
                            or not verify_payload(value)
                        ):
                            torn.append(key)
                for proc in writers:
                    proc.join(timeout=60)
                    assert proc.exitcode == 0
                elapsed = time.monotonic() - started
                assert not lost, f"{len(lost)} keys never appeared: {lost[:3]}"
                assert not torn, f"{len(torn)} torn values: {torn[:3]}"
                assert elapsed <= 120.0, f"took {elapsed:.1f}s"
                assert store.clean_staged_data("stress.") == (
                    STRESS_WRITERS * STRESS_KEYS
                )
    finally:
        shutil.rmtree(root, ignore_errors=True)


# criterion 5: every backend exhibits identical client-visible behavior


def _transcript(info: ServerInfo) -> list[str]:
    rng = random.Random(20260816)
    pool = [
        "alpha", "beta.0", "dir/k", "sp ace", "p%cent", "under_score",
        "dot.key", "k" * 40, "α.β", "n0", "n1", "n2",
    ]
    lines = []
    with DataStore(info) as store:
        for i in range(200):
            op = rng.choices(
                ["put", "get", "exists", "poll", "clean"],
                weights=[5, 4, 3, 2, 1],
            )[0]
            key = rng.choice(pool)
            if op == "put":
                value = f"v{i}:{key}".encode() * rng.randint(1, 9)
                store.stage_write(key, value)
                lines.append(f"put {key} {zlib.crc32(value):08x}")
            elif op == "get":
                try:
                    value = store.stage_read(key)
                    lines.append(f"get {key} {zlib.crc32(value):08x}")
                except KeyNotFoundError:
                    lines.append(f"get {key} missing")
            elif op == "exists":
                found = store.poll_staged_data([key], timeout=0)
                lines.append(f"exists {key} {found}")
            elif op == "poll":
                keys = rng.sample(pool, 3)
                found = store.poll_staged_data(keys, timeout=0)
                lines.append(f"poll {','.join(keys)} {found}")
            else:
                prefix = rng.choice(["alpha", "n", "dot.", "zzz"])
                lines.append(f"clean {prefix} {store.clean_staged_data(prefix)}")
        lines.append(f"wipe {store.clean_staged_data('')}")
    return lines


def test_c05_backend_transcripts_identical(tmp_path):
    """The same scripted sequence of 200 mixed operations produces an
    identical transcript on every backend."""
    transcripts = {}
    for kind in BACKEND_PARAMS:
        info, cleanup = make_backend(kind, tmp_path / kind)
        try:
            transcripts[kind] = _transcript(info)
        finally:
            cleanup()
    baseline = transcripts[BACKEND_PARAMS[0]]
    assert len(baseline) == 201
    for kind, lines in transcripts.items():
        assert lines == baseline, f"{kind} diverged from {BACKEND_PARAMS[0]}"


# criterion 6: consumers never observe a snapshot before its producer
# finished staging it


def test_c06_pattern2_delayed_producer_happens_before(tmp_path):
    """With one of four producers stalled 2 s before its third snapshot,
    the blocking trainer waits it out: every read starts after the
    producer's write of that key ended, and the stall is visible as a
    long poll."""
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    sims, trainer = pattern2_configs(
        n_producers=4,
        sim_time=0.003,
        ai_time=0.003,
        trainer_iters=40,
        write_interval=10,
        read_interval=10,
        payload_bytes=2048,
        keys_per_snapshot=2,
        stall_timeout=60.0,
        busy=False,
        seed=9,
    )
    sims[1] = dataclasses.replace(sims[1], snapshot_delays={3: 2.0})
    config = ServerConfig(
        kind="filesystem",
        roots=[str(tmp_path / "store")],
        shard_count=4,
        info_path=str(run_dir / "server_info.json"),
    )
    with ServerManager(config) as manager:
        info = manager.get_server_info()
        graph = build_pattern2(sims, trainer, info, run_dir)
        report = _launch_run(graph, info, run_dir, warmup=4.0)
    assert report.success, report.error
    events = _events_from(run_dir)

    write_end = {
        e.key: e.t_start + e.duration
        for e in events
        if e.kind == "write" and e.component.startswith("sim")
    }
    reads = [e for e in events if e.kind == "read"]
    assert len(reads) == 4 * 2 * (40 // 10)
    # 2 ms slack covers cross-process clock anchoring noise; causality
    # itself is enforced by the store (a poll cannot see a missing key).
    for read in reads:
        assert read.key in write_end, f"read of unwritten key {read.key}"
        assert write_end[read.key] <= read.t_start + 0.002, (
            f"{read.key}: write ended {write_end[read.key]:.6f}, "
            f"read started {read.t_start:.6f}"
        )

    # the injected 2 s stall separates producer sim1's snapshots 2 and 3
    sim1_writes = sorted(
        (e for e in events if e.component == "sim1" and e.kind == "write"),
        key=lambda e: e.t_start,
    )
    second = [e for e in sim1_writes if ".step20." in e.key]
    third = [e for e in sim1_writes if ".step30." in e.key]
    assert second and third
    gap = min(e.t_start for e in third) - max(
        e.t_start + e.duration for e in second
    )
    assert gap >= 1.95, f"stall gap only {gap:.3f}s"

    # and the trainer visibly waited on it
    long_polls = [
        e for e in events
        if e.component == "trainer" and e.kind == "poll" and e.duration >= 1.0
    ]
    assert long_polls, "no poll event reflects the producer stall"


# criterion 7: steering stops a producer promptly


def test_c07_steering_stops_sim_promptly(tmp_path):
    """Once the stop key appears, the sim halts within stop_check_interval
    iterations plus one second."""
    root = tmp_path / "store"
    config = ServerConfig(
        kind="filesystem",
        roots=[str(root)],
        shard_count=4,
        info_path=str(tmp_path / "info.json"),
    )
    with ServerManager(config) as manager:
        info = manager.get_server_info()
        cfg = SimComponentConfig(
            name="sim",
            kernels=[
                KernelSpec(
                    name="MatMulSimple2D",
                    data_size=[16, 16],
                    run_time=0.002,
                    busy=False,
                )
            ],
            steps=100_000,
            write_interval=100_000,
            keys_per_snapshot=1,
            payload_bytes=64,
            stop_check_interval=10,
            stop_key="ctl.stop",
            emit_init_write=False,
            seed=1,
        )

        def stage_stop():
            with DataStore(info) as ctl:
                ctl.stage_write("ctl.stop", b"now")

        timer = threading.Timer(0.4, stage_stop)
        with DataStore(info) as store, EventRecorder(
            tmp_path / "sim.jsonl", "sim"
        ) as recorder:
            clock = RunClock(epoch=time.time())
            timer.start()
            t0 = time.monotonic()
            summary = run_simulation(cfg, store, recorder, clock)
            elapsed = time.monotonic() - t0
        timer.join()
    assert summary.stopped_early
    # bound: stop staged at 0.4s, noticed within 10 iterations of
    # (2 ms sleep + ~2 ms loop overhead), plus a 1 s allowance
    assert elapsed <= 0.4 + 10 * 0.004 + 1.0, f"took {elapsed:.3f}s"
    assert summary.iterations_run < cfg.steps


# criterion 8: the launcher enforces ordering and reports cycles


def test_c08_workflow_ordering_overlap_and_cycles():
    """Dependent components run strictly after their upstreams, independent
    components start together, and cyclic graphs are rejected by name."""
    graph = WorkflowGraph()
    graph.register(
        ComponentSpec(
            name="upstream",
            command=[PY, "-c", "import time; time.sleep(0.3)"],
        )
    )
    graph.register(
        ComponentSpec(
            name="downstream",
            command=[PY, "-c", "pass"],
            dependencies=("upstream",),
        )
    )
    report = launch(graph)
    assert report.success, report.error
    by_name = {r.component: r for r in report.results}
    assert by_name["upstream"].end_time <= by_name["downstream"].start_time

    graph = WorkflowGraph()
    graph.register(
        ComponentSpec(name="a", command=[PY, "-c", "import time; time.sleep(1.1)"])
    )
    graph.register(
        ComponentSpec(name="b", command=[PY, "-c", "import time; time.sleep(1.1)"])
    )
    report = launch(graph)
    assert report.success, report.error
    by_name = {r.component: r for r in report.results}
    skew = abs(by_name["a"].start_time - by_name["b"].start_time)
    assert skew < 0.1, f"independent starts {skew:.3f}s apart"
    assert by_name["a"].start_time < by_name["b"].end_time
    assert by_name["b"].start_time < by_name["a"].end_time

    graph = WorkflowGraph()
    graph.register(ComponentSpec(name="x", command=["true"], dependencies=("z",)))
    graph.register(ComponentSpec(name="y", command=["true"], dependencies=("x",)))
    graph.register(ComponentSpec(name="z", command=["true"], dependencies=("y",)))
    with pytest.raises(WorkflowValidationError) as excinfo:
        graph.validate()
    message = str(excinfo.value)
    for name in ("x", "y", "z"):
        assert name in message


# criterion 9: aggregation arithmetic is exact and reproducible


def test_c09_throughput_math_and_stable_csv(tmp_path):
    """Summary statistics match hand-computed values to 12 significant
    digits and the CSV is byte-identical across reruns."""
    events_dir = tmp_path / "events"
    with EventRecorder(events_dir / "x.r0.jsonl", "x", 0) as rec:
        rec.emit("write", t_start=0.0, duration=0.5, bytes=1 << 29, key="a")
        rec.emit("write", t_start=1.0, duration=0.25, bytes=3 << 28, key="b")
        rec.emit("read", t_start=2.0, duration=0.0625, bytes=1258291, key="c")
    with EventRecorder(events_dir / "x.r1.jsonl", "x", 1) as rec:
        rec.emit("write", t_start=2.0, duration=0.5, bytes=1 << 30, key="d")

    paths = iter_event_files(events_dir)
    summary = aggregate(paths)
    rows = {(r.component, r.kind): r for r in summary.rows}

    w = rows[("x", "write")]
    assert w.count == 3
    assert w.total_bytes == (1 << 29) + (3 << 28) + (1 << 30)
    rel = 1e-12
    assert math.isclose(w.mean_s, 1.25 / 3, rel_tol=rel)
    assert math.isclose(w.std_s, math.sqrt(1 / 48), rel_tol=rel)
    # per-event rates: 1.0, 3.0, 2.0 GiB/s
    assert math.isclose(w.mean_gibps, 2.0, rel_tol=rel)
    assert math.isclose(w.std_gibps, 1.0, rel_tol=rel)

    r = rows[("x", "read")]
    assert math.isclose(
        r.mean_gibps, (1258291 / (1 << 30)) / 0.0625, rel_tol=rel
    )

    first = summary_to_csv(summary)
    again = summary_to_csv(aggregate(iter_event_files(events_dir)))
    assert first == again
    assert first.encode() == again.encode()


# criterion 10: kernels honor both timing modes and their sampling
# distributions


def test_c10_kernel_timing_envelope_and_distributions():
    """Time-mode runs never return early and overshoot by at most one
    primitive; count-mode runs are exact; the FFT round-trips; PDF
    sampling matches its distribution."""
    rng = np.random.default_rng(20260816)
    cases = [
        ("MatMulSimple2D", [64, 64]),
        ("AXPY", [1 << 15]),
        ("FFT", [4096]),
    ]
    for name, size in cases:
        median = calibrate_primitive(name, size)
        for target in (0.001, 0.030):
            spec = KernelSpec(name=name, data_size=size, run_time=target)
            runner = KernelRunner(spec, rng)
            walls = []
            for _ in range(5):
                outcome = runner.run()
                assert outcome.wall_duration >= target
                assert outcome.inner_iterations >= 1
                walls.append(outcome.wall_duration)
            # min over attempts discards scheduler preemption, which only
            # ever adds time on a single-CPU host
            bound = target + 1.5 * median + 0.002
            assert min(walls) <= bound, (
                f"{name} run_time={target}: best {min(walls):.6f} > "
                f"{bound:.6f} (median primitive {median:.6f})"
            )

    for name, size in [("MatMulSimple2D", [48, 48]),
                       ("GenerateRandomNumber", [1 << 12])]:
        spec = KernelSpec(name=name, data_size=size, run_count=7)
        outcome = KernelRunner(spec, rng).run()
        assert outcome.inner_iterations == 7

    x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    back = ifft_radix2(fft_radix2(x))
    rel_err = np.max(np.abs(back - x)) / np.max(np.abs(x))
    assert rel_err <= 1e-9

    pdf = DiscretePdf(values=(0.001, 0.002, 0.005), probs=(0.2, 0.5, 0.3))
    draw_rng = np.random.default_rng(1234)
    draws = [pdf.sample(draw_rng) for _ in range(10_000)]
    observed = [draws.count(v) for v in pdf.values]
    expected = [p * len(draws) for p in pdf.probs]
    result = stats.chisquare(observed, expected)
    assert result.pvalue > 0.01, f"chi-square p={result.pvalue:.4f}"


# criterion 11: the same workload runs unchanged on the in-memory and
# filesystem backends


def _pattern2_cli(backend: str, out_root: Path) -> Path:
    args = [
        "pattern2",
        "--backend", backend,
        "--producers", "3",
        "--sim-time", "0.002",
        "--ai-time", "0.003",
        "--trainer-iters", "20",
        "--write-interval", "5",
        "--read-interval", "5",
        "--payload-bytes", "4096",
        "--sleep-mode",
        "--seed", "21",
        "--out", str(out_root),
    ]
    if backend == "memserver":
        args += ["--endpoints", "2"]
    assert main(args) == 0
    run_dirs = [p for p in out_root.iterdir() if p.is_dir()]
    assert len(run_dirs) == 1
    return run_dirs[0]


def test_c11_pattern2_backend_parity_end_to_end(tmp_path, capsys):
    """A full producers-plus-trainer run completes on memserver and on the
    filesystem backend with the identical event-count structure, inside
    three minutes."""
    started = time.monotonic()
    structures = {}
    for backend in ("memserver", "filesystem"):
        run_dir = _pattern2_cli(backend, tmp_path / backend)
        report = json.loads((run_dir / "launch_report.json").read_text())
        assert report["success"] is True
        counts: dict[tuple, int] = {}
        for event in _events_from(run_dir):
            pair = (event.component, event.kind)
            counts[pair] = counts.get(pair, 0) + 1
        structures[backend] = counts
    capsys.readouterr()
    assert structures["memserver"] == structures["filesystem"]
    # sanity: the structure itself is the deterministic one
    counts = structures["filesystem"]
    assert counts[("trainer", "ai_iter")] == 20
    assert counts[("trainer", "read")] == 3 * 2 * (20 // 5)
    for sim in ("sim0", "sim1", "sim2"):
        assert counts[(sim, "sim_iter")] == 25
        # init staging is logged under its own kind; snapshot writes plus
        # the init write together follow the schedule formula
        assert counts[(sim, "init")] == 1
        assert counts[(sim, "write")] + counts[(sim, "init")] == (
            expected_write_events(25, 5, 2)
        )
    elapsed = time.monotonic() - started
    assert elapsed <= 180.0, f"took {elapsed:.1f}s"
