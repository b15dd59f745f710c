"""Simulation and trainer emulators.

The simulation runs compute iterations and stages a snapshot (a fixed set
of keys) every write_interval iterations, checking a stop key between
blocks so a consumer can steer it. The trainer runs its own compute
iterations and consumes producer snapshots every read_interval iterations,
either non-blocking (catch up on whatever is staged) or blocking (wait for
every producer's next snapshot). All datastore traffic and compute phases
are recorded as events.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .datastore import DataStore
from .errors import StallError, TornPayloadError
from .kernels import KernelRunner, KernelSpec
from .metrics import EventRecorder, RunClock
from .payload import make_payload, verify_payload

EPOCH_KEY = "run.epoch"
DEFAULT_KEYS_PER_SNAPSHOT = 2
DEFAULT_STOP_CHECK_INTERVAL = 10
DEFAULT_STALL_TIMEOUT = 300.0


def init_key(component: str, rank: int = 0) -> str:
    return f"{component}.init" + (f".r{rank}" if rank else "")


def snapshot_key(producer: str, step: int, j: int, rank: int = 0) -> str:
    return f"{producer}.step{step}.k{j}" + (f".r{rank}" if rank else "")


def stop_key_for(trainer: str) -> str:
    return f"{trainer}.stop"


def snapshot_keys(
    producer: str, step: int, keys_per_snapshot: int, ranks: int = 1
) -> list[str]:
    return [
        snapshot_key(producer, step, j, r)
        for r in range(ranks)
        for j in range(keys_per_snapshot)
    ]


def expected_write_events(
    steps: int, write_interval: int, keys_per_snapshot: int, emit_init: bool = True
) -> int:
    """Datastore writes a full simulation run performs (init + snapshots)."""
    if steps < 0 or write_interval < 1 or keys_per_snapshot < 1:
        raise ValueError("bad write schedule")
    return (1 if emit_init else 0) + keys_per_snapshot * (steps // write_interval)


def _payload_seed(key: str, seed: int | None) -> int:
    return zlib.crc32(key.encode("utf-8")) ^ (seed or 0)


@dataclass
class SimComponentConfig:
    """Simulation emulator parameters."""

    name: str
    kernels: list[KernelSpec]
    steps: int
    write_interval: int
    keys_per_snapshot: int = DEFAULT_KEYS_PER_SNAPSHOT
    payload_bytes: int = 1 << 20
    stop_check_interval: int = DEFAULT_STOP_CHECK_INTERVAL
    emit_init_write: bool = True
    stop_key: str | None = None
    seed: int | None = None
    snapshot_delays: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("name must be non-empty")
        if not self.kernels:
            raise ValueError("simulation needs at least one kernel")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.write_interval < 1:
            raise ValueError("write_interval must be >= 1")
        if self.keys_per_snapshot < 1:
            raise ValueError("keys_per_snapshot must be >= 1")
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")
        if self.stop_check_interval < 1:
            raise ValueError("stop_check_interval must be >= 1")
        self.snapshot_delays = {int(k): float(v) for k, v in self.snapshot_delays.items()}

    def to_dict(self) -> dict:
        return {
            "type": "simulation",
            "name": self.name,
            "kernels": [k.to_dict() for k in self.kernels],
            "steps": self.steps,
            "write_interval": self.write_interval,
            "keys_per_snapshot": self.keys_per_snapshot,
            "payload_bytes": self.payload_bytes,
            "stop_check_interval": self.stop_check_interval,
            "emit_init_write": self.emit_init_write,
            "stop_key": self.stop_key,
            "seed": self.seed,
            "snapshot_delays": {str(k): v for k, v in self.snapshot_delays.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimComponentConfig":
        return cls(
            name=data["name"],
            kernels=[KernelSpec.from_dict(k) for k in data["kernels"]],
            steps=int(data["steps"]),
            write_interval=int(data["write_interval"]),
            keys_per_snapshot=int(data.get("keys_per_snapshot", DEFAULT_KEYS_PER_SNAPSHOT)),
            payload_bytes=int(data.get("payload_bytes", 1 << 20)),
            stop_check_interval=int(
                data.get("stop_check_interval", DEFAULT_STOP_CHECK_INTERVAL)
            ),
            emit_init_write=bool(data.get("emit_init_write", True)),
            stop_key=data.get("stop_key"),
            seed=data.get("seed"),
            snapshot_delays=data.get("snapshot_delays", {}),
        )


@dataclass
class TrainerComponentConfig:
    """Trainer emulator parameters.

    iter_time builds a default compute kernel; pass kernel to override.
    producer_interval mirrors the producers' write_interval so the trainer
    can derive the snapshot keys it expects.
    """

    name: str
    total_iters: int
    read_interval: int
    producers: list[str] = field(default_factory=list)
    iter_time: float | None = None
    kernel: KernelSpec | None = None
    blocking: bool = False
    producer_interval: int = 100
    keys_per_snapshot: int = DEFAULT_KEYS_PER_SNAPSHOT
    producer_ranks: int = 1
    stall_timeout: float = DEFAULT_STALL_TIMEOUT
    verify_checksums: bool = True
    stage_stop: bool = True
    busy: bool = True
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("name must be non-empty")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.read_interval < 1:
            raise ValueError("read_interval must be >= 1")
        if (self.iter_time is None) == (self.kernel is None):
            raise ValueError("exactly one of iter_time or kernel must be set")
        if self.iter_time is not None and self.iter_time < 0:
            raise ValueError("iter_time must be >= 0")
        if self.producer_interval < 1:
            raise ValueError("producer_interval must be >= 1")
        if self.keys_per_snapshot < 1:
            raise ValueError("keys_per_snapshot must be >= 1")
        if self.producer_ranks < 1:
            raise ValueError("producer_ranks must be >= 1")
        if self.stall_timeout <= 0:
            raise ValueError("stall_timeout must be > 0")

    def compute_kernel(self) -> KernelSpec:
        if self.kernel is not None:
            return self.kernel
        return KernelSpec(
            name="MatMulSimple2D",
            data_size=[48, 48],
            run_time=self.iter_time,
            busy=self.busy,
        )

    def to_dict(self) -> dict:
        return {
            "type": "trainer",
            "name": self.name,
            "total_iters": self.total_iters,
            "read_interval": self.read_interval,
            "producers": list(self.producers),
            "iter_time": self.iter_time,
            "kernel": self.kernel.to_dict() if self.kernel else None,
            "blocking": self.blocking,
            "producer_interval": self.producer_interval,
            "keys_per_snapshot": self.keys_per_snapshot,
            "producer_ranks": self.producer_ranks,
            "stall_timeout": self.stall_timeout,
            "verify_checksums": self.verify_checksums,
            "stage_stop": self.stage_stop,
            "busy": self.busy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainerComponentConfig":
        return cls(
            name=data["name"],
            total_iters=int(data["total_iters"]),
            read_interval=int(data["read_interval"]),
            producers=list(data.get("producers", ())),
            iter_time=data.get("iter_time"),
            kernel=KernelSpec.from_dict(data["kernel"]) if data.get("kernel") else None,
            blocking=bool(data.get("blocking", False)),
            producer_interval=int(data.get("producer_interval", 100)),
            keys_per_snapshot=int(data.get("keys_per_snapshot", DEFAULT_KEYS_PER_SNAPSHOT)),
            producer_ranks=int(data.get("producer_ranks", 1)),
            stall_timeout=float(data.get("stall_timeout", DEFAULT_STALL_TIMEOUT)),
            verify_checksums=bool(data.get("verify_checksums", True)),
            stage_stop=bool(data.get("stage_stop", True)),
            busy=bool(data.get("busy", True)),
            seed=data.get("seed"),
        )


def load_component_config(data: dict):
    kind = data.get("type")
    if kind == "simulation":
        return SimComponentConfig.from_dict(data)
    if kind == "trainer":
        return TrainerComponentConfig.from_dict(data)
    raise ValueError(f"unknown component type {kind!r}")


@dataclass
class SimSummary:
    name: str
    rank: int
    iterations_run: int
    writes_done: int
    snapshots_written: int
    stopped_early: bool

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class TrainerSummary:
    name: str
    rank: int
    iterations_run: int
    reads_done: int
    snapshots_consumed: int
    bytes_read: int
    stop_staged: bool

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def run_simulation(
    config: SimComponentConfig,
    store: DataStore,
    recorder: EventRecorder,
    clock: RunClock,
    rank: int = 0,
    scratch_dir=None,
) -> SimSummary:
    seed = None if config.seed is None else config.seed + rank
    rng = np.random.default_rng(seed)
    runners = [KernelRunner(k, rng, scratch_dir, rank) for k in config.kernels]
    writes_done = 0
    iterations = 0
    snapshots = 0
    stopped = False

    if config.emit_init_write:
        key = init_key(config.name, rank)
        meta = json.dumps(
            {
                "component": config.name,
                "rank": rank,
                "steps": config.steps,
                "write_interval": config.write_interval,
                "keys_per_snapshot": config.keys_per_snapshot,
            }
        ).encode("utf-8")
        t_start = clock.now()
        t0 = time.perf_counter()
        store.stage_write(key, meta)
        recorder.emit("init", t_start, time.perf_counter() - t0, bytes=len(meta), key=key)
        writes_done += 1

    for it in range(1, config.steps + 1):
        t_start = clock.now()
        t0 = time.perf_counter()
        for runner in runners:
            runner.run()
        recorder.emit("sim_iter", t_start, time.perf_counter() - t0)
        iterations = it

        if it % config.write_interval == 0:
            snapshots += 1
            delay = config.snapshot_delays.get(snapshots, 0.0)
            if delay > 0:
                time.sleep(delay)
            for j in range(config.keys_per_snapshot):
                key = snapshot_key(config.name, it, j, rank)
                data = make_payload(config.payload_bytes, _payload_seed(key, config.seed))
                t_start = clock.now()
                t0 = time.perf_counter()
                store.stage_write(key, data)
                recorder.emit(
                    "write", t_start, time.perf_counter() - t0, bytes=len(data), key=key
                )
                writes_done += 1

        if config.stop_key and it % config.stop_check_interval == 0:
            if store.poll_staged_data([config.stop_key], timeout=0.0):
                stopped = True
                break

    return SimSummary(
        name=config.name,
        rank=rank,
        iterations_run=iterations,
        writes_done=writes_done,
        snapshots_written=snapshots,
        stopped_early=stopped,
    )


def _read_snapshot(
    config: TrainerComponentConfig,
    store: DataStore,
    recorder: EventRecorder,
    clock: RunClock,
    producer: str,
    step: int,
) -> tuple[int, int]:
    """Read every key of one staged snapshot; returns (reads, bytes)."""
    reads = 0
    nbytes = 0
    for key in snapshot_keys(
        producer, step, config.keys_per_snapshot, config.producer_ranks
    ):
        t_start = clock.now()
        t0 = time.perf_counter()
        data = store.stage_read(key)
        recorder.emit(
            "read", t_start, time.perf_counter() - t0, bytes=len(data), key=key
        )
        if config.verify_checksums and not verify_payload(data):
            raise TornPayloadError(f"checksum mismatch on {key}")
        reads += 1
        nbytes += len(data)
    return reads, nbytes


def run_trainer(
    config: TrainerComponentConfig,
    store: DataStore,
    recorder: EventRecorder,
    clock: RunClock,
    rank: int = 0,
    scratch_dir=None,
    init_span: tuple[float, float] | None = None,
) -> TrainerSummary:
    seed = None if config.seed is None else config.seed + rank
    rng = np.random.default_rng(seed)
    runner = KernelRunner(config.compute_kernel(), rng, scratch_dir, rank)
    if init_span is not None:
        recorder.emit("init", init_span[0], init_span[1])

    last_step = {p: 0 for p in config.producers}
    interval = config.producer_interval
    reads_done = 0
    snapshots_consumed = 0
    bytes_read = 0
    iterations = 0

    for it in range(1, config.total_iters + 1):
        t_start = clock.now()
        t0 = time.perf_counter()
        runner.run()
        recorder.emit("ai_iter", t_start, time.perf_counter() - t0)
        iterations = it

        if it % config.read_interval != 0 or not config.producers:
            continue

        if config.blocking:
            targets = {p: last_step[p] + interval for p in config.producers}
            wanted = [
                key
                for p in config.producers
                for key in snapshot_keys(
                    p, targets[p], config.keys_per_snapshot, config.producer_ranks
                )
            ]
            t_start = clock.now()
            t0 = time.perf_counter()
            ok = store.poll_staged_data(wanted, timeout=config.stall_timeout)
            recorder.emit("poll", t_start, time.perf_counter() - t0)
            if not ok:
                missing = sorted(
                    p
                    for p in config.producers
                    if not store.poll_staged_data(
                        snapshot_keys(
                            p, targets[p], config.keys_per_snapshot, config.producer_ranks
                        ),
                        timeout=0.0,
                    )
                )
                raise StallError(
                    f"{config.name} waited {config.stall_timeout:.0f}s at iteration "
                    f"{it} for producers: {', '.join(missing)}"
                )
            for p in config.producers:
                r, b = _read_snapshot(config, store, recorder, clock, p, targets[p])
                reads_done += r
                bytes_read += b
                snapshots_consumed += 1
                last_step[p] = targets[p]
        else:
            for p in config.producers:
                while True:
                    step = last_step[p] + interval
                    wanted = snapshot_keys(
                        p, step, config.keys_per_snapshot, config.producer_ranks
                    )
                    t_start = clock.now()
                    t0 = time.perf_counter()
                    present = store.poll_staged_data(wanted, timeout=0.0)
                    recorder.emit("poll", t_start, time.perf_counter() - t0)
                    if not present:
                        break
                    r, b = _read_snapshot(config, store, recorder, clock, p, step)
                    reads_done += r
                    bytes_read += b
                    snapshots_consumed += 1
                    last_step[p] = step

    stop_staged = False
    if config.stage_stop:
        key = stop_key_for(config.name)
        data = make_payload(16, _payload_seed(key, config.seed))
        t_start = clock.now()
        t0 = time.perf_counter()
        store.stage_write(key, data)
        recorder.emit(
            "write", t_start, time.perf_counter() - t0, bytes=len(data), key=key
        )
        stop_staged = True

    return TrainerSummary(
        name=config.name,
        rank=rank,
        iterations_run=iterations,
        reads_done=reads_done,
        snapshots_consumed=snapshots_consumed,
        bytes_read=bytes_read,
        stop_staged=stop_staged,
    )
