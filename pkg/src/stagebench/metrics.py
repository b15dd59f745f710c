"""Event recording and aggregation.

Components append one JSON object per line while running; aggregation
happens offline after the run, so recording stays cheap. Timestamps are
seconds since the shared run epoch; durations come from each process's
monotonic clock.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NoEventsError

EVENT_KINDS = ("sim_iter", "ai_iter", "read", "write", "poll", "init")
_TRANSFER_KINDS = frozenset(("read", "write"))
GIB = float(2**30)

CSV_HEADER = "component,kind,count,mean_s,std_s,total_bytes,mean_gibps,std_gibps"


class RunClock:
    """Maps this process's monotonic clock onto the shared run epoch."""

    def __init__(self, epoch: float) -> None:
        self.epoch = epoch
        self._wall0 = time.time()
        self._mono0 = time.perf_counter()

    def now(self) -> float:
        """Seconds since the run epoch."""
        return (self._wall0 - self.epoch) + (time.perf_counter() - self._mono0)


@dataclass
class EventRecord:
    component: str
    rank: int
    kind: str
    t_start: float
    duration: float
    bytes: int = 0
    key: str | None = None

    def __post_init__(self) -> None:
        if not self.component:
            raise ValueError("component must be non-empty")
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not (self.duration > 0):
            raise ValueError("duration must be > 0")
        if self.bytes < 0:
            raise ValueError("bytes must be >= 0")
        if self.kind in _TRANSFER_KINDS and self.bytes == 0:
            raise ValueError(f"{self.kind} event requires bytes > 0")

    def to_json(self) -> str:
        return json.dumps(
            {
                "component": self.component,
                "rank": self.rank,
                "kind": self.kind,
                "t_start": self.t_start,
                "duration": self.duration,
                "bytes": self.bytes,
                "key": self.key,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "EventRecord":
        return cls(
            component=data["component"],
            rank=int(data["rank"]),
            kind=data["kind"],
            t_start=float(data["t_start"]),
            duration=float(data["duration"]),
            bytes=int(data.get("bytes", 0)),
            key=data.get("key"),
        )

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def gibps(self) -> float:
        return self.bytes / self.duration / GIB


class EventRecorder:
    """Appends EventRecords to one JSON-lines file."""

    def __init__(self, path: str | os.PathLike, component: str, rank: int = 0) -> None:
        self.path = Path(path)
        self.component = component
        self.rank = rank
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self.count = 0

    def record(self, event: EventRecord) -> None:
        self._fh.write(event.to_json() + "\n")
        self.count += 1

    def emit(
        self,
        kind: str,
        t_start: float,
        duration: float,
        bytes: int = 0,
        key: str | None = None,
    ) -> None:
        self.record(
            EventRecord(
                component=self.component,
                rank=self.rank,
                kind=kind,
                t_start=t_start,
                duration=duration,
                bytes=bytes,
                key=key,
            )
        )

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self) -> "EventRecorder":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def iter_event_files(root: str | os.PathLike) -> list[Path]:
    """Event files under root (or root itself if it is a file), sorted."""
    p = Path(root)
    if p.is_file():
        return [p]
    return sorted(q for q in p.rglob("*.jsonl") if q.is_file())


def load_events(paths) -> tuple[list[EventRecord], int]:
    """Parse event files; malformed lines are counted, not fatal."""
    events: list[EventRecord] = []
    malformed = 0
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(EventRecord.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    malformed += 1
    return events, malformed


@dataclass
class SummaryRow:
    component: str
    kind: str
    count: int
    mean_s: float
    std_s: float
    total_bytes: int
    mean_gibps: float
    std_gibps: float


@dataclass
class Summary:
    rows: list[SummaryRow]
    n_events: int
    malformed_lines: int
    extra_rows: list[SummaryRow] = field(default_factory=list)


def _mean_std(samples: list[float]) -> tuple[float, float]:
    n = len(samples)
    mean = math.fsum(samples) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((s - mean) ** 2 for s in samples) / (n - 1)
    return mean, math.sqrt(var)


def aggregate(paths) -> Summary:
    """Pool events from files by (component, kind); see aggregate_records."""
    events, malformed = load_events(paths)
    return aggregate_records(events, malformed)


def aggregate_records(events: list[EventRecord], malformed: int = 0) -> Summary:
    """Pool events by (component, kind) and compute duration/throughput stats.

    Throughput statistics cover only the events that moved bytes.
    """
    if not events:
        raise NoEventsError("no parseable events found")
    groups: dict[tuple[str, str], list[EventRecord]] = {}
    for ev in events:
        groups.setdefault((ev.component, ev.kind), []).append(ev)
    rows = []
    for (component, kind) in sorted(groups):
        evs = groups[(component, kind)]
        mean_s, std_s = _mean_std([e.duration for e in evs])
        total_bytes = sum(e.bytes for e in evs)
        tp = [e.gibps() for e in evs if e.bytes > 0]
        mean_tp, std_tp = _mean_std(tp) if tp else (0.0, 0.0)
        rows.append(
            SummaryRow(
                component=component,
                kind=kind,
                count=len(evs),
                mean_s=mean_s,
                std_s=std_s,
                total_bytes=total_bytes,
                mean_gibps=mean_tp,
                std_gibps=std_tp,
            )
        )
    return Summary(rows=rows, n_events=len(events), malformed_lines=malformed)


def summary_to_csv(summary: Summary) -> str:
    """Render the mandated 8-column CSV; floats keep full repr precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for row in list(summary.rows) + list(summary.extra_rows):
        writer.writerow(
            [
                row.component,
                row.kind,
                row.count,
                repr(row.mean_s),
                repr(row.std_s),
                row.total_bytes,
                repr(row.mean_gibps),
                repr(row.std_gibps),
            ]
        )
    return buf.getvalue()


def exec_time_per_iteration(events: list[EventRecord], total_iters: int) -> float:
    """(last event end - first event start) / total_iters."""
    if total_iters < 1:
        raise ValueError("total_iters must be >= 1")
    if not events:
        raise NoEventsError("no events")
    first = min(e.t_start for e in events)
    last = max(e.t_end for e in events)
    return (last - first) / total_iters


@dataclass
class ThroughputPoint:
    backend: str
    payload_bytes: int
    direction: str
    mean_gibps: float
    std_gibps: float
    n_events: int


def throughput_table(
    events: list[EventRecord], backend: str
) -> list[ThroughputPoint]:
    """Per (payload size, direction) transfer throughput."""
    groups: dict[tuple[int, str], list[float]] = {}
    for ev in events:
        if ev.kind in _TRANSFER_KINDS and ev.bytes > 0:
            groups.setdefault((ev.bytes, ev.kind), []).append(ev.gibps())
    points = []
    for (nbytes, direction) in sorted(groups):
        tp = groups[(nbytes, direction)]
        mean, std = _mean_std(tp)
        points.append(
            ThroughputPoint(
                backend=backend,
                payload_bytes=nbytes,
                direction=direction,
                mean_gibps=mean,
                std_gibps=std,
                n_events=len(tp),
            )
        )
    return points


def throughput_to_csv(points: list[ThroughputPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["backend", "payload_bytes", "direction", "mean_gibps", "std_gibps", "n_events"]
    )
    for p in points:
        writer.writerow(
            [
                p.backend,
                p.payload_bytes,
                p.direction,
                repr(p.mean_gibps),
                repr(p.std_gibps),
                p.n_events,
            ]
        )
    return buf.getvalue()
