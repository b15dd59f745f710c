"""Workflow graph: component specs, dependency staging, process launch.

validate() turns the registered components into an ordered list of stages
(every stage's dependencies live in earlier stages); launch() runs the
stages, spawning all processes of a stage together and failing fast when
any process exits nonzero.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import WorkflowValidationError

DEFAULT_GRACE = 10.0


@dataclass
class ComponentSpec:
    """One launchable component. command entries may contain {rank}."""

    name: str
    command: list[str]
    placement: str = "local"
    dependencies: tuple[str, ...] = ()
    ranks: int = 1
    env: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("component name must be non-empty")
        if not self.command:
            raise ValueError(f"component {self.name!r} has an empty command")
        if self.placement not in ("local", "remote"):
            raise ValueError(f"placement must be local or remote, got {self.placement!r}")
        if self.ranks < 1:
            raise ValueError("ranks must be >= 1")
        self.dependencies = tuple(self.dependencies)
        if self.name in self.dependencies:
            raise ValueError(f"component {self.name!r} depends on itself")


@dataclass
class LauncherConfig:
    """How remote placements are wrapped and how failures are handled."""

    remote_template: str = "{command}"
    grace_period: float = DEFAULT_GRACE
    poll_interval: float = 0.02


@dataclass
class ProcessResult:
    component: str
    rank: int
    start_time: float
    end_time: float
    exit_code: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class LaunchReport:
    success: bool
    results: list[ProcessResult]
    makespan: float
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "makespan": self.makespan,
            "error": self.error,
            "processes": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


class WorkflowGraph:
    """Registry of ComponentSpecs plus the dependency relation."""

    def __init__(self) -> None:
        self.components: dict[str, ComponentSpec] = {}

    def register(self, spec: ComponentSpec) -> None:
        """Add a component. Dependency names are checked at validate()."""
        if spec.name in self.components:
            raise ValueError(f"duplicate component {spec.name!r}")
        self.components[spec.name] = spec

    def validate(self) -> list[list[str]]:
        """Stage the graph; raises WorkflowValidationError on bad graphs.

        Stage k holds every component whose dependencies are all in stages
        < k. Names inside a stage are sorted, so the order is deterministic.
        """
        unknown = sorted(
            dep
            for spec in self.components.values()
            for dep in spec.dependencies
            if dep not in self.components
        )
        if unknown:
            raise WorkflowValidationError(
                f"unknown dependencies: {', '.join(sorted(set(unknown)))}"
            )
        placed: set[str] = set()
        remaining = dict(self.components)
        stages: list[list[str]] = []
        while remaining:
            ready = sorted(
                name
                for name, spec in remaining.items()
                if all(dep in placed for dep in spec.dependencies)
            )
            if not ready:
                cycle = self._find_cycle(remaining)
                raise WorkflowValidationError(
                    "dependency cycle: " + " -> ".join(cycle)
                )
            stages.append(ready)
            placed.update(ready)
            for name in ready:
                del remaining[name]
        return stages

    def _find_cycle(self, remaining: dict[str, ComponentSpec]) -> list[str]:
        # Walk dependency edges until a node repeats; every node left in
        # `remaining` sits on or behind a cycle, so the walk terminates.
        start = sorted(remaining)[0]
        path = [start]
        seen = {start: 0}
        node = start
        while True:
            node = sorted(
                d for d in remaining[node].dependencies if d in remaining
            )[0]
            if node in seen:
                return path[seen[node]:] + [node]
            seen[node] = len(path)
            path.append(node)


def _terminate(procs, grace: float) -> None:
    for p in procs:
        if p.poll() is None:
            p.terminate()
    deadline = time.monotonic() + grace
    for p in procs:
        if p.poll() is None:
            try:
                p.wait(max(deadline - time.monotonic(), 0.01))
            except subprocess.TimeoutExpired:
                p.kill()
    for p in procs:
        p.wait()


def launch(
    graph: WorkflowGraph,
    launcher: LauncherConfig | None = None,
    log_dir: str | os.PathLike | None = None,
    extra_env: dict[str, str] | None = None,
) -> LaunchReport:
    """Run the graph stage by stage. Any nonzero exit aborts everything."""
    launcher = launcher or LauncherConfig()
    stages = graph.validate()
    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)

    results: list[ProcessResult] = []
    error: str | None = None
    log_handles = []

    def span() -> tuple[float, float]:
        if not results:
            return 0.0, 0.0
        return min(r.start_time for r in results), max(r.end_time for r in results)

    try:
        for stage in stages:
            running: list[tuple[ComponentSpec, int, subprocess.Popen, float]] = []
            spawn_failure = None
            for name in stage:
                spec = graph.components[name]
                for rank in range(spec.ranks):
                    cmd = [arg.replace("{rank}", str(rank)) for arg in spec.command]
                    if spec.placement == "remote":
                        line = launcher.remote_template.format(
                            command=shlex.join(cmd), ranks=spec.ranks, name=spec.name
                        )
                        cmd = shlex.split(line)
                    env = dict(os.environ)
                    if extra_env:
                        env.update(extra_env)
                    env.update(spec.env)
                    stdout = None
                    if log_dir is not None:
                        stdout = open(Path(log_dir) / f"{name}.r{rank}.log", "wb")
                        log_handles.append(stdout)
                    start = time.time()
                    try:
                        proc = subprocess.Popen(
                            cmd,
                            env=env,
                            stdout=stdout,
                            stderr=subprocess.STDOUT if stdout else None,
                        )
                    except OSError as exc:
                        spawn_failure = f"cannot spawn {name}.r{rank}: {exc}"
                        results.append(
                            ProcessResult(name, rank, start, time.time(), 127)
                        )
                        break
                    running.append((spec, rank, proc, start))
                if spawn_failure:
                    break

            if spawn_failure:
                _terminate([p for _, _, p, _ in running], launcher.grace_period)
                for spec, rank, proc, start in running:
                    results.append(
                        ProcessResult(
                            spec.name, rank, start, time.time(), proc.returncode
                        )
                    )
                error = spawn_failure
                break

            pending = list(running)
            failed = None
            while pending:
                still = []
                for spec, rank, proc, start in pending:
                    rc = proc.poll()
                    if rc is None:
                        still.append((spec, rank, proc, start))
                        continue
                    results.append(
                        ProcessResult(spec.name, rank, start, time.time(), rc)
                    )
                    if rc != 0 and failed is None:
                        failed = f"{spec.name}.r{rank} exited with code {rc}"
                pending = still
                if failed and pending:
                    _terminate([p for _, _, p, _ in pending], launcher.grace_period)
                    for spec, rank, proc, start in pending:
                        results.append(
                            ProcessResult(
                                spec.name, rank, start, time.time(), proc.returncode
                            )
                        )
                    pending = []
                elif pending:
                    time.sleep(launcher.poll_interval)
            if failed:
                error = failed
                break
    finally:
        for fh in log_handles:
            try:
                fh.close()
            except OSError:
                pass

    t0, t1 = span()
    return LaunchReport(
        success=error is None and bool(results),
        results=results,
        makespan=t1 - t0,
        error=error,
    )
