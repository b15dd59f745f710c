"""Canonical workflow patterns.

Pattern 1: one simulation and one trainer, fully decoupled; the trainer
reads whatever snapshots are staged and steers the simulation to stop when
training finishes. Pattern 2: several producers feeding one blocking
trainer in lockstep.

Builders write the component configs into a run directory and return a
WorkflowGraph whose commands start `python -m stagebench.component`.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from .components import (
    SimComponentConfig,
    TrainerComponentConfig,
    stop_key_for,
)
from .datastore import ServerInfo
from .kernels import KernelSpec
from .workflow import ComponentSpec, WorkflowGraph

# Reference-scale parameters and their desk-scale counterparts (about a
# tenth of the reference workload, sized for a laptop run under a minute).
REF_SIM_TIME = 0.03147
REF_AI_TIME = 0.061
REF_SIM_STEPS = 10507
REF_TRAINER_ITERS = 5000
REF_PAYLOAD_BYTES = 1258291

DESK_SIM_TIME = 0.003
DESK_AI_TIME = 0.006
DESK_SIM_STEPS = 5000
DESK_TRAINER_ITERS = 500
DESK_PAYLOAD_BYTES = 1258291

PATTERN1_WRITE_INTERVAL = 100
PATTERN1_READ_INTERVAL = 10
PATTERN2_WRITE_INTERVAL = 10
PATTERN2_READ_INTERVAL = 10
DESK_PATTERN2_ITERS = 200


def _sim_kernel(run_time: float, busy: bool) -> KernelSpec:
    return KernelSpec(
        name="MatMulSimple2D", data_size=[64, 64], run_time=run_time, busy=busy
    )


def pattern1_configs(
    sim_name: str = "sim",
    trainer_name: str = "trainer",
    sim_time: float = DESK_SIM_TIME,
    ai_time: float = DESK_AI_TIME,
    sim_steps: int = DESK_SIM_STEPS,
    trainer_iters: int = DESK_TRAINER_ITERS,
    write_interval: int = PATTERN1_WRITE_INTERVAL,
    read_interval: int = PATTERN1_READ_INTERVAL,
    payload_bytes: int = DESK_PAYLOAD_BYTES,
    keys_per_snapshot: int = 2,
    stop_check_interval: int = 10,
    steer: bool = True,
    busy: bool = True,
    seed: int | None = None,
    reference_scale: bool = False,
) -> tuple[SimComponentConfig, TrainerComponentConfig]:
    if reference_scale:
        sim_time = REF_SIM_TIME
        ai_time = REF_AI_TIME
        sim_steps = REF_SIM_STEPS
        trainer_iters = REF_TRAINER_ITERS
        payload_bytes = REF_PAYLOAD_BYTES
    sim = SimComponentConfig(
        name=sim_name,
        kernels=[_sim_kernel(sim_time, busy)],
        steps=sim_steps,
        write_interval=write_interval,
        keys_per_snapshot=keys_per_snapshot,
        payload_bytes=payload_bytes,
        stop_check_interval=stop_check_interval,
        stop_key=stop_key_for(trainer_name) if steer else None,
        seed=seed,
    )
    trainer = TrainerComponentConfig(
        name=trainer_name,
        total_iters=trainer_iters,
        read_interval=read_interval,
        producers=[sim_name],
        iter_time=ai_time,
        blocking=False,
        producer_interval=write_interval,
        keys_per_snapshot=keys_per_snapshot,
        busy=busy,
        seed=seed,
    )
    return sim, trainer


def pattern2_supply_steps(
    trainer_iters: int, read_interval: int, write_interval: int
) -> int:
    """Producer steps that cover trainer demand with one spare snapshot."""
    return (trainer_iters // read_interval) * write_interval + write_interval


def pattern2_configs(
    n_producers: int = 4,
    trainer_name: str = "trainer",
    sim_time: float = DESK_AI_TIME,
    ai_time: float = DESK_AI_TIME,
    trainer_iters: int = DESK_PATTERN2_ITERS,
    write_interval: int = PATTERN2_WRITE_INTERVAL,
    read_interval: int = PATTERN2_READ_INTERVAL,
    payload_bytes: int = DESK_PAYLOAD_BYTES,
    keys_per_snapshot: int = 2,
    stall_timeout: float = 300.0,
    busy: bool = True,
    seed: int | None = None,
    reference_scale: bool = False,
) -> tuple[list[SimComponentConfig], TrainerComponentConfig]:
    if reference_scale:
        sim_time = REF_AI_TIME
        ai_time = REF_AI_TIME
        trainer_iters = REF_TRAINER_ITERS
        payload_bytes = REF_PAYLOAD_BYTES
    if n_producers < 1:
        raise ValueError("pattern 2 needs at least one producer")
    steps = pattern2_supply_steps(trainer_iters, read_interval, write_interval)
    sims = [
        SimComponentConfig(
            name=f"sim{i}",
            kernels=[_sim_kernel(sim_time, busy)],
            steps=steps,
            write_interval=write_interval,
            keys_per_snapshot=keys_per_snapshot,
            payload_bytes=payload_bytes,
            seed=seed,
        )
        for i in range(n_producers)
    ]
    trainer = TrainerComponentConfig(
        name=trainer_name,
        total_iters=trainer_iters,
        read_interval=read_interval,
        producers=[s.name for s in sims],
        iter_time=ai_time,
        blocking=True,
        producer_interval=write_interval,
        keys_per_snapshot=keys_per_snapshot,
        stall_timeout=stall_timeout,
        busy=busy,
        seed=seed,
    )
    return sims, trainer


def component_command(
    config_path: Path, server_info_path: Path, events_dir: Path, name: str
) -> list[str]:
    # {rank} placeholders are substituted per process by the launcher.
    return [
        sys.executable,
        "-m",
        "stagebench.component",
        "--config",
        str(config_path),
        "--server-info",
        str(server_info_path),
        "--rank",
        "{rank}",
        "--events-out",
        str(events_dir / (name + ".r{rank}.jsonl")),
    ]


def _write_configs(
    run_dir: Path, server_info: ServerInfo, configs: list
) -> tuple[Path, list[Path], Path]:
    run_dir = Path(run_dir)
    events_dir = run_dir / "events"
    events_dir.mkdir(parents=True, exist_ok=True)
    info_path = run_dir / "server_info.json"
    server_info.save(info_path)
    config_paths = []
    for cfg in configs:
        path = run_dir / f"{cfg.name}.config.json"
        path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
        config_paths.append(path)
    return info_path, config_paths, events_dir


def build_pattern1(
    sim_cfg: SimComponentConfig,
    trainer_cfg: TrainerComponentConfig,
    server_info: ServerInfo,
    run_dir: Path,
    sim_ranks: int = 1,
    trainer_ranks: int = 1,
) -> WorkflowGraph:
    """Both components in one stage, no dependency edges."""
    info_path, (sim_path, trainer_path), events_dir = _write_configs(
        Path(run_dir), server_info, [sim_cfg, trainer_cfg]
    )
    graph = WorkflowGraph()
    graph.register(
        ComponentSpec(
            name=sim_cfg.name,
            command=component_command(sim_path, info_path, events_dir, sim_cfg.name),
            ranks=sim_ranks,
        )
    )
    graph.register(
        ComponentSpec(
            name=trainer_cfg.name,
            command=component_command(
                trainer_path, info_path, events_dir, trainer_cfg.name
            ),
            ranks=trainer_ranks,
        )
    )
    return graph


def build_pattern2(
    sim_cfgs: list[SimComponentConfig],
    trainer_cfg: TrainerComponentConfig,
    server_info: ServerInfo,
    run_dir: Path,
) -> WorkflowGraph:
    """N producers plus one blocking trainer, all in one stage."""
    if sorted(trainer_cfg.producers) != sorted(c.name for c in sim_cfgs):
        raise ValueError("trainer producers must match the sim configs")
    info_path, config_paths, events_dir = _write_configs(
        Path(run_dir), server_info, list(sim_cfgs) + [trainer_cfg]
    )
    graph = WorkflowGraph()
    for cfg, path in zip(list(sim_cfgs) + [trainer_cfg], config_paths):
        graph.register(
            ComponentSpec(
                name=cfg.name,
                command=component_command(path, info_path, events_dir, cfg.name),
            )
        )
    return graph
