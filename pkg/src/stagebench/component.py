"""Child-process entry point: run one emulated component.

Invoked by the workflow launcher as
`python -m stagebench.component --config C --server-info S --rank R
--events-out E`. The process connects to the staging backend, waits for the
shared run epoch key, runs its emulator, writes a summary JSON next to the
event log, and prints the summary to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .components import (
    EPOCH_KEY,
    SimComponentConfig,
    load_component_config,
    run_simulation,
    run_trainer,
)
from .datastore import DataStore, ServerInfo
from .errors import StageBenchError
from .metrics import EventRecorder, RunClock

EPOCH_WAIT = 60.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagebench-component", description=__doc__
    )
    parser.add_argument("--config", required=True, help="component config JSON")
    parser.add_argument("--server-info", required=True, help="ServerInfo JSON")
    parser.add_argument("--rank", type=int, default=0)
    parser.add_argument("--events-out", required=True, help="event log path (JSON lines)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    wall_start = time.time()
    t0 = time.perf_counter()

    config = load_component_config(json.loads(Path(args.config).read_text()))
    info = ServerInfo.load(args.server_info)
    events_out = Path(args.events_out)
    store = DataStore(info, client_id=f"{config.name}.r{args.rank}")

    if not store.poll_staged_data([EPOCH_KEY], timeout=EPOCH_WAIT):
        print(
            f"{config.name}.r{args.rank}: no {EPOCH_KEY} key after "
            f"{EPOCH_WAIT:.0f}s; was the run orchestrated?",
            file=sys.stderr,
        )
        return 1
    epoch = float(store.stage_read(EPOCH_KEY).decode("ascii"))
    startup = time.perf_counter() - t0
    clock = RunClock(epoch)

    scratch = events_out.parent / "scratch" / f"{config.name}.r{args.rank}"
    try:
        with EventRecorder(events_out, config.name, args.rank) as recorder:
            if isinstance(config, SimComponentConfig):
                summary = run_simulation(
                    config, store, recorder, clock, args.rank, scratch
                )
            else:
                summary = run_trainer(
                    config,
                    store,
                    recorder,
                    clock,
                    args.rank,
                    scratch,
                    init_span=(wall_start - epoch, startup),
                )
    except StageBenchError as exc:
        print(f"{config.name}.r{args.rank}: {exc}", file=sys.stderr)
        return 1
    finally:
        store.close()

    out = json.dumps(summary.to_dict(), indent=2)
    summary_path = events_out.with_name(events_out.stem + ".summary.json")
    summary_path.write_text(out + "\n")
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
