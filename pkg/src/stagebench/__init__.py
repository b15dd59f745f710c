"""stagebench: benchmark in-transit data staging between simulation and
AI-training emulators across pluggable backends."""

from .datastore import DataStore, ServerInfo
from .errors import (
    KeyNotFoundError,
    NoEventsError,
    NotInitializedError,
    ServerStartupError,
    StageBenchError,
    StallError,
    TornPayloadError,
    TransportError,
    WorkflowValidationError,
)
from .kernels import DiscretePdf, KernelRunner, KernelSpec, run_kernel
from .metrics import EventRecord, EventRecorder, RunClock, aggregate
from .server import MemServer, ServerConfig, ServerManager
from .workflow import ComponentSpec, LaunchReport, WorkflowGraph, launch

__version__ = "0.1.0"

__all__ = [
    "DataStore",
    "ServerInfo",
    "StageBenchError",
    "TransportError",
    "KeyNotFoundError",
    "NotInitializedError",
    "ServerStartupError",
    "WorkflowValidationError",
    "StallError",
    "TornPayloadError",
    "NoEventsError",
    "DiscretePdf",
    "KernelSpec",
    "KernelRunner",
    "run_kernel",
    "EventRecord",
    "EventRecorder",
    "RunClock",
    "aggregate",
    "MemServer",
    "ServerConfig",
    "ServerManager",
    "ComponentSpec",
    "WorkflowGraph",
    "LaunchReport",
    "launch",
    "__version__",
]
