from .runner import (
    FAILED,
    FINISHED,
    PREPARING,
    RUNNING,
    TIMED_OUT,
    AdapterMissing,
    ExecutorError,
    MappingRunner,
    MissingDataset,
    ResourceSample,
    ResultsDirNotEmpty,
    RunHandle,
    RunResult,
    Workspace,
    read_profiling,
    sample_resources,
    summarize_series,
)
from .sandbox import (
    ContainerRuntimeSandbox,
    LocalProcessSandbox,
    Sandbox,
    SandboxGone,
    SandboxSpawnFailure,
)

__all__ = [
    "AdapterMissing",
    "ContainerRuntimeSandbox",
    "ExecutorError",
    "FAILED",
    "FINISHED",
    "LocalProcessSandbox",
    "MappingRunner",
    "MissingDataset",
    "PREPARING",
    "RUNNING",
    "ResourceSample",
    "ResultsDirNotEmpty",
    "RunHandle",
    "RunResult",
    "Sandbox",
    "SandboxGone",
    "SandboxSpawnFailure",
    "TIMED_OUT",
    "Workspace",
    "read_profiling",
    "sample_resources",
    "summarize_series",
]
