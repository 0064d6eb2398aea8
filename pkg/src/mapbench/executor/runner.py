"""Mapping-run execution: workspace preparation, launch, profiling, collection.

One runner owns the campaign layout and the adapter registry.  Each run gets
a workspace with the (possibly derived) dataset mounted read-only and an
empty read-write results directory; the adapter signals completion by
writing the empty sentinel file "finished" after its trajectory.
"""

from __future__ import annotations

import csv
import json
import os
import shutil
import sys
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..config import Catalog, MappingConfiguration, render_unified_config
from ..dataprep import PrepCache, PrepParams, load_log
from ..layout import (
    DataLayout,
    FAILURE_MARKER_FILENAME,
    GROUND_TRUTH_FILENAME,
    PROFILING_FILENAME,
    SENTINEL_FILENAME,
    TRAJ_FILENAME,
)
from ..synthetic import CAMERA_TOPIC
from ..trajeval import TrajectoryError, parse_trajectory
from .sandbox import LocalProcessSandbox, Sandbox, SandboxGone, SandboxSpawnFailure

PREPARING = "preparing"
RUNNING = "running"
FINISHED = "finished"
FAILED = "failed"
TIMED_OUT = "timed_out"

_STATE_ORDER = [PREPARING, RUNNING, FINISHED, FAILED, TIMED_OUT]
_TERMINAL = {FINISHED, FAILED, TIMED_OUT}


class ExecutorError(Exception):
    pass


class MissingDataset(ExecutorError):
    pass


class ResultsDirNotEmpty(ExecutorError):
    pass


class AdapterMissing(ExecutorError):
    pass


@dataclass(frozen=True)
class ResourceSample:
    t: float      # seconds since launch
    cpu: float    # cores, summed over the process tree
    ram: float    # resident MB


@dataclass(frozen=True)
class Workspace:
    run_id: str
    dataset_mount: Path
    results_mount: Path
    config_path: Path
    config: MappingConfiguration
    playback_duration: float


@dataclass(frozen=True)
class RunResult:
    run_id: str
    config_id: str
    status: str
    reason: str | None
    traj_path: Path | None
    profiling_path: Path | None
    map_path: Path | None
    cpu_mean: float
    cpu_max: float
    ram_max: float
    started_at: float
    finished_at: float
    time_scale: float
    exit_code: int | None


class RunHandle:
    """Live handle on one sandboxed run; state transitions are monotone."""

    def __init__(self, run_id: str, workspace: Workspace, sandbox: Sandbox,
                 timeout: float, profiling_path: Path):
        self.run_id = run_id
        self.workspace = workspace
        self.sandbox = sandbox
        self.timeout = timeout
        self.started_at = time.time()
        self.started_mono = time.monotonic()
        self.state = PREPARING
        self.samples: list[ResourceSample] = []
        self.profiling_path = profiling_path
        self._stop = threading.Event()
        self._sampler: threading.Thread | None = None
        self._profiling_fh = open(profiling_path, "w", newline="")
        self._writer = csv.writer(self._profiling_fh)
        self._writer.writerow(["t", "cpu_cores", "ram_mb"])
        self._profiling_fh.flush()

    def advance(self, new_state: str) -> None:
        if _STATE_ORDER.index(new_state) < _STATE_ORDER.index(self.state):
            raise ExecutorError(f"illegal transition {self.state} -> {new_state}")
        if self.state in _TERMINAL and new_state != self.state:
            raise ExecutorError(f"run already terminal in state {self.state}")
        self.state = new_state

    def close_profiling(self) -> None:
        if not self._profiling_fh.closed:
            self._profiling_fh.close()


def sample_resources(handle: RunHandle, period: float = 0.5) -> list[ResourceSample]:
    """Wait one period, take one tree-wide sample, flush it to profiling.csv."""
    if handle.state != RUNNING:
        raise SandboxGone(f"run is {handle.state}, not running")
    handle._stop.wait(period)
    if handle._stop.is_set():
        raise SandboxGone("sampling stopped")
    cpu, ram = handle.sandbox.sample()
    sample = ResourceSample(t=time.monotonic() - handle.started_mono, cpu=cpu, ram=ram)
    handle.samples.append(sample)
    # full precision: statistics recomputed from the file must match the
    # in-memory series exactly
    handle._writer.writerow([f"{sample.t:.17g}", f"{cpu:.17g}", f"{ram:.17g}"])
    handle._profiling_fh.flush()
    return handle.samples


def summarize_series(samples: list[ResourceSample]) -> tuple[float, float, float]:
    """(cpu_mean, cpu_max, ram_max) over a sample series; zeros when empty."""
    if not samples:
        return 0.0, 0.0, 0.0
    cpus = [s.cpu for s in samples]
    rams = [s.ram for s in samples]
    return sum(cpus) / len(cpus), max(cpus), max(rams)


def read_profiling(path: Path) -> list[ResourceSample]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ResourceSample(float(row["t"]), float(row["cpu_cores"]),
                                      float(row["ram_mb"])))
    return out


class MappingRunner:
    """Executes mapping configurations in sandboxed workers."""

    def __init__(
        self,
        layout: DataLayout,
        catalog: Catalog,
        prep_cache: PrepCache | None = None,
        time_scale: float = 1.0,
        profile_period: float = 0.5,
        default_timeout: float | None = None,
    ) -> None:
        self.layout = layout
        self.catalog = catalog
        self.prep_cache = prep_cache or PrepCache(layout.prepared_dir)
        self.time_scale = time_scale
        self.profile_period = profile_period
        self.default_timeout = default_timeout
        self._adapters: dict[str, list[str]] = {}

    def register_adapter(self, algorithm_id: str, argv: list[str]) -> None:
        self._adapters[algorithm_id] = list(argv)

    def register_mock_adapters(self) -> None:
        argv = [sys.executable, "-m", "mapbench.executor.mock_adapter"]
        for algorithm_id in self.catalog.algorithms:
            self.register_adapter(algorithm_id, argv)

    # -- workspace -----------------------------------------------------------

    def _prep_params(self, config: MappingConfiguration) -> PrepParams:
        dataset = self.catalog.datasets[config.dataset_id]
        rate = config.dataset_params.get("frame_rate")
        factor = config.dataset_params.get("resolution_factor")
        target_rate = None
        if rate is not None and float(rate) < dataset.native_rate:
            target_rate = float(rate)
        resolution_factor = None
        if factor is not None and float(factor) != 1.0:
            resolution_factor = float(factor)
        return PrepParams(
            target_rate=target_rate,
            resolution_factor=resolution_factor,
            topics=frozenset({CAMERA_TOPIC}),
        )

    def prepare_workspace(self, config: MappingConfiguration, run_id: str | None = None) -> Workspace:
        run_id = run_id or uuid.uuid4().hex[:12]
        dataset = self.catalog.datasets.get(config.dataset_id)
        if dataset is None:
            raise MissingDataset(f"unknown dataset {config.dataset_id!r}")
        source_dir = self.layout.sequence_dir(config.dataset_id, config.sequence)
        if not (source_dir / "index.csv").exists():
            raise MissingDataset(f"no sequence data at {source_dir}")

        params = self._prep_params(config)
        if params.is_identity():
            dataset_mount = source_dir
        else:
            key, _ = self.prep_cache.get_or_prepare(
                config.dataset_id,
                config.sequence,
                params,
                dataset.native_rate,
                lambda: load_log(source_dir),
            )
            dataset_mount = self.layout.prepared_variant_dir(key)
            gt_copy = dataset_mount / GROUND_TRUTH_FILENAME
            if not gt_copy.exists():
                shutil.copyfile(
                    self.layout.ground_truth_path(config.dataset_id, config.sequence),
                    gt_copy,
                )

        results = self.layout.run_results_dir(run_id)
        if results.exists() and any(results.iterdir()):
            raise ResultsDirNotEmpty(str(results))
        results.mkdir(parents=True, exist_ok=True)

        config_path = self.layout.run_config_path(run_id)
        config_path.write_text(render_unified_config(config, self.catalog))

        log = load_log(dataset_mount)
        return Workspace(
            run_id=run_id,
            dataset_mount=dataset_mount,
            results_mount=results,
            config_path=config_path,
            config=config,
            playback_duration=log.duration(),
        )

    # -- launch / monitor ----------------------------------------------------

    def _timeout_for(self, workspace: Workspace) -> float:
        if self.default_timeout is not None:
            return self.default_timeout
        # three times the (scaled) dataset wall-clock duration, plus startup slack
        return 3.0 * workspace.playback_duration * self.time_scale + 10.0

    def launch(
        self,
        workspace: Workspace,
        timeout: float | None = None,
        adapter_argv: list[str] | None = None,
    ) -> RunHandle:
        argv = adapter_argv or self._adapters.get(workspace.config.algorithm_id)
        if argv is None:
            raise AdapterMissing(
                f"no adapter registered for {workspace.config.algorithm_id!r}"
            )
        env = dict(os.environ)
        env.update(
            {
                "MAPBENCH_DATASET_DIR": str(workspace.dataset_mount),
                "MAPBENCH_RESULTS_DIR": str(workspace.results_mount),
                "MAPBENCH_TIME_SCALE": f"{self.time_scale:g}",
                "MAPBENCH_RUN_ID": workspace.run_id,
            }
        )
        profiling_path = workspace.results_mount / PROFILING_FILENAME
        sandbox = LocalProcessSandbox(
            argv + [str(workspace.config_path)],
            cwd=workspace.results_mount,
            env=env,
            log_path=self.layout.run_dir(workspace.run_id) / "adapter.log",
        )
        handle = RunHandle(
            run_id=workspace.run_id,
            workspace=workspace,
            sandbox=sandbox,
            timeout=timeout if timeout is not None else self._timeout_for(workspace),
            profiling_path=profiling_path,
        )
        handle.advance(RUNNING)
        handle._sampler = threading.Thread(
            target=self._sampler_loop, args=(handle,), daemon=True
        )
        handle._sampler.start()
        return handle

    def _sampler_loop(self, handle: RunHandle) -> None:
        while True:
            try:
                sample_resources(handle, self.profile_period)
            except SandboxGone:
                return

    def await_finished(self, handle: RunHandle, poll_period: float = 0.05) -> RunResult:
        workspace = handle.workspace
        sentinel = workspace.results_mount / SENTINEL_FILENAME
        status = FAILED
        reason: str | None = None
        while True:
            if sentinel.exists():
                status = FINISHED
                break
            if not handle.sandbox.alive():
                if sentinel.exists():  # adapter exited right after writing it
                    status = FINISHED
                else:
                    status = FAILED
                    reason = f"exit code {handle.sandbox.exit_code()}, no sentinel"
                break
            if time.monotonic() - handle.started_mono > handle.timeout:
                status = TIMED_OUT
                reason = f"timeout after {handle.timeout:.1f} s"
                break
            time.sleep(poll_period)

        handle._stop.set()
        handle.sandbox.terminate()
        if handle._sampler is not None:
            handle._sampler.join(timeout=5.0)
        handle.close_profiling()

        traj_path = workspace.results_mount / TRAJ_FILENAME
        if status == FINISHED:
            try:
                parse_trajectory(traj_path.read_text())
            except (OSError, TrajectoryError) as exc:
                status = FAILED
                reason = f"MissingTrajectory: {exc}"

        handle.advance(status)
        cpu_mean, cpu_max, ram_max = summarize_series(handle.samples)
        self._write_plot_tables(workspace.results_mount, handle.samples)
        if status != FINISHED:
            marker = workspace.results_mount / FAILURE_MARKER_FILENAME
            marker.write_text((reason or status) + "\n")

        map_path = None
        for name in ("map.pcd", "map.png"):
            candidate = workspace.results_mount / name
            if candidate.exists():
                map_path = candidate
                break

        meta = {
            "run_id": handle.run_id,
            "config_id": workspace.config.id,
            "status": status,
            "reason": reason,
            "started_at": handle.started_at,
            "finished_at": time.time(),
            "time_scale": self.time_scale,
            "exit_code": handle.sandbox.exit_code(),
        }
        (self.layout.run_dir(handle.run_id) / "run_meta.json").write_text(
            json.dumps(meta, indent=2)
        )

        return RunResult(
            run_id=handle.run_id,
            config_id=workspace.config.id,
            status=status,
            reason=reason,
            traj_path=traj_path if status == FINISHED else None,
            profiling_path=handle.profiling_path,
            map_path=map_path,
            cpu_mean=cpu_mean,
            cpu_max=cpu_max,
            ram_max=ram_max,
            started_at=handle.started_at,
            finished_at=time.time(),
            time_scale=self.time_scale,
            exit_code=handle.sandbox.exit_code(),
        )

    @staticmethod
    def _write_plot_tables(results_dir: Path, samples: list[ResourceSample]) -> None:
        # tabular stand-ins for the cpu/mem usage charts
        for name, attr in (("cpu_plot.csv", "cpu"), ("mem_plot.csv", "ram")):
            with open(results_dir / name, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "value"])
                for s in samples:
                    writer.writerow([f"{s.t:.3f}", f"{getattr(s, attr):.4f}"])

    # -- queue ---------------------------------------------------------------

    def run_one(self, config: MappingConfiguration, run_id: str | None = None,
                timeout: float | None = None) -> RunResult:
        started = time.time()
        try:
            workspace = self.prepare_workspace(config, run_id)
            handle = self.launch(workspace, timeout=timeout)
            return self.await_finished(handle)
        except (ExecutorError, SandboxSpawnFailure, Exception) as exc:
            if not isinstance(exc, (ExecutorError, SandboxSpawnFailure)):
                raise
            return RunResult(
                run_id=run_id or uuid.uuid4().hex[:12],
                config_id=config.id,
                status=FAILED,
                reason=str(exc),
                traj_path=None,
                profiling_path=None,
                map_path=None,
                cpu_mean=0.0,
                cpu_max=0.0,
                ram_max=0.0,
                started_at=started,
                finished_at=time.time(),
                time_scale=self.time_scale,
                exit_code=None,
            )

    def run_queue(
        self, configs: list[MappingConfiguration], max_parallel: int = 1
    ) -> list[RunResult]:
        """Execute all configurations, at most max_parallel at once.

        Results come back in input order; individual failures become failed
        results instead of aborting the queue.
        """
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if not configs:
            return []
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            futures = [pool.submit(self.run_one, config) for config in configs]
            return [f.result() for f in futures]
