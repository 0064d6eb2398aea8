"""Sandbox abstraction for running one mapping task in isolation.

The default implementation launches a local subprocess in its own session
with a dedicated working directory and profiles its whole process tree.
An adapter slot for an external container runtime exists so deployments
can swap in real isolation without touching the runner.
"""

from __future__ import annotations

import os
import signal
import subprocess
import time
from pathlib import Path

import psutil


class SandboxSpawnFailure(Exception):
    pass


class SandboxGone(Exception):
    """The sandboxed process is no longer running."""


class Sandbox:
    """Minimal contract the runner needs: spawn/alive/sample/terminate."""

    def alive(self) -> bool:
        raise NotImplementedError

    def sample(self) -> tuple[float, float]:
        """Return (cpu cores summed over the tree, resident MB)."""
        raise NotImplementedError

    def exit_code(self) -> int | None:
        raise NotImplementedError

    def terminate(self, grace: float = 2.0) -> None:
        raise NotImplementedError


class LocalProcessSandbox(Sandbox):
    """Subprocess in its own session; profiling via the /proc tree."""

    def __init__(self, argv: list[str], cwd: Path, env: dict[str, str], log_path: Path):
        self._log = open(log_path, "wb")
        try:
            self._proc = subprocess.Popen(
                argv,
                cwd=str(cwd),
                env=env,
                stdout=self._log,
                stderr=subprocess.STDOUT,
                start_new_session=True,
            )
        except OSError as exc:
            self._log.close()
            raise SandboxSpawnFailure(str(exc)) from exc
        self._ps = psutil.Process(self._proc.pid)
        # cpu_percent accumulates per Process instance, so tree members must
        # be cached by pid; the first call per instance only arms the counter.
        self._tracked: dict[int, psutil.Process] = {self._proc.pid: self._ps}
        self._ps.cpu_percent(None)

    @property
    def pid(self) -> int:
        return self._proc.pid

    def _tree(self) -> list[psutil.Process]:
        try:
            children = self._ps.children(recursive=True)
        except psutil.NoSuchProcess:
            return []
        members = [self._ps]
        for child in children:
            cached = self._tracked.get(child.pid)
            if cached is None:
                self._tracked[child.pid] = child
                try:
                    child.cpu_percent(None)
                except psutil.NoSuchProcess:
                    continue
                cached = child
            members.append(cached)
        return members

    def alive(self) -> bool:
        return self._proc.poll() is None

    def exit_code(self) -> int | None:
        return self._proc.poll()

    def sample(self) -> tuple[float, float]:
        if not self.alive():
            raise SandboxGone("process exited")
        cpu = 0.0
        ram = 0.0
        for proc in self._tree():
            try:
                cpu += proc.cpu_percent(None) / 100.0
                ram += proc.memory_info().rss / (1024 * 1024)
            except psutil.NoSuchProcess:
                continue
        return cpu, ram

    def terminate(self, grace: float = 2.0) -> None:
        if self._proc.poll() is None:
            try:
                os.killpg(self._proc.pid, signal.SIGTERM)
            except ProcessLookupError:
                pass
            deadline = time.monotonic() + grace
            while self._proc.poll() is None and time.monotonic() < deadline:
                time.sleep(0.02)
            if self._proc.poll() is None:
                try:
                    os.killpg(self._proc.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                self._proc.wait()
        if not self._log.closed:
            self._log.close()

    def reap(self) -> None:
        self.terminate()
        self._proc.wait()


class ContainerRuntimeSandbox(Sandbox):
    """Placeholder adapter for an external container runtime.

    Deployments back this with their orchestrator; the desk-scale artifact
    keeps only the seam.
    """

    def __init__(self, *args, **kwargs):
        raise SandboxSpawnFailure("no external container runtime is wired in")
