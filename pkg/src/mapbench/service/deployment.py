"""Deployment configuration: mode, analysis lockdown, node inventory, bind."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

MODES = ("view_only", "workstation", "cluster", "cloud")


class DeploymentError(Exception):
    pass


class BindFailure(DeploymentError):
    pass


@dataclass(frozen=True)
class NodeInfo:
    host: str
    inner_address: str


@dataclass(frozen=True)
class DeploymentConfig:
    mode: str = "workstation"
    no_new_analysis: bool = False
    nodes: tuple[NodeInfo, ...] = ()
    bind_host: str = "127.0.0.1"
    bind_port: int = 8080
    docs_base_url: str = "/wiki"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise DeploymentError(f"unknown mode {self.mode!r}; use one of {MODES}")
        if self.mode in ("cluster", "cloud") and not self.nodes:
            raise DeploymentError(f"{self.mode} mode requires a node inventory")
        if self.mode not in ("cluster", "cloud") and self.nodes:
            raise DeploymentError("node inventory is only valid in cluster/cloud mode")

    @property
    def read_only(self) -> bool:
        return self.mode == "view_only"


def load_deployment_config(path: Path | str | None = None) -> DeploymentConfig:
    """Read the declarative deployment file, then apply env overrides.

    Env: MAPBENCH_MODE, MAPBENCH_NO_NEW_ANALYSIS, MAPBENCH_BIND_HOST,
    MAPBENCH_BIND_PORT.
    """
    doc: dict = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    mode = os.environ.get("MAPBENCH_MODE", doc.get("mode", "workstation"))
    no_new = os.environ.get(
        "MAPBENCH_NO_NEW_ANALYSIS", str(doc.get("no_new_analysis", False))
    )
    nodes = tuple(
        NodeInfo(host=str(n["host"]), inner_address=str(n["inner_address"]))
        for n in (doc.get("nodes") or [])
    )
    return DeploymentConfig(
        mode=str(mode),
        no_new_analysis=str(no_new).strip().lower() in ("1", "true", "yes", "on"),
        nodes=nodes,
        bind_host=os.environ.get("MAPBENCH_BIND_HOST", doc.get("bind_host", "127.0.0.1")),
        bind_port=int(os.environ.get("MAPBENCH_BIND_PORT", doc.get("bind_port", 8080))),
        docs_base_url=str(doc.get("docs_base_url", "/wiki")),
    )
