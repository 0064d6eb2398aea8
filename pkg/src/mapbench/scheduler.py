"""Multi-node campaign planning and simulation.

Tasks sharing one (algorithm, dataset) pair form a class; a class is the
unit of node assignment so the big static resources (algorithm image,
dataset) are fetched once per node.  Cloud provisioning supports direct
per-node transfers and the snapshot pattern (one transfer to a template
node, an image snapshot, clones instantiated in parallel).  A discrete
-event simulator quantifies makespan and network traffic for both.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

GiB = 1024**3


class SchedulerError(Exception):
    pass


class MissingSize(SchedulerError):
    pass


class InconsistentPlan(SchedulerError):
    pass


@dataclass(frozen=True)
class Task:
    task_id: str
    algorithm_id: str
    dataset_id: str


@dataclass(frozen=True)
class TaskClass:
    algorithm_id: str
    dataset_id: str
    task_ids: tuple[str, ...]

    @property
    def key(self) -> tuple[str, str]:
        return (self.algorithm_id, self.dataset_id)

    def resources(self) -> tuple[str, str]:
        return (f"image:{self.algorithm_id}", f"dataset:{self.dataset_id}")


@dataclass(frozen=True)
class ClusterPlan:
    n_tasks: int
    m_nodes: int
    controllers: tuple[str, ...]
    assignment: Mapping[tuple[str, str], str]        # class key -> controller
    manifests: Mapping[str, tuple[str, ...]]         # controller -> task ids
    transfer_schedule: tuple[tuple[str, str], ...]   # (controller, resource)
    seed: int
    strategy: str


@dataclass(frozen=True)
class ProvisionStep:
    action: str   # transfer | snapshot | clone
    node: str


@dataclass(frozen=True)
class ProvisionPlan:
    strategy: str  # direct | snapshot
    steps: tuple[ProvisionStep, ...]
    n: int


@dataclass(frozen=True)
class CostModel:
    """Durations and sizes driving the simulator; values are configuration,
    not measurements."""

    resource_sizes: Mapping[str, int] = field(default_factory=dict)  # bytes
    default_image_bytes: int | None = None
    default_dataset_bytes: int | None = None
    lan_bandwidth: float = 625_000_000.0   # bytes/s on the shared virtual LAN
    snapshot_create_s: float = 60.0
    clone_instantiate_s: float = 30.0
    task_durations: Mapping[str, float] = field(default_factory=dict)
    default_task_duration: float | None = None
    prep_seconds_per_byte: float = 0.0

    def resource_size(self, resource: str) -> int:
        if resource in self.resource_sizes:
            return self.resource_sizes[resource]
        if resource.startswith("image:") and self.default_image_bytes is not None:
            return self.default_image_bytes
        if resource.startswith("dataset:") and self.default_dataset_bytes is not None:
            return self.default_dataset_bytes
        raise MissingSize(f"no size for resource {resource!r}")

    def task_duration(self, task_id: str) -> float:
        if task_id in self.task_durations:
            return self.task_durations[task_id]
        if self.default_task_duration is not None:
            return self.default_task_duration
        raise InconsistentPlan(f"no duration for task {task_id!r}")


def default_cost_model(**overrides) -> CostModel:
    """Desk defaults: 5 Gbps shared LAN, 4 GiB images, 20 GiB datasets."""
    values = dict(
        default_image_bytes=4 * GiB,
        default_dataset_bytes=20 * GiB,
        lan_bandwidth=5e9 / 8,
        snapshot_create_s=60.0,
        clone_instantiate_s=30.0,
        default_task_duration=60.0,
    )
    values.update(overrides)
    return CostModel(**values)


def classify(tasks: Sequence[Task]) -> list[TaskClass]:
    """Partition tasks by (algorithm, dataset), deterministically ordered."""
    grouped: dict[tuple[str, str], list[str]] = {}
    for task in tasks:
        grouped.setdefault((task.algorithm_id, task.dataset_id), []).append(task.task_id)
    return [
        TaskClass(algorithm_id=key[0], dataset_id=key[1], task_ids=tuple(ids))
        for key, ids in sorted(grouped.items())
    ]


def _node_name(index: int) -> str:
    return f"node-{index + 1:02d}"


def plan_cluster(
    tasks: Sequence[Task], m_nodes: int, seed: int = 0, strategy: str = "random"
) -> ClusterPlan:
    """Assign task classes to min(m, n) controllers and derive transfers.

    strategy "random" reproduces the seeded random class placement;
    "balanced" (an extension, not the baseline behavior) assigns the
    largest class to the least-loaded controller instead.
    """
    if m_nodes < 1:
        raise SchedulerError("need at least one node")
    if strategy not in ("random", "balanced"):
        raise SchedulerError(f"unknown strategy {strategy!r}")
    classes = classify(tasks)
    n_tasks = len(tasks)
    n_controllers = min(m_nodes, n_tasks)
    controllers = tuple(_node_name(i) for i in range(n_controllers))

    assignment: dict[tuple[str, str], str] = {}
    manifests: dict[str, list[str]] = {node: [] for node in controllers}
    if controllers:
        if strategy == "random":
            rng = random.Random(seed)
            for cls in classes:
                node = controllers[rng.randrange(n_controllers)]
                assignment[cls.key] = node
                manifests[node].extend(cls.task_ids)
        else:
            loads = {node: 0 for node in controllers}
            for cls in sorted(classes, key=lambda c: (-len(c.task_ids), c.key)):
                node = min(controllers, key=lambda nd: (loads[nd], nd))
                assignment[cls.key] = node
                manifests[node].extend(cls.task_ids)
                loads[node] += len(cls.task_ids)

    # each (node, resource) fetched from the master exactly once
    schedule: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for cls in classes:
        node = assignment[cls.key]
        for resource in cls.resources():
            if (node, resource) not in seen:
                seen.add((node, resource))
                schedule.append((node, resource))

    return ClusterPlan(
        n_tasks=n_tasks,
        m_nodes=m_nodes,
        controllers=controllers,
        assignment=assignment,
        manifests={node: tuple(ids) for node, ids in manifests.items()},
        transfer_schedule=tuple(schedule),
        seed=seed,
        strategy=strategy,
    )


def render_subtask_manifest(plan: ClusterPlan) -> str:
    """Plain-text manifest, one section per node, one task id per line."""
    lines = []
    for node in plan.controllers:
        lines.append(f"[{node}]")
        lines.extend(plan.manifests.get(node, ()))
        lines.append("")
    return "\n".join(lines)


def write_subtask_manifest(plan: ClusterPlan, directory: Path) -> Path:
    path = Path(directory) / "subTask.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_subtask_manifest(plan))
    return path


@dataclass(frozen=True)
class TransferCost:
    total_bytes: int
    per_node: Mapping[str, int]


def transfer_cost(plan: ClusterPlan, model: CostModel) -> TransferCost:
    """Bytes moved by the plan's transfer schedule; cached resources are free
    (the schedule already lists each (node, resource) pair only once)."""
    per_node: dict[str, int] = {node: 0 for node in plan.controllers}
    total = 0
    for node, resource in plan.transfer_schedule:
        size = model.resource_size(resource)
        per_node[node] = per_node.get(node, 0) + size
        total += size
    return TransferCost(total_bytes=total, per_node=per_node)


def plan_cloud(n: int, strategy: str, model: CostModel) -> ProvisionPlan:
    """Provisioning steps for n work nodes.

    direct: the master pushes the static resource set to every node over
    the shared LAN.  snapshot: one transfer to a template node, one
    snapshot creation, then n-1 clones instantiated in parallel.
    """
    if n < 1:
        raise SchedulerError("need at least one node")
    if strategy not in ("direct", "snapshot"):
        raise SchedulerError(f"unknown provisioning strategy {strategy!r}")
    if strategy == "direct" or n == 1:
        steps = tuple(ProvisionStep("transfer", _node_name(i)) for i in range(n))
        if strategy == "snapshot":  # single node degenerates to one transfer
            steps = (ProvisionStep("transfer", _node_name(0)),)
        return ProvisionPlan(strategy=strategy, steps=steps, n=n)
    steps = [ProvisionStep("transfer", _node_name(0)), ProvisionStep("snapshot", _node_name(0))]
    steps.extend(ProvisionStep("clone", _node_name(i)) for i in range(1, n))
    return ProvisionPlan(strategy=strategy, steps=tuple(steps), n=n)


@dataclass(frozen=True)
class Timeline:
    node_ready: Mapping[str, float]
    busy: Mapping[str, tuple[tuple[float, float, str], ...]]
    makespan: float
    total_network_bytes: int


def _static_resource_set(plan: ClusterPlan) -> list[str]:
    resources: list[str] = []
    for _, resource in plan.transfer_schedule:
        if resource not in resources:
            resources.append(resource)
    return resources


def simulate(
    plan: ClusterPlan, provision: ProvisionPlan | None, model: CostModel
) -> Timeline:
    """Deterministic discrete-event simulation of one campaign.

    Provisioning (when given) distributes the full static resource set, so
    the per-need transfer schedule is already satisfied; without it, nodes
    start empty and the schedule's transfers serialize through the shared
    LAN cap.  Dataset pre-processing (when modelled) runs once per dataset
    per node; tasks then execute sequentially per controller.
    """
    nodes = plan.controllers
    if provision is not None and provision.n != len(nodes):
        raise InconsistentPlan(
            f"provision plan covers {provision.n} nodes, cluster plan has {len(nodes)}"
        )

    node_ready: dict[str, float] = {node: 0.0 for node in nodes}
    total_bytes = 0

    if provision is None:
        lan_time = 0.0
        for node in nodes:
            for sched_node, resource in plan.transfer_schedule:
                if sched_node != node:
                    continue
                size = model.resource_size(resource)
                lan_time += size / model.lan_bandwidth
                total_bytes += size
            node_ready[node] = lan_time
    else:
        resource_set = _static_resource_set(plan)
        set_bytes = sum(model.resource_size(r) for r in resource_set)
        set_seconds = set_bytes / model.lan_bandwidth
        if provision.strategy == "direct" or provision.n == 1:
            lan_time = 0.0
            for step in provision.steps:
                lan_time += set_seconds
                total_bytes += set_bytes
                node_ready[step.node] = lan_time
        else:
            template_ready = set_seconds + model.snapshot_create_s
            total_bytes += set_bytes
            for step in provision.steps:
                if step.action == "transfer":
                    continue
                if step.action == "snapshot":
                    node_ready[step.node] = template_ready
                else:
                    node_ready[step.node] = template_ready + model.clone_instantiate_s

    busy: dict[str, list[tuple[float, float, str]]] = {node: [] for node in nodes}
    makespan = max(node_ready.values(), default=0.0)
    classes_by_node: dict[str, list[TaskClass]] = {node: [] for node in nodes}
    for cls_key, node in plan.assignment.items():
        classes_by_node[node].append(
            TaskClass(cls_key[0], cls_key[1], plan.manifests[node])
        )

    for node in nodes:
        t = node_ready[node]
        datasets = sorted({key[1] for key, nd in plan.assignment.items() if nd == node})
        if model.prep_seconds_per_byte > 0:
            for dataset in datasets:
                t += model.prep_seconds_per_byte * model.resource_size(f"dataset:{dataset}")
        for task_id in plan.manifests.get(node, ()):
            duration = model.task_duration(task_id)
            busy[node].append((t, t + duration, task_id))
            t += duration
        makespan = max(makespan, t)

    return Timeline(
        node_ready=node_ready,
        busy={node: tuple(iv) for node, iv in busy.items()},
        makespan=makespan,
        total_network_bytes=total_bytes,
    )


def network_transfers_of_resource_set(provision: ProvisionPlan) -> int:
    """How many times the static resource set crosses the LAN."""
    return sum(1 for step in provision.steps if step.action == "transfer")


def cost_model_from_document(doc: Mapping | None) -> CostModel:
    """Cost model from its configuration-file form; unset keys take the
    desk defaults."""
    doc = dict(doc or {})
    known = {
        "resource_sizes", "default_image_bytes", "default_dataset_bytes",
        "lan_bandwidth", "snapshot_create_s", "clone_instantiate_s",
        "task_durations", "default_task_duration", "prep_seconds_per_byte",
    }
    unknown = set(doc) - known
    if unknown:
        raise SchedulerError(f"unknown cost model keys {sorted(unknown)}")
    return default_cost_model(**doc)
