"""Synthetic sequences and demo catalog entries for desk-scale campaigns.

Ground truth is a smooth parametric 3D curve sampled at the camera rate;
the sequence log carries one image message per ground-truth pose plus a
higher-rate inertial topic.  Mock algorithm adapters replay these logs and
derive their "estimated" trajectories from the ground truth, so the whole
pipeline can be exercised without real sensor data.
"""

from __future__ import annotations

import math

import numpy as np

from .config import AlgorithmSpec, Catalog, DatasetSpec, Parameter
from .dataprep import Message, SequenceLog, save_log
from .layout import DataLayout
from .trajeval import Pose, Trajectory, write_trajectory

CAMERA_TOPIC = "/cam0/image_raw"
IMU_TOPIC = "/imu0"


def make_ground_truth(
    seed: int, n: int = 60, rate: float = 20.0, span: float = 8.0
) -> Trajectory:
    """Smooth loop-shaped trajectory with gentle vertical motion."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * math.pi)
    radius = span * rng.uniform(0.7, 1.3)
    poses = []
    for i in range(n):
        t = i / rate
        a = phase + 2 * math.pi * i / n
        position = np.array(
            [radius * math.cos(a), radius * math.sin(2 * a) / 2, 0.5 * math.sin(a)]
        )
        yaw = a + math.pi / 2
        orientation = np.array([0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2)])
        poses.append(Pose(t=t, position=position, orientation=orientation))
    return Trajectory(tuple(poses))


def make_sequence_log(
    gt: Trajectory,
    rate: float = 20.0,
    imu_per_frame: int = 10,
    resolution: tuple[int, int] = (752, 480),
) -> SequenceLog:
    w, h = resolution
    messages: list[Message] = []
    for pose in gt.poses:
        messages.append(Message(t=pose.t, topic=CAMERA_TOPIC, width=w, height=h))
        for k in range(1, imu_per_frame):
            messages.append(Message(t=pose.t + k / (rate * imu_per_frame), topic=IMU_TOPIC))
    messages.sort(key=lambda m: (m.t, m.topic))
    return SequenceLog(tuple(messages))


def install_dataset(
    layout: DataLayout,
    dataset: DatasetSpec,
    seed: int = 0,
    frames: int = 60,
) -> None:
    """Materialize every sequence of a dataset under the layout root."""
    for k, sequence in enumerate(dataset.sequences):
        gt = make_ground_truth(seed + k, n=frames, rate=dataset.native_rate)
        log = make_sequence_log(gt, rate=dataset.native_rate,
                                resolution=dataset.native_resolution)
        seq_dir = layout.sequence_dir(dataset.id, sequence)
        save_log(log, seq_dir)
        layout.ground_truth_path(dataset.id, sequence).write_text(write_trajectory(gt))


def demo_algorithm(alg_id: str, name: str | None = None, **param_overrides) -> AlgorithmSpec:
    """Mock algorithm spec; behavior parameters steer the mock adapter."""
    defaults = {
        "nFeatures": 1000,
        "offset": 0.0,    # constant positional offset, meters
        "noise": 0.02,    # per-pose gaussian noise sigma, meters
        "coverage": 1.0,  # fraction of frames tracked
        "seed": -1,       # RNG seed; -1 means nondeterministic
        "behavior": "ok",  # ok | crash | hang
    }
    defaults.update(param_overrides)
    template = (
        Parameter("nFeatures", defaults["nFeatures"], "integer"),
        Parameter("offset", defaults["offset"], "real"),
        Parameter("noise", defaults["noise"], "real"),
        Parameter("coverage", defaults["coverage"], "real"),
        Parameter("seed", defaults["seed"], "integer"),
        Parameter("behavior", defaults["behavior"], "text"),
    )
    return AlgorithmSpec(
        id=alg_id,
        name=name or alg_id,
        sensor_modes=frozenset({"mono", "stereo"}),
        image_ref=f"images/{alg_id}.tar",
        parameter_template=template,
    )


def demo_dataset(
    ds_id: str,
    sequences: tuple[str, ...] = ("seq01", "seq02"),
    native_rate: float = 20.0,
    resolution: tuple[int, int] = (752, 480),
) -> DatasetSpec:
    return DatasetSpec(
        id=ds_id,
        name=ds_id,
        sequences=sequences,
        topics={"cam0": CAMERA_TOPIC, "imu": IMU_TOPIC},
        ground_truth_ref=f"{ds_id}/groundtruth",
        native_rate=native_rate,
        native_resolution=resolution,
    )


def demo_catalog() -> Catalog:
    catalog = Catalog()
    catalog.add_algorithm(demo_algorithm("mock-accurate", noise=0.01))
    catalog.add_algorithm(demo_algorithm("mock-sloppy", noise=0.08))
    catalog.add_dataset(demo_dataset("synth-a"))
    catalog.add_dataset(demo_dataset("synth-b"))
    return catalog
