"""Mock algorithm adapter: replays a sequence log and fabricates an estimate.

Honors the adapter contract: invoked with the unified-config path, reads the
dataset from MAPBENCH_DATASET_DIR, writes traj.txt (and optionally a map
artifact) followed by the empty sentinel file "finished" into
MAPBENCH_RESULTS_DIR.  Playback follows message timestamps scaled by
MAPBENCH_TIME_SCALE.

Behavior parameters (algorithm_params):
    offset    constant positional offset in meters
    noise     gaussian position noise sigma in meters
    coverage  fraction of frames tracked before "losing tracking"
    seed      RNG seed; negative means nondeterministic
    behavior  ok | crash | hang
"""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from ..dataprep import load_log
from ..layout import GROUND_TRUTH_FILENAME, SENTINEL_FILENAME, TRAJ_FILENAME
from ..trajeval import Pose, Trajectory, parse_trajectory, write_trajectory


def fabricate_estimate(gt: Trajectory, frame_times: list[float], params: dict) -> Trajectory | None:
    """Estimate = ground truth at the played frame times, perturbed."""
    seed = int(params.get("seed", -1))
    rng = np.random.default_rng(None if seed < 0 else seed)
    offset = float(params.get("offset", 0.0))
    noise = float(params.get("noise", 0.0))
    coverage = float(params.get("coverage", 1.0))

    gt_by_t = {p.t: p for p in gt.poses}
    gt_times = np.array([p.t for p in gt.poses])
    n_keep = int(round(len(frame_times) * coverage))
    offset_vec = offset * np.array([1.0, 0.0, 0.0])
    poses = []
    for t in frame_times[:n_keep]:
        source = gt_by_t.get(t)
        if source is None:
            source = gt.poses[int(np.argmin(np.abs(gt_times - t)))]
        position = source.position + offset_vec
        if noise > 0:
            position = position + rng.normal(scale=noise, size=3)
        poses.append(Pose(t=t, position=position, orientation=source.orientation))
    if not poses:
        return None
    return Trajectory(tuple(poses))


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: mock_adapter <unified-config.yaml>", file=sys.stderr)
        return 2
    config = yaml.safe_load(Path(argv[0]).read_text())
    dataset_dir = Path(os.environ["MAPBENCH_DATASET_DIR"])
    results_dir = Path(os.environ["MAPBENCH_RESULTS_DIR"])
    time_scale = float(os.environ.get("MAPBENCH_TIME_SCALE", "1.0"))
    params = config.get("algorithm_params") or {}

    behavior = str(params.get("behavior", "ok"))
    if behavior == "crash":
        print("simulated crash", file=sys.stderr)
        return 1
    if behavior == "hang":
        while True:
            time.sleep(3600)

    log = load_log(dataset_dir)
    gt = parse_trajectory((dataset_dir / GROUND_TRUTH_FILENAME).read_text())
    frames = [m for m in log.messages if m.width is not None]
    frame_times = sorted({m.t for m in frames})

    # real-time playback relative to message timestamps, optionally scaled
    start = time.monotonic()
    t0 = frame_times[0] if frame_times else 0.0
    for t in frame_times:
        target = (t - t0) * time_scale
        delay = target - (time.monotonic() - start)
        if delay > 0:
            time.sleep(delay)

    estimate = fabricate_estimate(gt, frame_times, params)
    if estimate is not None:
        (results_dir / TRAJ_FILENAME).write_text(write_trajectory(estimate))

    dataset_params = config.get("dataset_params") or {}
    if dataset_params.get("save_map"):
        (results_dir / "map.pcd").write_text("# synthetic map artifact\n")

    (results_dir / SENTINEL_FILENAME).touch()
    return 0


if __name__ == "__main__":
    sys.exit(main())
