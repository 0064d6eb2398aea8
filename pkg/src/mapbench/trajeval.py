"""Trajectory evaluation: parsing, timestamp association, alignment and error metrics.

Trajectories are timestamped pose sequences in the plain-text convention
``timestamp tx ty tz qx qy qz qw`` (one pose per line, '#' comments).
Estimated and reference trajectories are matched by nearest timestamp,
aligned with a closed-form least-squares rigid (optionally similarity)
registration, and compared through absolute and relative translation
errors summarized by seven statistics.

All functions here are pure: they never mutate their inputs and are safe
to call from any number of concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Association tolerance used when no explicit value is given (seconds).
DEFAULT_MAX_TIME_DIFF = 0.02

# Runs whose estimated pose coverage falls strictly below this ratio of the
# reference frame count are classified as failed.
FAILED_COVERAGE_THRESHOLD = 0.75

SUCCESS = "success"
FAILED = "failed"


class TrajectoryError(Exception):
    """Base class for trajectory parsing/evaluation errors."""


class MalformedLine(TrajectoryError):
    """A data line has the wrong field count, a non-numeric field, a negative
    or non-finite timestamp, or a degenerate (near-zero norm) quaternion."""


class NonMonotonicTimestamps(TrajectoryError):
    """Timestamps are not strictly increasing."""


class EmptyTrajectory(TrajectoryError):
    """No poses were produced."""


class NoMatches(TrajectoryError):
    """Timestamp association produced zero pairs."""


class TooFewPairs(TrajectoryError):
    """Alignment needs at least three pose pairs."""


class DegenerateGeometry(TrajectoryError):
    """Paired positions are rank deficient (e.g. collinear); the registration
    problem has no unique solution."""


class TrajectoryTooShort(TrajectoryError):
    """The reference path never accumulates the requested window length."""


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Convert a unit quaternion (qx, qy, qz, qw) to a 3x3 rotation matrix."""
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """One timestamped pose: position in meters, orientation as (qx,qy,qz,qw)."""

    t: float
    position: np.ndarray
    orientation: np.ndarray

    def rotation_matrix(self) -> np.ndarray:
        return quaternion_to_rotation(self.orientation)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An ordered, non-empty pose sequence with strictly increasing timestamps."""

    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        if not self.poses:
            raise EmptyTrajectory("trajectory has no poses")
        ts = [p.t for p in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise NonMonotonicTimestamps("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses])

    def path_length(self) -> float:
        """Total length of the polyline through the positions, in meters."""
        if len(self.poses) < 2:
            return 0.0
        steps = np.diff(self.positions, axis=0)
        return float(np.linalg.norm(steps, axis=1).sum())

    def duration(self) -> float:
        return self.poses[-1].t - self.poses[0].t


@dataclass(frozen=True, eq=False)
class PairedTrajectory:
    """Estimated/reference pose pairs produced by timestamp association."""

    pairs: tuple[tuple[Pose, Pose], ...]
    max_time_diff: float

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def est_positions(self) -> np.ndarray:
        return np.array([e.position for e, _ in self.pairs])

    @property
    def ref_positions(self) -> np.ndarray:
        return np.array([r.position for _, r in self.pairs])


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """p -> scale * rotation @ p + translation, with det(rotation) = +1."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        rot_inv = self.rotation.T
        return SimilarityTransform(
            rot_inv, -rot_inv @ self.translation / self.scale, 1.0 / self.scale
        )


@dataclass(frozen=True)
class MetricStats:
    """Seven-statistic summary of a translational error sample set.

    rmse/mean/median/std/min/max are in meters, sse in meters squared and
    n is the sample count.  std is the population standard deviation.
    """

    rmse: float
    mean: float
    median: float
    std: float
    min: float
    max: float
    sse: float
    n: int

    @classmethod
    def from_errors(cls, errors: Sequence[float] | np.ndarray) -> "MetricStats":
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise ValueError("cannot summarize an empty error set")
        sse = float(e @ e)
        return cls(
            rmse=math.sqrt(sse / e.size),
            mean=float(e.mean()),
            median=float(np.median(e)),
            std=float(e.std()),
            min=float(e.min()),
            max=float(e.max()),
            sse=sse,
            n=int(e.size),
        )

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "sse": self.sse,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricStats":
        return cls(**{k: d[k] for k in ("rmse", "mean", "median", "std", "min", "max", "sse", "n")})


def _parse_pose(fields: list[str], line_no: int) -> Pose:
    if len(fields) != 8:
        raise MalformedLine(f"line {line_no}: expected 8 fields, got {len(fields)}")
    try:
        values = [float(f) for f in fields]
    except ValueError as exc:
        raise MalformedLine(f"line {line_no}: non-numeric field ({exc})") from None
    t = values[0]
    if not math.isfinite(t) or t < 0:
        raise MalformedLine(f"line {line_no}: bad timestamp {fields[0]!r}")
    position = np.array(values[1:4])
    if not np.all(np.isfinite(position)):
        raise MalformedLine(f"line {line_no}: non-finite position")
    quat = np.array(values[4:8])
    norm = float(np.linalg.norm(quat))
    if not math.isfinite(norm) or norm < 1e-9:
        raise MalformedLine(f"line {line_no}: degenerate quaternion (norm {norm:g})")
    return Pose(t=t, position=position, orientation=quat / norm)


def parse_trajectory(source: str | Iterable[str]) -> Trajectory:
    """Parse a plain-text trajectory.

    ``source`` is either the full text or an iterable of lines.  Data lines
    carry ``timestamp tx ty tz qx qy qz qw``; blank lines and lines starting
    with '#' are skipped.  Quaternions are renormalized.
    """
    lines = source.splitlines() if isinstance(source, str) else source
    poses = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        poses.append(_parse_pose(line.split(), line_no))
    if not poses:
        raise EmptyTrajectory("no data lines")
    return Trajectory(tuple(poses))


def write_trajectory(traj: Trajectory) -> str:
    """Serialize a trajectory in the same line format parse_trajectory reads.

    Floats are written with 17 significant digits so that a parse of the
    output reproduces every pose bit-exactly.
    """
    out = ["# timestamp tx ty tz qx qy qz qw"]
    for p in traj.poses:
        nums = [p.t, *p.position, *p.orientation]
        out.append(" ".join(f"{v:.17g}" for v in nums))
    return "\n".join(out) + "\n"


def associate(
    est: Trajectory, ref: Trajectory, max_time_diff: float = DEFAULT_MAX_TIME_DIFF
) -> PairedTrajectory:
    """Match estimated to reference poses by nearest timestamp.

    Candidate pairs within ``max_time_diff`` are accepted greedily in order
    of increasing time difference; each pose is used at most once, so the
    matching is injective on both sides.  Unmatched estimated poses are
    dropped.  Raises NoMatches when nothing pairs up.
    """
    if max_time_diff < 0:
        raise ValueError("max_time_diff must be non-negative")
    est_t = est.timestamps
    ref_t = ref.timestamps
    diff = np.abs(est_t[:, None] - ref_t[None, :])
    cand_i, cand_j = np.nonzero(diff <= max_time_diff)
    if cand_i.size == 0:
        raise NoMatches(f"no timestamp pairs within {max_time_diff} s")
    order = np.lexsort((cand_j, cand_i, diff[cand_i, cand_j]))
    est_used = np.zeros(len(est), dtype=bool)
    ref_used = np.zeros(len(ref), dtype=bool)
    matches: list[tuple[int, int]] = []
    for k in order:
        i, j = int(cand_i[k]), int(cand_j[k])
        if est_used[i] or ref_used[j]:
            continue
        est_used[i] = True
        ref_used[j] = True
        matches.append((i, j))
    matches.sort()
    pairs = tuple((est.poses[i], ref.poses[j]) for i, j in matches)
    return PairedTrajectory(pairs=pairs, max_time_diff=max_time_diff)


def align(pairs: PairedTrajectory, with_scale: bool = False) -> SimilarityTransform:
    """Closed-form least-squares registration of estimated onto reference positions.

    Returns the rigid transform (or similarity transform when ``with_scale``)
    minimizing the sum of squared distances between transformed estimated
    positions and reference positions, via SVD of the cross-covariance with
    the usual sign correction to keep det(rotation) = +1.
    """
    if len(pairs) < 3:
        raise TooFewPairs(f"alignment needs >= 3 pairs, got {len(pairs)}")
    x = pairs.est_positions
    y = pairs.ref_positions
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    cov = yc.T @ xc / len(pairs)
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= max(d[0], 1e-300) * 1e-12:
        raise DegenerateGeometry("paired positions are (near) collinear")
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rotation = u @ s @ vt
    if with_scale:
        var_x = float((xc**2).sum()) / len(pairs)
        scale = float(np.trace(np.diag(d) @ s)) / var_x
    else:
        scale = 1.0
    translation = mu_y - scale * rotation @ mu_x
    return SimilarityTransform(rotation=rotation, translation=translation, scale=scale)


def ape(pairs: PairedTrajectory, transform: SimilarityTransform) -> MetricStats:
    """Absolute translation error statistics after applying ``transform``.

    Per-pair error is the Euclidean distance between the transformed
    estimated position and the reference position.
    """
    if len(pairs) == 0:
        raise ValueError("ape needs at least one pair")
    mapped = transform.apply(pairs.est_positions)
    errors = np.linalg.norm(mapped - pairs.ref_positions, axis=1)
    return MetricStats.from_errors(errors)


def rpe(pairs: PairedTrajectory, delta_meters: float) -> MetricStats:
    """Relative translation error per meter of reference motion.

    For every starting pair i, the window ends at the first pair j whose
    accumulated reference path length from i reaches ``delta_meters``.  The
    error of a window is the norm of the difference between the estimated
    and reference relative translations (each expressed in its own starting
    pose frame), divided by the window's reference path length.
    """
    if delta_meters <= 0:
        raise ValueError("delta_meters must be positive")
    if len(pairs) == 0:
        raise ValueError("rpe needs at least one pair")
    est_pos = pairs.est_positions
    ref_pos = pairs.ref_positions
    seg = np.linalg.norm(np.diff(ref_pos, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    errors = []
    for i in range(len(pairs) - 1):
        j = int(np.searchsorted(cum, cum[i] + delta_meters, side="left"))
        if j >= len(pairs):
            break
        window = cum[j] - cum[i]
        r_est = pairs.pairs[i][0].rotation_matrix()
        r_ref = pairs.pairs[i][1].rotation_matrix()
        d_est = r_est.T @ (est_pos[j] - est_pos[i])
        d_ref = r_ref.T @ (ref_pos[j] - ref_pos[i])
        errors.append(float(np.linalg.norm(d_est - d_ref)) / window)
    if not errors:
        raise TrajectoryTooShort(
            f"reference path never accumulates {delta_meters} m in any window"
        )
    return MetricStats.from_errors(errors)


def traj_length_factor(
    est: Trajectory, ref: Trajectory, max_time_diff: float = DEFAULT_MAX_TIME_DIFF
) -> float:
    """Fraction of reference poses covered by the estimate, in [0, 1].

    Counts estimated poses matched to reference poses (nearest-timestamp
    association) and divides by the reference pose count.
    """
    try:
        pairs = associate(est, ref, max_time_diff)
    except NoMatches:
        return 0.0
    return min(1.0, len(pairs) / len(ref))


def classify_run(
    stats: MetricStats | None,
    factor: float,
    min_factor: float = FAILED_COVERAGE_THRESHOLD,
    max_ate: float | None = None,
) -> str:
    """Classify a run as 'success' or 'failed'.

    A run fails when its coverage factor is strictly below ``min_factor``,
    or when ``max_ate`` is given and the ATE rmse exceeds it.  A factor
    exactly at the threshold passes.
    """
    if not 0.0 <= factor <= 1.0:
        raise ValueError(f"factor must lie in [0, 1], got {factor}")
    if factor < min_factor:
        return FAILED
    if max_ate is not None:
        if stats is None or stats.rmse > max_ate:
            return FAILED
    return SUCCESS


def evaluate_pair(
    est: Trajectory,
    ref: Trajectory,
    max_time_diff: float = DEFAULT_MAX_TIME_DIFF,
    with_scale: bool = False,
    rpe_delta: float = 1.0,
) -> dict:
    """Run the full association/alignment/APE/RPE pipeline on one pair.

    Returns a dict with keys ate, rpe (MetricStats or None when the path is
    too short), transform, pairs and traj_length.
    """
    pairs = associate(est, ref, max_time_diff)
    transform = align(pairs, with_scale=with_scale)
    ate_stats = ape(pairs, transform)
    try:
        rpe_stats: MetricStats | None = rpe(pairs, rpe_delta)
    except TrajectoryTooShort:
        rpe_stats = None
    return {
        "ate": ate_stats,
        "rpe": rpe_stats,
        "transform": transform,
        "pairs": pairs,
        "traj_length": traj_length_factor(est, ref, max_time_diff),
    }
