"""Derived datasets: frame-rate decimation and image rescaling with caching.

A sequence log models a recorded sensor stream as timestamped messages per
topic; image messages carry their pixel dimensions.  Derivation keeps the
original log untouched and produces a new log under a deterministic,
content-addressed key so each (dataset, parameters) variant is computed
once and reused by every run that needs it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence


class DataPrepError(Exception):
    pass


class RateAboveSource(DataPrepError):
    """Requested rate exceeds the source rate."""


class FactorOutOfRange(DataPrepError):
    """Resolution factor outside (0, 1]."""


@dataclass(frozen=True)
class Message:
    """One recorded message; width/height only set for image payloads."""

    t: float
    topic: str
    width: int | None = None
    height: int | None = None
    blob: str | None = None  # payload blob reference, optional at desk scale


@dataclass(frozen=True)
class SequenceLog:
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        last: dict[str, float] = {}
        for m in self.messages:
            if m.topic in last and m.t < last[m.topic]:
                raise DataPrepError(f"timestamps decrease on topic {m.topic!r}")
            last[m.topic] = m.t

    def __len__(self) -> int:
        return len(self.messages)

    def topics(self) -> set[str]:
        return {m.topic for m in self.messages}

    def per_topic(self, topic: str) -> list[Message]:
        return [m for m in self.messages if m.topic == topic]

    def duration(self) -> float:
        if not self.messages:
            return 0.0
        ts = [m.t for m in self.messages]
        return max(ts) - min(ts)


@dataclass(frozen=True)
class PrepParams:
    """Requested derivation: target rate and/or resolution factor on a topic set."""

    target_rate: float | None = None
    resolution_factor: float | None = None
    topics: frozenset[str] = frozenset()

    def is_identity(self) -> bool:
        return self.target_rate is None and (
            self.resolution_factor is None or self.resolution_factor == 1.0
        )


def decimate(
    log: SequenceLog, source_rate: float, target_rate: float, topics: Iterable[str]
) -> SequenceLog:
    """Keep every n-th message per affected topic, n = round(source/target).

    The first message of each affected topic is always kept; unaffected
    topics pass through untouched.
    """
    if target_rate > source_rate:
        raise RateAboveSource(f"target {target_rate} Hz > source {source_rate} Hz")
    if target_rate <= 0 or source_rate <= 0:
        raise DataPrepError("rates must be positive")
    n = max(1, round(source_rate / target_rate))
    affected = set(topics)
    counters: dict[str, int] = {}
    kept = []
    for m in log.messages:
        if m.topic not in affected:
            kept.append(m)
            continue
        index = counters.get(m.topic, 0)
        counters[m.topic] = index + 1
        if index % n == 0:
            kept.append(m)
    return SequenceLog(tuple(kept))


def scaled_dimension(value: int, factor: float) -> int:
    """Round-to-nearest pixel dimension (half rounds up)."""
    return int(math.floor(value * factor + 0.5))


def rescale(log: SequenceLog, factor: float, topics: Iterable[str]) -> SequenceLog:
    """Scale image dimensions of affected topics; counts and timestamps unchanged."""
    if not 0 < factor <= 1:
        raise FactorOutOfRange(f"factor {factor} outside (0, 1]")
    affected = set(topics)
    out = []
    for m in log.messages:
        if m.topic in affected and m.width is not None and m.height is not None:
            out.append(
                replace(
                    m,
                    width=scaled_dimension(m.width, factor),
                    height=scaled_dimension(m.height, factor),
                )
            )
        else:
            out.append(m)
    return SequenceLog(tuple(out))


def prep_cache_key(dataset_id: str, sequence: str, params: PrepParams) -> str:
    """Deterministic content key for one derived-dataset request.

    Numeric parameters are normalized (0.5 and 0.50 hash identically) and
    the affected topic set is sorted, so equal requests share one key.
    """
    payload = {
        "dataset": dataset_id,
        "sequence": sequence,
        "target_rate": None if params.target_rate is None else float(params.target_rate),
        "resolution_factor": (
            None if params.resolution_factor is None else float(params.resolution_factor)
        ),
        "topics": sorted(params.topics),
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return digest[:24]


def apply_prep(log: SequenceLog, source_rate: float, params: PrepParams) -> SequenceLog:
    """Run the requested derivation steps (decimation first, then rescale)."""
    out = log
    if params.target_rate is not None:
        out = decimate(out, source_rate, params.target_rate, params.topics)
    if params.resolution_factor is not None:
        out = rescale(out, params.resolution_factor, params.topics)
    return out


class PrepCache:
    """Once-per-key derivation cache.

    Concurrent readers are free; writers serialize per key, the first wins
    and the rest reuse its output.  ``transform_count`` counts how many
    derivations actually ran (test observability).
    """

    def __init__(self, root: Path | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, SequenceLog] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.transform_count = 0

    def _key_lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def path_for(self, key: str) -> Path | None:
        return None if self.root is None else self.root / key

    def get_or_prepare(
        self,
        dataset_id: str,
        sequence: str,
        params: PrepParams,
        source_rate: float,
        loader: Callable[[], SequenceLog],
    ) -> tuple[str, SequenceLog]:
        """Return (key, derived log), deriving and storing on first use."""
        key = prep_cache_key(dataset_id, sequence, params)
        with self._key_lock(key):
            if key in self._memory:
                return key, self._memory[key]
            directory = self.path_for(key)
            if directory is not None and (directory / "index.csv").exists():
                log = load_log(directory)
                self._memory[key] = log
                return key, log
            derived = apply_prep(loader(), source_rate, params)
            self.transform_count += 1
            if directory is not None:
                save_log(derived, directory)
            self._memory[key] = derived
            return key, derived


# --- on-disk form: index.csv (message table) plus optional payload blobs ---
#
# index.csv columns: t, topic, width, height, blob
# width/height/blob are empty for non-image messages.

def save_log(log: SequenceLog, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "topic", "width", "height", "blob"])
        for m in log.messages:
            writer.writerow(
                [
                    f"{m.t:.17g}",
                    m.topic,
                    "" if m.width is None else m.width,
                    "" if m.height is None else m.height,
                    m.blob or "",
                ]
            )


def load_log(directory: Path) -> SequenceLog:
    directory = Path(directory)
    messages = []
    with open(directory / "index.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            messages.append(
                Message(
                    t=float(row["t"]),
                    topic=row["topic"],
                    width=int(row["width"]) if row["width"] else None,
                    height=int(row["height"]) if row["height"] else None,
                    blob=row["blob"] or None,
                )
            )
    return SequenceLog(tuple(messages))
