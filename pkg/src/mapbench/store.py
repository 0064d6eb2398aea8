"""Embedded persistence: catalog entities, run records, evaluations, search.

Backed by a transactional sqlite database behind a repository interface, so
a server-backed implementation can be swapped in without touching callers.
Writes are serialized; readers see committed snapshots.  Search deliberately
evaluates predicates in Python over the fetched rows: corpora are desk-scale
and the semantics stay identical to the documented linear-scan definition.
"""

from __future__ import annotations

import json
import math
import os
import platform
import re
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__
from .config import (
    AlgorithmSpec,
    Catalog,
    DatasetSpec,
    MappingConfiguration,
    Parameter,
)
from .layout import (
    DataLayout,
    FAILURE_MARKER_FILENAME,
    PROFILING_FILENAME,
    SENTINEL_FILENAME,
    TRAJ_FILENAME,
)
from .trajeval import (
    MetricStats,
    Trajectory,
    TrajectoryError,
    align,
    ape,
    associate,
    classify_run,
    parse_trajectory,
    rpe,
    traj_length_factor,
)

EVALUATOR_VERSION = f"trajeval/{__version__}"

STAT_NAMES = ("rmse", "mean", "median", "std", "min", "max", "sse")
RUN_METRICS = ("cpu_mean", "cpu_max", "ram_max", "traj_length")
EVAL_METRICS = tuple(f"ate_{s}" for s in STAT_NAMES) + tuple(f"rpe_{s}" for s in STAT_NAMES)
ALL_METRICS = EVAL_METRICS + RUN_METRICS

_PREDICATE_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(=>|>=|<=|=|<|>)\s*([^<>=\s][^<>=]*?)\s*$"
)


class StoreError(Exception):
    pass


class UnknownEntity(StoreError):
    pass


class CorruptResults(StoreError):
    pass


class RunNotFinished(StoreError):
    pass


class AlreadyEvaluated(StoreError):
    pass


class MalformedPredicate(StoreError):
    pass


class UnknownKey(StoreError):
    pass


class TypeMismatch(StoreError):
    pass


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    config_id: str
    node_id: str
    cpu_type: str
    core_count: int
    status: str
    cpu_mean: float
    cpu_max: float
    ram_max: float
    traj_length: float | None
    started_at: float
    finished_at: float
    time_scale: float
    reason: str | None
    run_dir: str | None


@dataclass(frozen=True)
class EvaluationRecord:
    run_id: str
    ate: MetricStats
    rpe: MetricStats | None
    aligned: bool
    with_scale: bool
    evaluator_version: str

    def metric(self, name: str) -> float | None:
        prefix, _, stat = name.partition("_")
        stats = {"ate": self.ate, "rpe": self.rpe}.get(prefix)
        if stats is None or stat not in STAT_NAMES:
            return None
        return getattr(stats, stat)


@dataclass(frozen=True)
class EvalOptions:
    align: bool = True
    with_scale: bool = False
    max_time_diff: float = 0.02
    rpe_delta: float = 1.0
    force: bool = False


@dataclass(frozen=True)
class SearchQuery:
    """Conjunction of clauses; id sets are disjunctive within themselves."""

    algorithm_ids: frozenset[str] = frozenset()
    dataset_ids: frozenset[str] = frozenset()
    param_predicates: tuple[tuple[str, str, str], ...] = ()
    metric_bounds: tuple[tuple[str, float | None, float | None], ...] = ()

    def __post_init__(self) -> None:
        if not (self.algorithm_ids or self.dataset_ids or self.param_predicates
                or self.metric_bounds):
            raise StoreError("search query needs at least one clause")


def parse_predicate(text: str) -> tuple[str, str, str]:
    """Parse "key OP value"; the historical '=>' operator token means >=."""
    m = _PREDICATE_RE.match(text)
    if not m:
        raise MalformedPredicate(f"cannot parse predicate {text!r}")
    key, op, value = m.groups()
    if op == "=>":
        op = ">="
    return key, op, value.strip()


def _compare(op: str, lhs: Any, rhs: Any) -> bool:
    if op == "=":
        return lhs == rhs
    if op == "<":
        return lhs < rhs
    if op == ">":
        return lhs > rhs
    if op == "<=":
        return lhs <= rhs
    if op == ">=":
        return lhs >= rhs
    raise MalformedPredicate(f"unknown operator {op!r}")


# --- (de)serialization helpers -------------------------------------------


def _algorithm_doc(spec: AlgorithmSpec) -> str:
    return json.dumps(
        {
            "id": spec.id,
            "name": spec.name,
            "sensor_modes": sorted(spec.sensor_modes),
            "image_ref": spec.image_ref,
            "parameter_template": [
                {"key": p.key, "default": p.default, "kind": p.kind}
                for p in spec.parameter_template
            ],
        }
    )


def _algorithm_from_doc(doc: str) -> AlgorithmSpec:
    d = json.loads(doc)
    return AlgorithmSpec(
        id=d["id"],
        name=d["name"],
        sensor_modes=frozenset(d["sensor_modes"]),
        image_ref=d["image_ref"],
        parameter_template=tuple(
            Parameter(p["key"], p["default"], p["kind"]) for p in d["parameter_template"]
        ),
    )


def _dataset_doc(spec: DatasetSpec) -> str:
    return json.dumps(
        {
            "id": spec.id,
            "name": spec.name,
            "sequences": list(spec.sequences),
            "topics": dict(spec.topics),
            "ground_truth_ref": spec.ground_truth_ref,
            "native_rate": spec.native_rate,
            "native_resolution": list(spec.native_resolution),
        }
    )


def _dataset_from_doc(doc: str) -> DatasetSpec:
    d = json.loads(doc)
    return DatasetSpec(
        id=d["id"],
        name=d["name"],
        sequences=tuple(d["sequences"]),
        topics=d["topics"],
        ground_truth_ref=d["ground_truth_ref"],
        native_rate=d["native_rate"],
        native_resolution=tuple(d["native_resolution"]),
    )


def _config_doc(config: MappingConfiguration) -> str:
    return json.dumps(
        {
            "id": config.id,
            "algorithm_id": config.algorithm_id,
            "dataset_id": config.dataset_id,
            "sequence": config.sequence,
            "algorithm_params": dict(config.algorithm_params),
            "dataset_params": dict(config.dataset_params),
            "remap": [list(r) for r in config.remap],
            "comb_parent": config.comb_parent,
        }
    )


def _config_from_doc(doc: str) -> MappingConfiguration:
    d = json.loads(doc)
    return MappingConfiguration(
        id=d["id"],
        algorithm_id=d["algorithm_id"],
        dataset_id=d["dataset_id"],
        sequence=d["sequence"],
        algorithm_params=d["algorithm_params"],
        dataset_params=d["dataset_params"],
        remap=tuple((a, b) for a, b in d["remap"]),
        comb_parent=d.get("comb_parent"),
    )


_SCHEMA = """
CREATE TABLE IF NOT EXISTS algorithms(
    id TEXT PRIMARY KEY, doc TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS datasets(
    id TEXT PRIMARY KEY, doc TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS configurations(
    id TEXT PRIMARY KEY, algorithm_id TEXT NOT NULL, dataset_id TEXT NOT NULL,
    sequence TEXT NOT NULL, comb_parent TEXT, doc TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS combination_specs(
    id TEXT PRIMARY KEY, doc TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS runs(
    run_id TEXT PRIMARY KEY, config_id TEXT NOT NULL, node_id TEXT,
    cpu_type TEXT, core_count INTEGER, status TEXT NOT NULL,
    cpu_mean REAL, cpu_max REAL, ram_max REAL, traj_length REAL,
    started_at REAL, finished_at REAL, time_scale REAL, reason TEXT,
    run_dir TEXT);
CREATE TABLE IF NOT EXISTS evaluations(
    run_id TEXT PRIMARY KEY REFERENCES runs(run_id), doc TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS reports(
    report_id TEXT PRIMARY KEY, url_token TEXT UNIQUE NOT NULL,
    doc TEXT NOT NULL, created_at REAL NOT NULL, hidden INTEGER NOT NULL DEFAULT 0);
"""


class Store:
    """Repository over the embedded database plus the on-disk layout."""

    def __init__(self, layout: DataLayout, db_path: Path | None = None) -> None:
        self.layout = layout
        path = db_path or layout.db_path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    # -- catalog ------------------------------------------------------------

    def add_algorithm(self, spec: AlgorithmSpec) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO algorithms(id, doc) VALUES(?, ?)",
                (spec.id, _algorithm_doc(spec)),
            )
            self._conn.commit()

    def add_dataset(self, spec: DatasetSpec) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO datasets(id, doc) VALUES(?, ?)",
                (spec.id, _dataset_doc(spec)),
            )
            self._conn.commit()

    def get_algorithm(self, algorithm_id: str) -> AlgorithmSpec:
        row = self._conn.execute(
            "SELECT doc FROM algorithms WHERE id = ?", (algorithm_id,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"algorithm {algorithm_id!r}")
        return _algorithm_from_doc(row["doc"])

    def get_dataset(self, dataset_id: str) -> DatasetSpec:
        row = self._conn.execute(
            "SELECT doc FROM datasets WHERE id = ?", (dataset_id,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"dataset {dataset_id!r}")
        return _dataset_from_doc(row["doc"])

    def list_algorithms(self) -> list[AlgorithmSpec]:
        rows = self._conn.execute("SELECT doc FROM algorithms ORDER BY id").fetchall()
        return [_algorithm_from_doc(r["doc"]) for r in rows]

    def list_datasets(self) -> list[DatasetSpec]:
        rows = self._conn.execute("SELECT doc FROM datasets ORDER BY id").fetchall()
        return [_dataset_from_doc(r["doc"]) for r in rows]

    def catalog(self) -> Catalog:
        cat = Catalog()
        for alg in self.list_algorithms():
            cat.add_algorithm(alg)
        for ds in self.list_datasets():
            cat.add_dataset(ds)
        return cat

    # -- configurations -----------------------------------------------------

    def add_configuration(self, config: MappingConfiguration) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO configurations"
                "(id, algorithm_id, dataset_id, sequence, comb_parent, doc)"
                " VALUES(?, ?, ?, ?, ?, ?)",
                (config.id, config.algorithm_id, config.dataset_id, config.sequence,
                 config.comb_parent, _config_doc(config)),
            )
            self._conn.commit()

    def add_configurations(self, configs: Iterable[MappingConfiguration]) -> None:
        for config in configs:
            self.add_configuration(config)

    def get_configuration(self, config_id: str) -> MappingConfiguration:
        row = self._conn.execute(
            "SELECT doc FROM configurations WHERE id = ?", (config_id,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"configuration {config_id!r}")
        return _config_from_doc(row["doc"])

    def list_configurations(self, comb_parent: str | None = None) -> list[MappingConfiguration]:
        if comb_parent is None:
            rows = self._conn.execute(
                "SELECT doc FROM configurations ORDER BY id"
            ).fetchall()
        else:
            rows = self._conn.execute(
                "SELECT doc FROM configurations WHERE comb_parent = ? ORDER BY id",
                (comb_parent,),
            ).fetchall()
        return [_config_from_doc(r["doc"]) for r in rows]

    def add_combination_spec(self, spec_id: str, document: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO combination_specs(id, doc) VALUES(?, ?)",
                (spec_id, json.dumps(document)),
            )
            self._conn.commit()

    def get_combination_spec(self, spec_id: str) -> dict:
        row = self._conn.execute(
            "SELECT doc FROM combination_specs WHERE id = ?", (spec_id,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"combination spec {spec_id!r}")
        return json.loads(row["doc"])

    def list_combination_specs(self) -> list[dict]:
        rows = self._conn.execute("SELECT doc FROM combination_specs ORDER BY id").fetchall()
        return [json.loads(r["doc"]) for r in rows]

    # -- runs -----------------------------------------------------------------

    def _row_to_run(self, row: sqlite3.Row) -> RunRecord:
        return RunRecord(
            run_id=row["run_id"],
            config_id=row["config_id"],
            node_id=row["node_id"],
            cpu_type=row["cpu_type"],
            core_count=row["core_count"],
            status=row["status"],
            cpu_mean=row["cpu_mean"],
            cpu_max=row["cpu_max"],
            ram_max=row["ram_max"],
            traj_length=row["traj_length"],
            started_at=row["started_at"],
            finished_at=row["finished_at"],
            time_scale=row["time_scale"],
            reason=row["reason"],
            run_dir=row["run_dir"],
        )

    def get_run(self, run_id: str) -> RunRecord:
        row = self._conn.execute(
            "SELECT * FROM runs WHERE run_id = ?", (run_id,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"run {run_id!r}")
        return self._row_to_run(row)

    def list_runs(self, config_id: str | None = None) -> list[RunRecord]:
        if config_id is None:
            rows = self._conn.execute("SELECT * FROM runs ORDER BY run_id").fetchall()
        else:
            rows = self._conn.execute(
                "SELECT * FROM runs WHERE config_id = ? ORDER BY run_id", (config_id,)
            ).fetchall()
        return [self._row_to_run(r) for r in rows]

    def _ground_truth(self, config: MappingConfiguration) -> Trajectory:
        path = self.layout.ground_truth_path(config.dataset_id, config.sequence)
        return parse_trajectory(path.read_text())

    def _coverage_reference(self, gt: Trajectory, config: MappingConfiguration) -> Trajectory:
        """Ground-truth frames the run actually saw: decimated like the dataset."""
        rate = config.dataset_params.get("frame_rate")
        if rate is None:
            return gt
        dataset = self.get_dataset(config.dataset_id)
        if float(rate) >= dataset.native_rate:
            return gt
        n = max(1, round(dataset.native_rate / float(rate)))
        return Trajectory(gt.poses[::n])

    def record_failed_run(
        self,
        run_id: str,
        config_id: str,
        reason: str,
        node_id: str = "workstation",
        time_scale: float = 1.0,
    ) -> RunRecord:
        """Record a run that never produced a results directory."""
        now = time.time()
        with self._lock:
            existing = self._conn.execute(
                "SELECT * FROM runs WHERE run_id = ?", (run_id,)
            ).fetchone()
            if existing is not None:
                return self._row_to_run(existing)
            self._conn.execute(
                "INSERT INTO runs VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (run_id, config_id, node_id, platform.processor() or "unknown",
                 os.cpu_count() or 1, "failed", 0.0, 0.0, 0.0, None,
                 now, now, time_scale, reason, None),
            )
            self._conn.commit()
        return self.get_run(run_id)

    def ingest(
        self,
        run_dir: Path,
        config_id: str,
        run_id: str | None = None,
        node_id: str = "workstation",
        cpu_type: str | None = None,
        core_count: int | None = None,
    ) -> RunRecord:
        """Ingest one completed run directory; idempotent on the run id.

        The directory is the per-run workspace: it holds run_meta.json plus
        a results/ subdirectory with the sentinel (or failure marker), the
        trajectory and the profiling series.
        """
        run_dir = Path(run_dir)
        run_id = run_id or run_dir.name
        with self._lock:
            existing = self._conn.execute(
                "SELECT * FROM runs WHERE run_id = ?", (run_id,)
            ).fetchone()
            if existing is not None:
                return self._row_to_run(existing)

            config = self.get_configuration(config_id)
            results = run_dir / "results"
            sentinel = results / SENTINEL_FILENAME
            marker = results / FAILURE_MARKER_FILENAME
            if not sentinel.exists() and not marker.exists():
                raise CorruptResults(f"{results} has neither sentinel nor failure marker")

            meta: dict = {}
            meta_path = run_dir / "run_meta.json"
            if meta_path.exists():
                meta = json.loads(meta_path.read_text())

            cpu_mean = cpu_max = ram_max = 0.0
            profiling = results / PROFILING_FILENAME
            if profiling.exists():
                from .executor.runner import read_profiling, summarize_series

                cpu_mean, cpu_max, ram_max = summarize_series(read_profiling(profiling))

            status = "failed"
            traj_length: float | None = None
            reason = meta.get("reason")
            if sentinel.exists():
                traj_path = results / TRAJ_FILENAME
                try:
                    est = parse_trajectory(traj_path.read_text())
                except (OSError, TrajectoryError) as exc:
                    reason = f"MissingTrajectory: {exc}"
                else:
                    status = "finished"
                    gt = self._ground_truth(config)
                    reference = self._coverage_reference(gt, config)
                    traj_length = traj_length_factor(est, reference)
            elif marker.exists() and reason is None:
                reason = marker.read_text().strip()

            self._conn.execute(
                "INSERT INTO runs VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    run_id,
                    config_id,
                    node_id,
                    cpu_type or platform.processor() or "unknown",
                    core_count or os.cpu_count() or 1,
                    status,
                    cpu_mean,
                    cpu_max,
                    ram_max,
                    traj_length,
                    meta.get("started_at", time.time()),
                    meta.get("finished_at", time.time()),
                    meta.get("time_scale", 1.0),
                    reason,
                    str(run_dir),
                ),
            )
            self._conn.commit()
        return self.get_run(run_id)

    def import_runs(self, records: Iterable[RunRecord]) -> None:
        """Bulk-import run records (e.g. a downloaded result corpus)."""
        rows = [
            (r.run_id, r.config_id, r.node_id, r.cpu_type, r.core_count, r.status,
             r.cpu_mean, r.cpu_max, r.ram_max, r.traj_length, r.started_at,
             r.finished_at, r.time_scale, r.reason, r.run_dir)
            for r in records
        ]
        with self._lock:
            self._conn.executemany(
                "INSERT OR REPLACE INTO runs VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                rows,
            )
            self._conn.commit()

    def import_evaluations(self, records: Iterable[EvaluationRecord]) -> None:
        rows = []
        for r in records:
            doc = {
                "ate": r.ate.as_dict(),
                "rpe": r.rpe.as_dict() if r.rpe else None,
                "aligned": r.aligned,
                "with_scale": r.with_scale,
                "evaluator_version": r.evaluator_version,
            }
            rows.append((r.run_id, json.dumps(doc)))
        with self._lock:
            self._conn.executemany(
                "INSERT OR REPLACE INTO evaluations(run_id, doc) VALUES(?, ?)", rows
            )
            self._conn.commit()

    # -- evaluation -----------------------------------------------------------

    def get_evaluation(self, run_id: str) -> EvaluationRecord | None:
        row = self._conn.execute(
            "SELECT doc FROM evaluations WHERE run_id = ?", (run_id,)
        ).fetchone()
        if row is None:
            return None
        d = json.loads(row["doc"])
        return EvaluationRecord(
            run_id=run_id,
            ate=MetricStats.from_dict(d["ate"]),
            rpe=MetricStats.from_dict(d["rpe"]) if d.get("rpe") else None,
            aligned=d["aligned"],
            with_scale=d["with_scale"],
            evaluator_version=d["evaluator_version"],
        )

    def list_evaluations(self) -> list[EvaluationRecord]:
        rows = self._conn.execute("SELECT run_id FROM evaluations ORDER BY run_id").fetchall()
        return [self.get_evaluation(r["run_id"]) for r in rows]

    def unevaluated_run_ids(self) -> list[str]:
        rows = self._conn.execute(
            "SELECT run_id FROM runs WHERE status = 'finished' AND run_id NOT IN"
            " (SELECT run_id FROM evaluations) ORDER BY run_id"
        ).fetchall()
        return [r["run_id"] for r in rows]

    def evaluate(self, run_id: str, options: EvalOptions = EvalOptions()) -> EvaluationRecord:
        """Run the trajectory-evaluation pipeline for one finished run."""
        record = self.get_run(run_id)
        if record.status != "finished":
            raise RunNotFinished(f"run {run_id!r} is {record.status}")
        if self.get_evaluation(run_id) is not None and not options.force:
            raise AlreadyEvaluated(run_id)
        if record.run_dir is None:
            raise CorruptResults(f"run {run_id!r} has no results directory")

        config = self.get_configuration(record.config_id)
        results = Path(record.run_dir) / "results"
        est = parse_trajectory((results / TRAJ_FILENAME).read_text())
        gt = self._ground_truth(config)

        pairs = associate(est, gt, options.max_time_diff)
        if options.align:
            transform = align(pairs, with_scale=options.with_scale)
        else:
            from .trajeval import SimilarityTransform

            transform = SimilarityTransform.identity()
        ate_stats = ape(pairs, transform)
        try:
            rpe_stats: MetricStats | None = rpe(pairs, options.rpe_delta)
        except TrajectoryError:
            rpe_stats = None

        self._write_eval_bundle(Path(record.run_dir), pairs, transform, ate_stats, rpe_stats, options)

        doc = {
            "ate": ate_stats.as_dict(),
            "rpe": rpe_stats.as_dict() if rpe_stats else None,
            "aligned": options.align,
            "with_scale": options.with_scale,
            "evaluator_version": EVALUATOR_VERSION,
        }
        with self._lock:
            if self._conn.execute(
                "SELECT 1 FROM runs WHERE run_id = ?", (run_id,)
            ).fetchone() is None:
                raise UnknownEntity(f"run {run_id!r}")
            self._conn.execute(
                "INSERT OR REPLACE INTO evaluations(run_id, doc) VALUES(?, ?)",
                (run_id, json.dumps(doc)),
            )
            self._conn.commit()
        return self.get_evaluation(run_id)

    def evaluate_all_unevaluated(self, options: EvalOptions = EvalOptions()) -> list[EvaluationRecord]:
        out = []
        for run_id in self.unevaluated_run_ids():
            out.append(self.evaluate(run_id, options))
        return out

    @staticmethod
    def _write_eval_bundle(run_dir, pairs, transform, ate_stats, rpe_stats, options) -> None:
        """Per-run result bundle: statistics document plus plot-data tables."""
        import csv as _csv

        eval_dir = Path(run_dir) / "eval"
        eval_dir.mkdir(exist_ok=True)
        (eval_dir / "stats.json").write_text(
            json.dumps(
                {
                    "ate": ate_stats.as_dict(),
                    "rpe": rpe_stats.as_dict() if rpe_stats else None,
                    "aligned": options.align,
                    "with_scale": options.with_scale,
                    "evaluator_version": EVALUATOR_VERSION,
                },
                indent=2,
            )
        )
        mapped = transform.apply(pairs.est_positions)
        with open(eval_dir / "ape_errors.csv", "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["t", "error_m"])
            for (est_pose, _), row in zip(pairs.pairs, mapped):
                err = math.dist(tuple(row), tuple(_.position))
                writer.writerow([f"{est_pose.t:.6f}", f"{err:.9f}"])
        with open(eval_dir / "trajectories.csv", "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["t", "est_x", "est_y", "est_z", "ref_x", "ref_y", "ref_z"])
            for (est_pose, ref_pose), row in zip(pairs.pairs, mapped):
                writer.writerow(
                    [f"{est_pose.t:.6f}"]
                    + [f"{v:.9f}" for v in row]
                    + [f"{v:.9f}" for v in ref_pose.position]
                )

    # -- search ---------------------------------------------------------------

    def _known_param_keys(self) -> set[str]:
        keys: set[str] = set()
        for alg in self.list_algorithms():
            keys.update(p.key for p in alg.parameter_template)
        for config in self.list_configurations():
            keys.update(config.algorithm_params)
            keys.update(config.dataset_params)
        return keys

    def _param_kind(self, config: MappingConfiguration, key: str) -> str | None:
        try:
            alg = self.get_algorithm(config.algorithm_id)
        except UnknownEntity:
            alg = None
        if alg is not None:
            kind = alg.kind_of(key)
            if kind is not None:
                return kind
        value = config.algorithm_params.get(key, config.dataset_params.get(key))
        if isinstance(value, bool):
            return "flag"
        if isinstance(value, (int, float)):
            return "real"
        if isinstance(value, str):
            return "text"
        return None

    def _config_matches(self, config: MappingConfiguration, query: SearchQuery,
                        run: RunRecord | None = None) -> bool:
        if query.algorithm_ids and config.algorithm_id not in query.algorithm_ids:
            return False
        if query.dataset_ids and config.dataset_id not in query.dataset_ids:
            return False
        for key, op, value_text in query.param_predicates:
            if run is not None and key in RUN_METRICS:
                actual = getattr(run, key)
                if actual is None:
                    return False
                try:
                    bound = float(value_text)
                except ValueError:
                    raise TypeMismatch(f"{key} compares numerically, got {value_text!r}")
                if not _compare(op, actual, bound):
                    return False
                continue
            if key in config.algorithm_params:
                actual = config.algorithm_params[key]
            elif key in config.dataset_params:
                actual = config.dataset_params[key]
            else:
                return False
            kind = self._param_kind(config, key)
            if kind in ("integer", "real", "flag") or isinstance(actual, (int, float)):
                try:
                    if kind == "flag" or isinstance(actual, bool):
                        expected: Any = value_text.strip().lower() in ("true", "1", "yes")
                        if op != "=":
                            raise TypeMismatch(f"flag {key} supports '=' only")
                    else:
                        expected = float(value_text)
                        actual = float(actual)
                except ValueError:
                    raise TypeMismatch(
                        f"{key} is {kind}, cannot compare with {value_text!r}"
                    )
                if not _compare(op, actual, expected):
                    return False
            else:
                if op != "=":
                    raise TypeMismatch(f"text parameter {key} supports '=' only")
                if str(actual) != value_text:
                    return False
        return True

    def _validate_predicates(self, query: SearchQuery, allow_run_metrics: bool) -> None:
        known = self._known_param_keys()
        for key, op, _ in query.param_predicates:
            if key in known:
                continue
            if allow_run_metrics and key in RUN_METRICS:
                continue
            raise UnknownKey(f"unknown parameter {key!r}")
        for metric, _, _ in query.metric_bounds:
            if metric not in ALL_METRICS:
                raise UnknownKey(f"unknown metric {metric!r}")

    def search(self, query: SearchQuery, target: str = "configurations") -> list[str]:
        """Conjunctive filter; returns ids in ascending order.

        target "configurations" yields configuration ids; "evaluations"
        yields run ids of finished+evaluated runs satisfying the metric
        bounds as well.
        """
        if target not in ("configurations", "evaluations"):
            raise StoreError(f"unknown search target {target!r}")
        self._validate_predicates(query, allow_run_metrics=(target == "evaluations"))

        if target == "configurations":
            if query.metric_bounds:
                raise StoreError("metric bounds only apply to evaluation searches")
            out = [
                c.id
                for c in self.list_configurations()
                if self._config_matches(c, query)
            ]
            return sorted(out)

        configs = {c.id: c for c in self.list_configurations()}
        out = []
        for run in self.list_runs():
            config = configs.get(run.config_id)
            if config is None:
                continue
            if not self._config_matches(config, query, run=run):
                continue
            evaluation = self.get_evaluation(run.run_id)
            ok = True
            for metric, lo, hi in query.metric_bounds:
                if metric in RUN_METRICS:
                    value = getattr(run, metric)
                else:
                    value = evaluation.metric(metric) if evaluation else None
                if value is None:
                    ok = False
                    break
                if lo is not None and value < lo:
                    ok = False
                    break
                if hi is not None and value > hi:
                    ok = False
                    break
            if ok:
                out.append(run.run_id)
        return sorted(out)

    # -- exports ----------------------------------------------------------------

    def dump_catalog(self) -> dict:
        return {
            "algorithms": [json.loads(_algorithm_doc(a)) for a in self.list_algorithms()],
            "datasets": [json.loads(_dataset_doc(d)) for d in self.list_datasets()],
            "configurations": [
                json.loads(_config_doc(c)) for c in self.list_configurations()
            ],
        }

    def snapshot(self) -> dict:
        """Full content snapshot, for change detection around rejected calls."""
        tables = ("algorithms", "datasets", "configurations", "combination_specs",
                  "runs", "evaluations", "reports")
        out = {}
        for table in tables:
            rows = self._conn.execute(f"SELECT * FROM {table}").fetchall()
            out[table] = sorted(tuple(row) for row in rows)
        return out

    EXPORT_COLUMNS = (
        "run_id", "config_id", "algorithm_id", "dataset_id", "sequence", "status",
        "traj_length", "cpu_mean", "cpu_max", "ram_max",
    ) + EVAL_METRICS

    def export_evaluations_csv(self, run_ids: Sequence[str], path: Path) -> Path:
        """Per-query CSV export with the documented column order."""
        import csv as _csv

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(self.EXPORT_COLUMNS)
            for run_id in run_ids:
                run = self.get_run(run_id)
                config = self.get_configuration(run.config_id)
                evaluation = self.get_evaluation(run_id)
                row: list[Any] = [
                    run.run_id, config.id, config.algorithm_id, config.dataset_id,
                    config.sequence, run.status, run.traj_length,
                    run.cpu_mean, run.cpu_max, run.ram_max,
                ]
                for metric in EVAL_METRICS:
                    value = evaluation.metric(metric) if evaluation else None
                    row.append("" if value is None else value)
                writer.writerow(row)
        return path

    # -- reports (persisted by the analysis module) ------------------------------

    def save_report(self, report_id: str, url_token: str, document: dict,
                    hidden: bool = False) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO reports(report_id, url_token, doc, created_at, hidden)"
                " VALUES(?,?,?,?,?)",
                (report_id, url_token, json.dumps(document), time.time(), int(hidden)),
            )
            self._conn.commit()

    def get_report(self, report_id: str) -> dict:
        row = self._conn.execute(
            "SELECT doc FROM reports WHERE report_id = ?", (report_id,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"report {report_id!r}")
        return json.loads(row["doc"])

    def get_report_by_token(self, url_token: str) -> dict:
        row = self._conn.execute(
            "SELECT doc FROM reports WHERE url_token = ?", (url_token,)
        ).fetchone()
        if row is None:
            raise UnknownEntity(f"report token {url_token!r}")
        return json.loads(row["doc"])

    def list_reports(self, include_hidden: bool = False) -> list[dict]:
        if include_hidden:
            rows = self._conn.execute(
                "SELECT doc FROM reports ORDER BY report_id"
            ).fetchall()
        else:
            rows = self._conn.execute(
                "SELECT doc FROM reports WHERE hidden = 0 ORDER BY report_id"
            ).fetchall()
        return [json.loads(r["doc"]) for r in rows]
