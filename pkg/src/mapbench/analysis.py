"""Meta analysis: spec parsing, run-selection algebra, analysis modes.

An analysis document names a run selection (explicit configuration ids,
combination-spec ids, and/or limitation rules, combined through set
operations) and switches on one or more analysis modes.  Outputs are plot
-data tables; rendering is the console's job.  Reports are immutable and
addressable by an opaque URL token.
"""

from __future__ import annotations

import math
import re
import secrets
import statistics
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .layout import TRAJ_FILENAME
from .store import (
    ALL_METRICS,
    EVAL_METRICS,
    RUN_METRICS,
    EvaluationRecord,
    RunRecord,
    SearchQuery,
    Store,
    StoreError,
    parse_predicate,
)
from .trajeval import (
    FAILED,
    SUCCESS,
    align,
    associate,
    classify_run,
    parse_trajectory,
)

MODE_TRAJECTORY = "1_trajectory_comparison"
MODE_METRIC_DIAGRAMS = "2_accuracy_metric_diagrams"
MODE_METRICS_COMPARISON = "3_accuracy_metrics_comparison"
MODE_HISTOGRAMS = "4_accuracy_histograms"
MODE_CPU_RAM = "5_cpu_ram_usage_comparison"
MODE_SCATTER_2D = "6_2d_scatter"
MODE_SCATTER_3D = "7_3d_scatter"
# grouped per-config statistics under its own name, for nondeterministic algorithms
MODE_REPEATABILITY = "repeatability_analysis"

ALL_MODES = (
    MODE_TRAJECTORY,
    MODE_METRIC_DIAGRAMS,
    MODE_METRICS_COMPARISON,
    MODE_HISTOGRAMS,
    MODE_CPU_RAM,
    MODE_SCATTER_2D,
    MODE_SCATTER_3D,
    MODE_REPEATABILITY,
)

SET_OPS = ("U", "I", "-")

FAILED_PLACEMENT_FACTOR = 1.2

_ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth")

_BOUND_KEY_RE = re.compile(r"^(?P<metric>[a-z_]+?)_(?P<kind>nolimitation|minimum|maximum|maximun)$")


class AnalysisError(Exception):
    pass


class UnknownMode(AnalysisError):
    pass


class BadCombinationRule(AnalysisError):
    pass


class MixedDatasetTrajectoryComparison(AnalysisError):
    pass


@dataclass(frozen=True)
class LimitationRules:
    algorithm_ids: tuple[str, ...] = ()
    dataset_ids: tuple[str, ...] = ()
    param_predicates: tuple[tuple[str, str, str], ...] = ()
    metric_bounds: tuple[tuple[str, float | None, float | None], ...] = ()

    def is_empty(self) -> bool:
        return not (self.algorithm_ids or self.dataset_ids or self.param_predicates
                    or self.metric_bounds)


@dataclass(frozen=True)
class SelectionSpec:
    """Sources: 0 = explicit config ids, 1 = combination-spec ids, 2 = rules."""

    config_ids: tuple[str, ...] = ()
    comb_ids: tuple[str, ...] = ()
    limitation: LimitationRules = LimitationRules()
    # clauses: (sources, ops); ops beyond len(sources)-1 is the connector
    # joining this clause's value to the next clause
    rule: tuple[tuple[tuple[int, ...], tuple[str, ...]], ...] = ()


@dataclass(frozen=True)
class AnalysisSpec:
    group_name: str
    group_description: str
    modes: Mapping[str, Mapping[str, Any]]
    selection: SelectionSpec
    min_traj_length: float = 0.75
    max_ate: float | None = None

    def __post_init__(self) -> None:
        if not self.group_name:
            raise AnalysisError("group_name must be non-empty")
        if not self.modes:
            raise AnalysisError("choose at least one analysis mode")
        for mode in self.modes:
            if mode not in ALL_MODES:
                raise UnknownMode(mode)


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


@dataclass(frozen=True)
class AnalysisReport:
    report_id: str
    url_token: str
    group_name: str
    group_description: str
    run_ids: tuple[str, ...]
    outputs: Mapping[str, Mapping[str, Table]]
    notices: tuple[str, ...]
    created_at: float
    export_dir: str | None

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "url_token": self.url_token,
            "group_name": self.group_name,
            "group_description": self.group_description,
            "run_ids": list(self.run_ids),
            "outputs": {
                mode: {name: table.to_dict() for name, table in tables.items()}
                for mode, tables in self.outputs.items()
            },
            "notices": list(self.notices),
            "created_at": self.created_at,
            "export_dir": self.export_dir,
        }


# --- spec parsing -------------------------------------------------------------


def _parse_bounds(evaluation_value: Mapping[str, Any]) -> tuple[tuple[str, float | None, float | None], ...]:
    bounds: dict[str, list[float | None]] = {}
    disabled: set[str] = set()
    for key, value in (evaluation_value or {}).items():
        m = _BOUND_KEY_RE.match(key)
        if not m or m.group("metric") not in ALL_METRICS:
            raise AnalysisError(f"unknown evaluation bound {key!r}")
        metric = m.group("metric")
        kind = m.group("kind")
        if kind == "nolimitation":
            if value in (1, True, "1"):
                disabled.add(metric)
            continue
        if value is None or value == "":
            continue
        slot = bounds.setdefault(metric, [None, None])
        slot[0 if kind == "minimum" else 1] = float(value)
    return tuple(
        (metric, lo, hi)
        for metric, (lo, hi) in sorted(bounds.items())
        if metric not in disabled and (lo is not None or hi is not None)
    )


def _parse_rule(raw: Mapping[str, Any] | None) -> tuple[tuple[tuple[int, ...], tuple[str, ...]], ...]:
    if not raw:
        return ()
    clauses = []
    for ordinal in _ORDINALS:
        one = raw.get(f"{ordinal}_one")
        ops = raw.get(f"{ordinal}_rule", [])
        if one is None:
            if ops:
                raise BadCombinationRule(f"{ordinal}_rule without {ordinal}_one")
            continue
        sources = tuple(int(s) for s in one)
        for source in sources:
            if source not in (0, 1, 2):
                raise BadCombinationRule(f"unknown selection source {source}")
        op_tuple = tuple(str(op) for op in ops)
        for op in op_tuple:
            if op not in SET_OPS:
                raise BadCombinationRule(f"unknown set operation {op!r}")
        if len(op_tuple) not in (len(sources) - 1, len(sources)):
            raise BadCombinationRule(
                f"{ordinal}: {len(sources)} sources take {len(sources) - 1} internal"
                f" operations plus an optional connector, got {len(op_tuple)}"
            )
        clauses.append((sources, op_tuple))
    if not clauses:
        raise BadCombinationRule("combination_rule has no clauses")
    for (sources, ops) in clauses[:-1]:
        if len(ops) != len(sources):
            raise BadCombinationRule("non-final clause is missing its connector operation")
    return tuple(clauses)


def parse_analysis_spec(document: str | Mapping[str, Any]) -> AnalysisSpec:
    """Parse an analysis document (YAML text or mapping).

    Unset evaluation bounds mean unbounded; "<metric>_nolimitation: 1"
    disables that metric's bounds even if values are present.
    """
    doc = yaml.safe_load(document) if isinstance(document, str) else dict(document)
    if not isinstance(doc, Mapping):
        raise AnalysisError("analysis spec must be a mapping")

    form = doc.get("evaluation_form") or {}
    modes: dict[str, dict] = {}
    for key, value in form.items():
        if key in ("algorithm_dataset_type", "min_traj_length", "max_ate"):
            continue
        if key not in ALL_MODES:
            raise UnknownMode(key)
        options = dict(value) if isinstance(value, Mapping) else {}
        if options.pop("choose", 1) in (1, True, "1"):
            modes[key] = options

    choose = doc.get("configuration_choose") or {}
    limitation_raw = choose.get("limitation_rules") or {}
    predicates = tuple(
        parse_predicate(text) for text in (limitation_raw.get("parameters_value") or [])
    )
    limitation = LimitationRules(
        algorithm_ids=tuple(str(a) for a in (limitation_raw.get("algorithm_id") or [])),
        dataset_ids=tuple(str(d) for d in (limitation_raw.get("dataset_id") or [])),
        param_predicates=predicates,
        metric_bounds=_parse_bounds(limitation_raw.get("evaluation_value") or {}),
    )
    selection = SelectionSpec(
        config_ids=tuple(str(c) for c in (choose.get("configuration_id") or [])),
        comb_ids=tuple(str(c) for c in (choose.get("comb_configuration_id") or [])),
        limitation=limitation,
        rule=_parse_rule(choose.get("combination_rule")),
    )
    return AnalysisSpec(
        group_name=str(doc.get("group_name", "")),
        group_description=str(doc.get("group_description", "")),
        modes=modes,
        selection=selection,
        min_traj_length=float(form.get("min_traj_length", 0.75)),
        max_ate=(None if form.get("max_ate") in (None, "") else float(form["max_ate"])),
    )


# --- selection resolution -------------------------------------------------------


def _source_sets(selection: SelectionSpec, store: Store) -> list[set[str]]:
    runs = store.list_runs()
    by_config: dict[str, set[str]] = {}
    for run in runs:
        by_config.setdefault(run.config_id, set()).add(run.run_id)

    explicit: set[str] = set()
    for config_id in selection.config_ids:
        explicit |= by_config.get(config_id, set())

    from_combs: set[str] = set()
    for comb_id in selection.comb_ids:
        for config in store.list_configurations(comb_parent=comb_id):
            from_combs |= by_config.get(config.id, set())

    limited: set[str] = set()
    if not selection.limitation.is_empty():
        lim = selection.limitation
        query = SearchQuery(
            algorithm_ids=frozenset(lim.algorithm_ids),
            dataset_ids=frozenset(lim.dataset_ids),
            param_predicates=lim.param_predicates,
            metric_bounds=lim.metric_bounds,
        )
        limited = set(store.search(query, target="evaluations"))
    return [explicit, from_combs, limited]


def _apply_op(op: str, left: set[str], right: set[str]) -> set[str]:
    if op == "U":
        return left | right
    if op == "I":
        return left & right
    if op == "-":
        return left - right
    raise BadCombinationRule(f"unknown set operation {op!r}")


def resolve_selection(selection: SelectionSpec, store: Store) -> set[str]:
    """Evaluate the selection to a run-id set.

    Each clause combines its sources left to right with its internal
    operations; a clause carrying one extra operation uses it to join its
    value to the following clause.  Without an explicit rule, all non-empty
    sources are united.
    """
    sources = _source_sets(selection, store)
    if not selection.rule:
        declared = []
        if selection.config_ids:
            declared.append(sources[0])
        if selection.comb_ids:
            declared.append(sources[1])
        if not selection.limitation.is_empty():
            declared.append(sources[2])
        out: set[str] = set()
        for s in declared:
            out |= s
        return out

    def clause_value(clause: tuple[tuple[int, ...], tuple[str, ...]]) -> tuple[set[str], str | None]:
        source_ids, ops = clause
        value = set(sources[source_ids[0]])
        internal = ops[: len(source_ids) - 1]
        for source_id, op in zip(source_ids[1:], internal):
            value = _apply_op(op, value, sources[source_id])
        connector = ops[len(source_ids) - 1] if len(ops) == len(source_ids) else None
        return value, connector

    acc, connector = clause_value(selection.rule[0])
    for clause in selection.rule[1:]:
        value, next_connector = clause_value(clause)
        if connector is None:
            raise BadCombinationRule("clause missing connector to the next clause")
        acc = _apply_op(connector, acc, value)
        connector = next_connector
    return acc


# --- analysis ------------------------------------------------------------------


@dataclass
class _RunView:
    run: RunRecord
    config_id: str
    evaluation: EvaluationRecord | None
    classification: str


def _classify(run: RunRecord, evaluation: EvaluationRecord | None,
              min_traj_length: float, max_ate: float | None) -> str:
    if run.status != "finished":
        return FAILED
    factor = run.traj_length if run.traj_length is not None else 0.0
    stats = evaluation.ate if evaluation is not None else None
    return classify_run(stats, factor, min_factor=min_traj_length, max_ate=max_ate)


def _axis_value(view: _RunView, store: Store, axis: str) -> float | None:
    if axis in RUN_METRICS:
        value = getattr(view.run, axis)
        return None if value is None else float(value)
    if axis in EVAL_METRICS:
        if view.evaluation is None:
            return None
        return view.evaluation.metric(axis)
    config = store.get_configuration(view.config_id)
    value = config.algorithm_params.get(axis, config.dataset_params.get(axis))
    if value is None or isinstance(value, str):
        return None
    return float(value)


def repeatability_stats(
    groups: Mapping[str, Sequence[Mapping[str, float]]]
) -> dict[str, dict[str, tuple[float, float, int]]]:
    """Per-config, per-metric (population mean, population std, count)."""
    out: dict[str, dict[str, tuple[float, float, int]]] = {}
    for config_id, samples in groups.items():
        metrics: dict[str, list[float]] = {}
        for sample in samples:
            for metric, value in sample.items():
                metrics.setdefault(metric, []).append(float(value))
        out[config_id] = {
            metric: (
                statistics.fmean(values),
                statistics.pstdev(values),
                len(values),
            )
            for metric, values in metrics.items()
        }
    return out


class AnalysisEngine:
    """Executes analysis specs over a store snapshot."""

    def __init__(self, store: Store) -> None:
        self.store = store

    # -- helpers ---------------------------------------------------------------

    def _views(self, run_ids: Iterable[str], spec: AnalysisSpec) -> list[_RunView]:
        views = []
        for run_id in sorted(run_ids):
            run = self.store.get_run(run_id)
            evaluation = self.store.get_evaluation(run_id)
            views.append(
                _RunView(
                    run=run,
                    config_id=run.config_id,
                    evaluation=evaluation,
                    classification=_classify(
                        run, evaluation, spec.min_traj_length, spec.max_ate
                    ),
                )
            )
        return views

    @staticmethod
    def _first_per_config(views: list[_RunView]) -> list[_RunView]:
        seen: set[str] = set()
        out = []
        for view in views:  # views are run-id ordered
            if view.config_id in seen:
                continue
            seen.add(view.config_id)
            out.append(view)
        return out

    def _placement_value(self, views: list[_RunView], metric: str) -> float | None:
        values = [
            v.evaluation.metric(metric)
            for v in views
            if v.classification == SUCCESS and v.evaluation is not None
            and v.evaluation.metric(metric) is not None
        ]
        if not values:
            return None
        return FAILED_PLACEMENT_FACTOR * max(values)

    # -- modes -----------------------------------------------------------------

    def _mode_trajectory(self, views, options, notices) -> dict[str, Table]:
        firsts = [v for v in self._first_per_config(views) if v.run.status == "finished"]
        datasets = set()
        for view in firsts:
            config = self.store.get_configuration(view.config_id)
            datasets.add((config.dataset_id, config.sequence))
        if len(datasets) > 1:
            raise MixedDatasetTrajectoryComparison(
                f"trajectory comparison needs one dataset, got {sorted(datasets)}"
            )
        rows = []
        reference_done = False
        for view in firsts:
            if view.run.run_dir is None:
                notices.append(f"run {view.run.run_id} has no stored results; skipped")
                continue
            config = self.store.get_configuration(view.config_id)
            est = parse_trajectory(
                (Path(view.run.run_dir) / "results" / TRAJ_FILENAME).read_text()
            )
            gt = self.store._ground_truth(config)
            pairs = associate(est, gt)
            transform = align(pairs)
            mapped = transform.apply(pairs.est_positions)
            if not reference_done:
                for pose in gt.poses:
                    rows.append(("__reference__", round(pose.t, 6),
                                 *(round(float(x), 9) for x in pose.position)))
                reference_done = True
            for (est_pose, _), xyz in zip(pairs.pairs, mapped):
                rows.append((view.run.run_id, round(est_pose.t, 6),
                             *(round(float(x), 9) for x in xyz)))
        return {"trajectories": Table(("run_id", "t", "x", "y", "z"), tuple(rows))}

    def _mode_metric_diagrams(self, views, options, notices) -> dict[str, Table]:
        rows = []
        for view in self._first_per_config(views):
            if view.evaluation is None:
                continue
            for metric in EVAL_METRICS:
                value = view.evaluation.metric(metric)
                if value is not None:
                    rows.append((view.config_id, view.run.run_id, metric, value))
        return {"metrics": Table(("config_id", "run_id", "metric", "value"), tuple(rows))}

    def _mode_metrics_comparison(self, views, options, notices) -> dict[str, Table]:
        groups: dict[str, list[Mapping[str, float]]] = {}
        for view in views:
            if view.evaluation is None:
                continue
            sample = {
                metric: view.evaluation.metric(metric)
                for metric in EVAL_METRICS
                if view.evaluation.metric(metric) is not None
            }
            sample.update(
                {
                    metric: getattr(view.run, metric)
                    for metric in ("cpu_mean", "cpu_max", "ram_max")
                    if getattr(view.run, metric) is not None
                }
            )
            groups.setdefault(view.config_id, []).append(sample)
        stats = repeatability_stats(groups)
        rows = []
        for config_id in sorted(stats):
            for metric in sorted(stats[config_id]):
                mean, std, n = stats[config_id][metric]
                rows.append((config_id, metric, mean, std, n))
        return {"grouped_stats": Table(("config_id", "metric", "mean", "std", "n"),
                                       tuple(rows))}

    def _mode_histograms(self, views, options, notices) -> dict[str, Table]:
        metric = str(options.get("metric", "ate_rmse"))
        bins = int(options.get("bins", 10))
        values = []
        for view in self._first_per_config(views):
            if view.evaluation is not None:
                value = view.evaluation.metric(metric)
                if value is not None:
                    values.append(value)
        if not values:
            notices.append(f"histogram over {metric}: no evaluated runs")
            return {"histogram": Table(("bin_lo", "bin_hi", "count"), ())}
        counts, edges = np.histogram(values, bins=bins)
        rows = tuple(
            (float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(len(counts))
        )
        return {"histogram": Table(("bin_lo", "bin_hi", "count"), rows)}

    def _mode_cpu_ram(self, views, options, notices) -> dict[str, Table]:
        rows = []
        for view in self._first_per_config(views):
            rows.append(
                (view.config_id, view.run.run_id, view.run.cpu_mean,
                 view.run.cpu_max, view.run.ram_max)
            )
        return {"usage": Table(("config_id", "run_id", "cpu_mean", "cpu_max", "ram_max"),
                               tuple(rows))}

    def _mode_scatter(self, views, options, notices, axes: tuple[str, ...]) -> dict[str, Table]:
        firsts = self._first_per_config(views)
        placements: dict[str, float | None] = {}
        rows = []
        omitted_failed = 0
        for view in firsts:
            coords = []
            usable = True
            for axis in axes:
                # every failed run lands at the penalty position on ATE axes,
                # even when a (misleading) low-coverage ATE exists for it
                if view.classification == FAILED and axis.startswith("ate_"):
                    if axis not in placements:
                        placements[axis] = self._placement_value(views, axis)
                    value = placements[axis]
                    if value is None:
                        omitted_failed += 1
                        usable = False
                        break
                else:
                    value = _axis_value(view, self.store, axis)
                    if value is None:
                        usable = False
                        if view.classification == FAILED:
                            omitted_failed += 1
                        else:
                            notices.append(
                                f"run {view.run.run_id}: no value for axis {axis!r}; skipped"
                            )
                        break
                coords.append(value)
            if usable:
                rows.append((*coords, view.run.run_id, view.classification))
        if omitted_failed:
            notices.append(
                f"{omitted_failed} failed run(s) omitted: no successful runs define"
                " the placement baseline"
            )
        columns = tuple(["x", "y", "z"][: len(axes)]) + ("run_id", "status")
        return {"scatter": Table(columns, tuple(rows))}

    # -- entry point -------------------------------------------------------------

    def run_analysis(self, spec: AnalysisSpec, export_root: Path | None = None) -> AnalysisReport:
        run_ids = resolve_selection(spec.selection, self.store)
        notices: list[str] = []
        if not run_ids:
            notices.append("selection resolved to zero runs")
        views = self._views(run_ids, spec)

        outputs: dict[str, dict[str, Table]] = {}
        for mode, options in spec.modes.items():
            if mode == MODE_TRAJECTORY:
                outputs[mode] = self._mode_trajectory(views, options, notices)
            elif mode == MODE_METRIC_DIAGRAMS:
                outputs[mode] = self._mode_metric_diagrams(views, options, notices)
            elif mode in (MODE_METRICS_COMPARISON, MODE_REPEATABILITY):
                outputs[mode] = self._mode_metrics_comparison(views, options, notices)
            elif mode == MODE_HISTOGRAMS:
                outputs[mode] = self._mode_histograms(views, options, notices)
            elif mode == MODE_CPU_RAM:
                outputs[mode] = self._mode_cpu_ram(views, options, notices)
            elif mode == MODE_SCATTER_2D:
                axes = (str(options.get("x", "cpu_mean")), str(options.get("y", "ate_rmse")))
                outputs[mode] = self._mode_scatter(views, options, notices, axes)
            elif mode == MODE_SCATTER_3D:
                axes = (
                    str(options.get("x", "frame_rate")),
                    str(options.get("y", "resolution_factor")),
                    str(options.get("z", "ate_rmse")),
                )
                outputs[mode] = self._mode_scatter(views, options, notices, axes)
            else:  # pragma: no cover - guarded by AnalysisSpec validation
                raise UnknownMode(mode)

        report = AnalysisReport(
            report_id=f"an-{uuid.uuid4().hex[:12]}",
            url_token=secrets.token_hex(16),
            group_name=spec.group_name,
            group_description=spec.group_description,
            run_ids=tuple(sorted(run_ids)),
            outputs=outputs,
            notices=tuple(notices),
            created_at=time.time(),
            export_dir=None,
        )
        if export_root is not None:
            export_dir = export_raw(report, Path(export_root) / report.report_id)
            report = AnalysisReport(**{**report.__dict__, "export_dir": str(export_dir)})
        return report


def export_raw(report: AnalysisReport, directory: Path) -> Path:
    """One CSV per mode output table; header-only when a table is empty."""
    import csv

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for mode, tables in report.outputs.items():
        for name, table in tables.items():
            with open(directory / f"{mode}__{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(table.columns)
                writer.writerows(table.rows)
    return directory


def report_from_dict(doc: dict) -> AnalysisReport:
    outputs = {
        mode: {
            name: Table(tuple(t["columns"]), tuple(tuple(r) for r in t["rows"]))
            for name, t in tables.items()
        }
        for mode, tables in doc["outputs"].items()
    }
    return AnalysisReport(
        report_id=doc["report_id"],
        url_token=doc["url_token"],
        group_name=doc["group_name"],
        group_description=doc["group_description"],
        run_ids=tuple(doc["run_ids"]),
        outputs=outputs,
        notices=tuple(doc["notices"]),
        created_at=doc["created_at"],
        export_dir=doc.get("export_dir"),
    )
