"""HTTP+JSON API over one campaign suite, with deployment-mode gating.

Every response carries a docs_url pointing at the documentation page for
that resource.  In view_only mode every mutating endpoint is rejected
before it can touch the store; analysis creation stays available unless
no_new_analysis is set, and reports created in view_only mode are hidden
from listings while remaining reachable through their URL token.
"""

from __future__ import annotations

import json
from importlib import resources as importlib_resources
from typing import Any, Mapping

from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import JSONResponse, PlainTextResponse

from .. import __version__
from ..analysis import AnalysisError, report_from_dict
from ..config import (
    AlgorithmSpec,
    ConfigError,
    DatasetSpec,
    Parameter,
    config_from_document,
    config_to_document,
)
from ..executor import ExecutorError
from ..layout import PROFILING_FILENAME, TRAJ_FILENAME
from ..scheduler import (
    SchedulerError,
    Task,
    cost_model_from_document,
    network_transfers_of_resource_set,
    plan_cloud,
    plan_cluster,
    render_subtask_manifest,
    simulate,
    transfer_cost,
)
from ..store import (
    EvalOptions,
    RunRecord,
    SearchQuery,
    StoreError,
    UnknownEntity,
    parse_predicate,
)
from ..suite import Suite
from ..trajeval import TrajectoryError, parse_trajectory
from .deployment import DeploymentConfig

class ModeViolation(Exception):
    pass


_NOT_FOUND = (UnknownEntity,)
_BAD_REQUEST = (ConfigError, StoreError, AnalysisError, SchedulerError,
                TrajectoryError, ExecutorError, ValueError, KeyError)


def _run_doc(record: RunRecord) -> dict:
    return {
        "run_id": record.run_id,
        "config_id": record.config_id,
        "node_id": record.node_id,
        "cpu_type": record.cpu_type,
        "core_count": record.core_count,
        "status": record.status,
        "cpu_mean": record.cpu_mean,
        "cpu_max": record.cpu_max,
        "ram_max": record.ram_max,
        "traj_length": record.traj_length,
        "started_at": record.started_at,
        "finished_at": record.finished_at,
        "time_scale": record.time_scale,
        "reason": record.reason,
    }


def _evaluation_doc(record) -> dict:
    return {
        "run_id": record.run_id,
        "ate": record.ate.as_dict(),
        "rpe": record.rpe.as_dict() if record.rpe else None,
        "aligned": record.aligned,
        "with_scale": record.with_scale,
        "evaluator_version": record.evaluator_version,
    }


def _algorithm_doc(spec: AlgorithmSpec) -> dict:
    return {
        "id": spec.id,
        "name": spec.name,
        "sensor_modes": sorted(spec.sensor_modes),
        "image_ref": spec.image_ref,
        "parameter_template": [
            {"key": p.key, "default": p.default, "kind": p.kind}
            for p in spec.parameter_template
        ],
    }


def _dataset_doc(spec: DatasetSpec) -> dict:
    return {
        "id": spec.id,
        "name": spec.name,
        "sequences": list(spec.sequences),
        "topics": dict(spec.topics),
        "ground_truth_ref": spec.ground_truth_ref,
        "native_rate": spec.native_rate,
        "native_resolution": list(spec.native_resolution),
    }


def load_api_schema() -> dict:
    text = importlib_resources.files("mapbench.service").joinpath("schema.json").read_text()
    return json.loads(text)


def create_app(
    suite: Suite,
    deployment: DeploymentConfig,
    console_dir: "str | None" = None,
) -> FastAPI:
    app = FastAPI(title="mapbench", version=__version__)

    if console_dir is not None:
        from pathlib import Path as _Path

        from starlette.staticfiles import StaticFiles

        if _Path(console_dir).is_dir():
            app.mount("/console", StaticFiles(directory=console_dir, html=True),
                      name="console")

    def docs_url(page: str) -> str:
        return f"{deployment.docs_base_url}/{page}"

    def respond(page: str, payload: dict) -> dict:
        return {**payload, "docs_url": docs_url(page)}

    def require_mutable() -> None:
        if deployment.read_only:
            raise ModeViolation("view_only deployment rejects changes")

    def require_analysis_creation() -> None:
        if deployment.no_new_analysis:
            raise ModeViolation("analysis creation is disabled (NO_NEW_ANALYSIS)")

    def _error_response(status: int):
        async def handler(request, exc):
            name = "mode_violation" if isinstance(exc, ModeViolation) else type(exc).__name__
            return JSONResponse(status_code=status,
                                content={"error": name, "message": str(exc)})

        return handler

    # per-class handlers: the server returns the envelope without treating
    # domain errors as crashes (most specific registered class wins)
    app.add_exception_handler(ModeViolation, _error_response(403))
    for exc_type in _NOT_FOUND:
        app.add_exception_handler(exc_type, _error_response(404))
    for exc_type in _BAD_REQUEST:
        app.add_exception_handler(exc_type, _error_response(422))

    # -- meta ---------------------------------------------------------------

    @app.get("/api/meta")
    def meta() -> dict:
        return respond("meta", {
            "mode": deployment.mode,
            "no_new_analysis": deployment.no_new_analysis,
            "version": __version__,
            "nodes": [{"host": n.host, "inner_address": n.inner_address}
                      for n in deployment.nodes],
        })

    @app.get("/api/schema")
    def schema() -> dict:
        return respond("schema", load_api_schema())

    # -- catalog --------------------------------------------------------------

    @app.get("/api/algorithms")
    def list_algorithms() -> dict:
        items = [_algorithm_doc(a) for a in suite.store.list_algorithms()]
        return respond("algorithms", {"items": items})

    @app.post("/api/algorithms")
    def create_algorithm(payload: dict = Body(...)) -> dict:
        require_mutable()
        spec = AlgorithmSpec(
            id=str(payload["id"]),
            name=str(payload.get("name", payload["id"])),
            sensor_modes=frozenset(payload.get("sensor_modes") or ["mono"]),
            image_ref=str(payload.get("image_ref", "")),
            parameter_template=tuple(
                Parameter(p["key"], p.get("default"), p.get("kind", "text"))
                for p in payload.get("parameter_template") or []
            ),
        )
        suite.store.add_algorithm(spec)
        return respond("algorithms", _algorithm_doc(spec))

    @app.get("/api/datasets")
    def list_datasets() -> dict:
        items = [_dataset_doc(d) for d in suite.store.list_datasets()]
        return respond("datasets", {"items": items})

    @app.post("/api/datasets")
    def create_dataset(payload: dict = Body(...)) -> dict:
        require_mutable()
        spec = DatasetSpec(
            id=str(payload["id"]),
            name=str(payload.get("name", payload["id"])),
            sequences=tuple(payload.get("sequences") or ()),
            topics=dict(payload.get("topics") or {}),
            ground_truth_ref=str(payload.get("ground_truth_ref", "")),
            native_rate=float(payload.get("native_rate", 20.0)),
            native_resolution=tuple(payload.get("native_resolution") or (752, 480)),
        )
        suite.store.add_dataset(spec)
        return respond("datasets", _dataset_doc(spec))

    # -- configurations ----------------------------------------------------------

    @app.get("/api/configurations")
    def list_configurations(comb_parent: str | None = None) -> dict:
        items = [config_to_document(c)
                 for c in suite.store.list_configurations(comb_parent=comb_parent)]
        return respond("configurations", {"items": items})

    @app.get("/api/configurations/{config_id}")
    def get_configuration(config_id: str) -> dict:
        return respond("configurations",
                       config_to_document(suite.store.get_configuration(config_id)))

    @app.post("/api/configurations")
    def create_configuration(payload: dict = Body(...)) -> dict:
        require_mutable()
        config = config_from_document(payload)
        suite.store.catalog().validate_config(config)
        suite.store.add_configuration(config)
        return respond("configurations", config_to_document(config))

    @app.get("/api/combination-specs")
    def list_combination_specs() -> dict:
        return respond("combination_specs", {"items": suite.store.list_combination_specs()})

    @app.post("/api/combination-specs/preview")
    def preview_combination(payload: dict = Body(...)) -> dict:
        # pure computation: allowed in every mode
        count = suite.preview_combination(payload)
        return respond("combination_specs", {"count": count})

    @app.post("/api/combination-specs")
    def create_combination(payload: dict = Body(...)) -> dict:
        require_mutable()
        configs = suite.expand_combination(payload, store_results=True)
        return respond("combination_specs", {
            "id": payload["id"],
            "count": len(configs),
            "config_ids": [c.id for c in configs],
        })

    # -- tasks and runs --------------------------------------------------------------

    @app.post("/api/tasks")
    def create_tasks(payload: dict = Body(...)) -> dict:
        require_mutable()
        records = suite.run_configs(
            payload["config_ids"],
            max_parallel=int(payload.get("max_parallel", 1)),
            repeats=int(payload.get("repeats", 1)),
        )
        return respond("tasks", {"items": [_run_doc(r) for r in records]})

    @app.get("/api/runs")
    def list_runs(config_id: str | None = None) -> dict:
        return respond("runs", {"items": [_run_doc(r)
                                          for r in suite.store.list_runs(config_id)]})

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str) -> dict:
        return respond("runs", _run_doc(suite.store.get_run(run_id)))

    @app.get("/api/runs/{run_id}/profiling")
    def run_profiling(run_id: str) -> dict:
        record = suite.store.get_run(run_id)
        rows: list[list[float]] = []
        if record.run_dir:
            path = suite.layout.run_results_dir(run_id) / PROFILING_FILENAME
            if path.exists():
                from ..executor import read_profiling

                rows = [[s.t, s.cpu, s.ram] for s in read_profiling(path)]
        return respond("runs", {"columns": ["t", "cpu_cores", "ram_mb"], "rows": rows})

    @app.get("/api/runs/{run_id}/trajectory")
    def run_trajectory(run_id: str) -> dict:
        record = suite.store.get_run(run_id)
        config = suite.store.get_configuration(record.config_id)
        est_rows: list[list[float]] = []
        if record.run_dir:
            traj_path = suite.layout.run_results_dir(run_id) / TRAJ_FILENAME
            if traj_path.exists():
                est = parse_trajectory(traj_path.read_text())
                est_rows = [[p.t, *map(float, p.position)] for p in est.poses]
        gt_path = suite.layout.ground_truth_path(config.dataset_id, config.sequence)
        ref = parse_trajectory(gt_path.read_text())
        ref_rows = [[p.t, *map(float, p.position)] for p in ref.poses]
        return respond("runs", {
            "columns": ["t", "x", "y", "z"],
            "estimate": est_rows,
            "reference": ref_rows,
            "map_artifact": _map_artifact_name(suite, record),
        })

    # -- evaluations --------------------------------------------------------------

    @app.get("/api/evaluations")
    def list_evaluations() -> dict:
        return respond("evaluations",
                       {"items": [_evaluation_doc(e) for e in suite.store.list_evaluations()]})

    @app.get("/api/evaluations/{run_id}")
    def get_evaluation(run_id: str) -> dict:
        record = suite.store.get_evaluation(run_id)
        if record is None:
            raise UnknownEntity(f"no evaluation for run {run_id!r}")
        return respond("evaluations", _evaluation_doc(record))

    @app.post("/api/evaluations")
    def create_evaluations(payload: dict = Body(...)) -> dict:
        require_mutable()
        options = EvalOptions(
            align=bool(payload.get("align", True)),
            with_scale=bool(payload.get("with_scale", False)),
            force=bool(payload.get("force", False)),
        )
        run_ids = None if payload.get("all_unevaluated") else payload.get("run_ids")
        records = suite.evaluate_runs(run_ids, options)
        return respond("evaluations", {"items": [_evaluation_doc(e) for e in records]})

    # -- search ---------------------------------------------------------------------

    def _parse_query(payload: Mapping[str, Any]) -> SearchQuery:
        return SearchQuery(
            algorithm_ids=frozenset(payload.get("algorithm_ids") or ()),
            dataset_ids=frozenset(payload.get("dataset_ids") or ()),
            param_predicates=tuple(
                parse_predicate(p) for p in payload.get("predicates") or ()
            ),
            metric_bounds=tuple(
                (b["metric"], b.get("min"), b.get("max"))
                for b in payload.get("metric_bounds") or ()
            ),
        )

    @app.post("/api/search")
    def search(payload: dict = Body(...)) -> dict:
        target = payload.get("target", "configurations")
        ids = suite.store.search(_parse_query(payload), target=target)
        return respond("search", {"target": target, "ids": ids})

    @app.post("/api/search/export")
    def search_export(payload: dict = Body(...)) -> PlainTextResponse:
        import uuid as _uuid

        run_ids = suite.store.search(_parse_query(payload), target="evaluations")
        path = suite.layout.exports_dir / "searches" / f"search-{_uuid.uuid4().hex[:10]}.csv"
        suite.store.export_evaluations_csv(run_ids, path)
        return PlainTextResponse(path.read_text(), media_type="text/csv")

    # -- analyses ---------------------------------------------------------------------

    @app.post("/api/analyses")
    def create_analysis(payload: dict = Body(...)) -> dict:
        require_analysis_creation()
        document = payload.get("spec", payload)
        report = suite.run_analysis(document, hidden=deployment.read_only)
        return respond("analyses", report.to_dict())

    @app.get("/api/analyses")
    def list_analyses() -> dict:
        items = [
            {"report_id": doc["report_id"], "url_token": doc["url_token"],
             "group_name": doc["group_name"], "created_at": doc["created_at"]}
            for doc in suite.store.list_reports(include_hidden=False)
        ]
        return respond("analyses", {"items": items})

    @app.get("/api/analyses/by-token/{token}")
    def get_analysis_by_token(token: str) -> dict:
        return respond("analyses", suite.store.get_report_by_token(token))

    @app.get("/api/analyses/by-token/{token}/export/{filename}")
    def export_analysis_file(token: str, filename: str) -> PlainTextResponse:
        doc = suite.store.get_report_by_token(token)
        report = report_from_dict(doc)
        if report.export_dir is None:
            raise UnknownEntity("report has no raw export")
        path = suite.layout.exports_dir / report.report_id / filename
        if not path.exists() or not path.resolve().is_relative_to(
            (suite.layout.exports_dir / report.report_id).resolve()
        ):
            raise UnknownEntity(f"export file {filename!r}")
        return PlainTextResponse(path.read_text(), media_type="text/csv")

    # -- plans ------------------------------------------------------------------------

    def _tasks_from_payload(payload: Mapping[str, Any]) -> list[Task]:
        if payload.get("config_ids"):
            tasks = []
            for config_id in payload["config_ids"]:
                config = suite.store.get_configuration(config_id)
                tasks.append(Task(config.id, config.algorithm_id, config.dataset_id))
            return tasks
        return [
            Task(t["task_id"], t["algorithm_id"], t["dataset_id"])
            for t in payload.get("tasks") or []
        ]

    @app.post("/api/plans/cluster")
    def plan_cluster_endpoint(payload: dict = Body(...)) -> dict:
        tasks = _tasks_from_payload(payload)
        plan = plan_cluster(
            tasks,
            m_nodes=int(payload.get("m_nodes", 1)),
            seed=int(payload.get("seed", 0)),
            strategy=str(payload.get("strategy", "random")),
        )
        out = {
            "n_tasks": plan.n_tasks,
            "m_nodes": plan.m_nodes,
            "controllers": list(plan.controllers),
            "assignment": {f"{k[0]}|{k[1]}": v for k, v in plan.assignment.items()},
            "manifests": {node: list(ids) for node, ids in plan.manifests.items()},
            "transfer_schedule": [list(t) for t in plan.transfer_schedule],
            "subtask_manifest": render_subtask_manifest(plan),
        }
        if payload.get("model") is not None:
            model = cost_model_from_document(payload["model"])
            cost = transfer_cost(plan, model)
            out["transfer_cost"] = {"total_bytes": cost.total_bytes,
                                    "per_node": dict(cost.per_node)}
        return respond("plans", out)

    @app.post("/api/plans/cloud")
    def plan_cloud_endpoint(payload: dict = Body(...)) -> dict:
        model = cost_model_from_document(payload.get("model"))
        plan = plan_cloud(int(payload["n"]), str(payload.get("strategy", "snapshot")), model)
        return respond("plans", {
            "strategy": plan.strategy,
            "n": plan.n,
            "steps": [{"action": s.action, "node": s.node} for s in plan.steps],
            "resource_set_transfers": network_transfers_of_resource_set(plan),
        })

    @app.post("/api/plans/simulate")
    def simulate_endpoint(payload: dict = Body(...)) -> dict:
        model = cost_model_from_document(payload.get("model"))
        tasks = _tasks_from_payload(payload.get("cluster", {}))
        cluster = plan_cluster(
            tasks,
            m_nodes=int(payload.get("cluster", {}).get("m_nodes", 1)),
            seed=int(payload.get("cluster", {}).get("seed", 0)),
            strategy=str(payload.get("cluster", {}).get("strategy", "random")),
        )
        provision = None
        if payload.get("provision"):
            provision = plan_cloud(
                int(payload["provision"].get("n", len(cluster.controllers))),
                str(payload["provision"].get("strategy", "snapshot")),
                model,
            )
        timeline = simulate(cluster, provision, model)
        return respond("plans", {
            "makespan": timeline.makespan,
            "total_network_bytes": timeline.total_network_bytes,
            "node_ready": dict(timeline.node_ready),
            "busy": {
                node: [[start, end, task_id] for start, end, task_id in intervals]
                for node, intervals in timeline.busy.items()
            },
        })

    return app


def _map_artifact_name(suite: Suite, record: RunRecord) -> str | None:
    if not record.run_dir:
        return None
    results = suite.layout.run_results_dir(record.run_id)
    for name in ("map.pcd", "map.png"):
        if (results / name).exists():
            return name
    return None


def serve(suite: Suite, deployment: DeploymentConfig,
          console_dir: "str | None" = None) -> None:
    """Run the API server; raises BindFailure when the address is taken."""
    import uvicorn

    from .deployment import BindFailure

    app = create_app(suite, deployment, console_dir=console_dir)
    try:
        uvicorn.run(app, host=deployment.bind_host, port=deployment.bind_port,
                    log_level="warning")
    except OSError as exc:
        raise BindFailure(f"{deployment.bind_host}:{deployment.bind_port}: {exc}") from exc
