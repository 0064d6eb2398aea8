import math
import threading
import time

import numpy as np
import pytest

from mapbench.config import MappingConfiguration
from mapbench.executor import MappingRunner
from mapbench.layout import DataLayout
from mapbench.store import (
    AlreadyEvaluated,
    CorruptResults,
    EvalOptions,
    EvaluationRecord,
    MalformedPredicate,
    RunNotFinished,
    RunRecord,
    SearchQuery,
    Store,
    TypeMismatch,
    UnknownKey,
    parse_predicate,
)
from mapbench.synthetic import demo_catalog, install_dataset
from mapbench.trajeval import MetricStats


@pytest.fixture
def campaign(tmp_path):
    layout = DataLayout(tmp_path / "campaign").ensure()
    catalog = demo_catalog()
    for dataset in catalog.datasets.values():
        install_dataset(layout, dataset, seed=3, frames=20)
    store = Store(layout)
    for alg in catalog.algorithms.values():
        store.add_algorithm(alg)
    for ds in catalog.datasets.values():
        store.add_dataset(ds)
    runner = MappingRunner(layout, catalog, time_scale=0.002, profile_period=0.05)
    runner.register_mock_adapters()
    return layout, store, runner


def make_config(cfg_id="cfg-1", algorithm="mock-accurate", **alg_overrides):
    params = {"nFeatures": 1000, "offset": 0.0, "noise": 0.0, "coverage": 1.0,
              "seed": 11, "behavior": "ok"}
    params.update(alg_overrides)
    return MappingConfiguration(
        id=cfg_id,
        algorithm_id=algorithm,
        dataset_id="synth-a",
        sequence="seq01",
        algorithm_params=params,
        dataset_params={"frame_rate": 20, "resolution_factor": 1, "save_map": False},
        remap=(("/cam0/image_raw", "/camera/image"),),
    )


def run_and_ingest(store, runner, config, **kwargs):
    store.add_configuration(config)
    result = runner.run_one(config)
    run_dir = runner.layout.run_dir(result.run_id)
    return store.ingest(run_dir, config.id, **kwargs), result


class TestIngest:
    def test_full_coverage_run(self, campaign):
        _, store, runner = campaign
        record, result = run_and_ingest(store, runner, make_config())
        assert record.status == "finished"
        assert record.traj_length == 1.0
        assert record.cpu_mean <= record.cpu_max
        assert record.core_count >= 1

    def test_partial_coverage_half(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config(coverage=0.5))
        assert record.status == "finished"
        assert record.traj_length == 0.5

    def test_idempotent_reingest(self, campaign):
        _, store, runner = campaign
        config = make_config()
        store.add_configuration(config)
        result = runner.run_one(config)
        run_dir = runner.layout.run_dir(result.run_id)
        first = store.ingest(run_dir, config.id)
        second = store.ingest(run_dir, config.id)
        assert first == second
        assert len(store.list_runs()) == 1

    def test_concurrent_ingests_single_record(self, campaign):
        _, store, runner = campaign
        config = make_config()
        store.add_configuration(config)
        result = runner.run_one(config)
        run_dir = runner.layout.run_dir(result.run_id)
        outcomes = []

        def worker():
            outcomes.append(store.ingest(run_dir, config.id))

        threads = [threading.Thread(target=worker) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(store.list_runs()) == 1
        assert all(o.run_id == outcomes[0].run_id for o in outcomes)

    def test_failed_run_ingested_with_marker(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config(behavior="crash"))
        assert record.status == "failed"
        assert record.traj_length is None
        assert record.reason

    def test_corrupt_results_rejected(self, campaign, tmp_path):
        _, store, runner = campaign
        store.add_configuration(make_config())
        bogus = tmp_path / "bogus-run"
        (bogus / "results").mkdir(parents=True)
        with pytest.raises(CorruptResults):
            store.ingest(bogus, "cfg-1")


class TestEvaluate:
    def test_constant_offset_rmse(self, campaign):
        _, store, runner = campaign
        config = make_config(offset=0.1)
        record, _ = run_and_ingest(store, runner, config)
        evaluation = store.evaluate(record.run_id, EvalOptions(align=False))
        assert math.isclose(evaluation.ate.rmse, 0.1, rel_tol=1e-9)
        assert evaluation.ate.std < 1e-10
        assert not evaluation.aligned

    def test_aligned_offset_vanishes(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config(offset=0.1))
        evaluation = store.evaluate(record.run_id)
        assert evaluation.ate.rmse < 1e-9
        assert evaluation.aligned

    def test_eval_bundle_written(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config(noise=0.01))
        store.evaluate(record.run_id)
        run_dir = runner.layout.run_dir(record.run_id)
        assert (run_dir / "eval" / "stats.json").exists()
        assert (run_dir / "eval" / "ape_errors.csv").exists()
        assert (run_dir / "eval" / "trajectories.csv").exists()

    def test_run_not_finished(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config(behavior="crash"))
        with pytest.raises(RunNotFinished):
            store.evaluate(record.run_id)

    def test_already_evaluated_and_force(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config())
        store.evaluate(record.run_id)
        with pytest.raises(AlreadyEvaluated):
            store.evaluate(record.run_id)
        again = store.evaluate(record.run_id, EvalOptions(force=True))
        assert again.run_id == record.run_id

    def test_evaluate_all_unevaluated(self, campaign):
        _, store, runner = campaign
        records = []
        for i in range(5):
            record, _ = run_and_ingest(store, runner, make_config(cfg_id=f"cfg-{i}"))
            records.append(record)
        store.evaluate(records[0].run_id)
        store.evaluate(records[1].run_id)
        fresh = store.evaluate_all_unevaluated()
        assert len(fresh) == 3
        assert {e.run_id for e in fresh} == {r.run_id for r in records[2:]}
        assert store.evaluate_all_unevaluated() == []

    def test_every_evaluation_references_finished_run(self, campaign):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config())
        store.evaluate(record.run_id)
        for evaluation in store.list_evaluations():
            assert store.get_run(evaluation.run_id).status == "finished"


class TestParsePredicate:
    def test_arrow_ge(self):
        assert parse_predicate("nFeatures => 2000") == ("nFeatures", ">=", "2000")

    def test_ge_alias(self):
        assert parse_predicate("nFeatures >= 2000") == ("nFeatures", ">=", "2000")

    def test_traj_length_gt(self):
        assert parse_predicate("traj_length > 0.75") == ("traj_length", ">", "0.75")

    def test_all_ops(self):
        assert parse_predicate("k = v")[1] == "="
        assert parse_predicate("k < 5")[1] == "<"
        assert parse_predicate("k <= 5")[1] == "<="

    def test_malformed(self):
        for bad in ("nFeatures >> 5", "nFeatures", "=> 5", "a = ", "a == b"):
            with pytest.raises(MalformedPredicate):
                parse_predicate(bad)


def seed_eval_corpus(store, n_configs=20, runs_per_config=2, seed=0):
    """Synthetic runs+evaluations imported directly (no execution)."""
    rng = np.random.default_rng(seed)
    algorithms = ["mock-accurate", "mock-sloppy"]
    datasets = ["synth-a", "synth-b"]
    runs, evals = [], []
    for i in range(n_configs):
        config = MappingConfiguration(
            id=f"corpus-{i:04d}",
            algorithm_id=algorithms[int(rng.integers(2))],
            dataset_id=datasets[int(rng.integers(2))],
            sequence="seq01",
            algorithm_params={"nFeatures": int(rng.choice([500, 1000, 1500, 2000, 2500])),
                              "behavior": "ok"},
            dataset_params={"frame_rate": int(rng.choice([20, 10, 5])),
                            "resolution_factor": float(rng.choice([1.0, 0.5, 0.2]))},
        )
        store.add_configuration(config)
        for j in range(runs_per_config):
            run_id = f"corpus-run-{i:04d}-{j}"
            status = "finished" if rng.random() > 0.2 else "failed"
            traj_length = float(rng.uniform(0.3, 1.0)) if status == "finished" else None
            runs.append(
                RunRecord(
                    run_id=run_id, config_id=config.id, node_id="n1", cpu_type="x",
                    core_count=4, status=status,
                    cpu_mean=float(rng.uniform(0.5, 2.5)),
                    cpu_max=float(rng.uniform(2.5, 4.0)),
                    ram_max=float(rng.uniform(400, 2000)),
                    traj_length=traj_length, started_at=time.time(),
                    finished_at=time.time(), time_scale=1.0, reason=None, run_dir=None,
                )
            )
            if status == "finished":
                errors = rng.uniform(0.0, float(rng.choice([0.3, 1.5])), size=30)
                evals.append(
                    EvaluationRecord(
                        run_id=run_id,
                        ate=MetricStats.from_errors(errors),
                        rpe=MetricStats.from_errors(errors * 0.1),
                        aligned=True, with_scale=False, evaluator_version="trajeval/test",
                    )
                )
    store.import_runs(runs)
    store.import_evaluations(evals)
    return runs, evals


class TestSearch:
    def test_nfeatures_ge_2000(self, campaign):
        _, store, _ = campaign
        for i, nf in enumerate([1500, 2000, 2500]):
            store.add_configuration(make_config(cfg_id=f"cfg-nf-{i}", nFeatures=nf))
        ids = store.search(
            SearchQuery(param_predicates=(parse_predicate("nFeatures => 2000"),))
        )
        assert ids == ["cfg-nf-1", "cfg-nf-2"]

    def test_metric_bound_filters_evaluations(self, campaign):
        _, store, runner = campaign
        rec_low, _ = run_and_ingest(store, runner, make_config(cfg_id="cfg-low", offset=0.5))
        rec_high, _ = run_and_ingest(store, runner, make_config(cfg_id="cfg-high", offset=1.2))
        store.evaluate(rec_low.run_id, EvalOptions(align=False))
        store.evaluate(rec_high.run_id, EvalOptions(align=False))
        ids = store.search(
            SearchQuery(metric_bounds=(("ate_rmse", None, 1.0),)),
            target="evaluations",
        )
        assert ids == [rec_low.run_id]

    def test_type_mismatch(self, campaign):
        _, store, _ = campaign
        store.add_configuration(make_config())
        with pytest.raises(TypeMismatch):
            store.search(
                SearchQuery(param_predicates=(parse_predicate("nFeatures => abc"),))
            )

    def test_unknown_key(self, campaign):
        _, store, _ = campaign
        store.add_configuration(make_config())
        with pytest.raises(UnknownKey):
            store.search(
                SearchQuery(param_predicates=(("no_such_param", ">=", "1"),))
            )

    def test_empty_query_rejected(self):
        with pytest.raises(Exception):
            SearchQuery()

    def test_algorithm_and_dataset_sets_disjunctive(self, campaign):
        _, store, _ = campaign
        store.add_configuration(make_config(cfg_id="cfg-a", algorithm="mock-accurate"))
        store.add_configuration(make_config(cfg_id="cfg-b", algorithm="mock-sloppy"))
        ids = store.search(
            SearchQuery(algorithm_ids=frozenset({"mock-accurate", "mock-sloppy"}))
        )
        assert ids == ["cfg-a", "cfg-b"]
        only = store.search(SearchQuery(algorithm_ids=frozenset({"mock-sloppy"})))
        assert only == ["cfg-b"]

    def test_search_equals_linear_scan_over_random_corpus(self, campaign):
        _, store, _ = campaign
        runs, evals = seed_eval_corpus(store, n_configs=100, runs_per_config=5, seed=42)
        assert len(runs) == 500
        eval_by_run = {e.run_id: e for e in evals}
        configs = {c.id: c for c in store.list_configurations()}
        rng = np.random.default_rng(7)

        def oracle(query):
            hits = []
            for run in runs:
                config = configs[run.config_id]
                if query.algorithm_ids and config.algorithm_id not in query.algorithm_ids:
                    continue
                if query.dataset_ids and config.dataset_id not in query.dataset_ids:
                    continue
                ok = True
                for key, op, text in query.param_predicates:
                    if key == "traj_length":
                        value = run.traj_length
                        if value is None:
                            ok = False
                            break
                    else:
                        value = config.algorithm_params.get(key)
                        if value is None:
                            value = config.dataset_params.get(key)
                        if value is None:
                            ok = False
                            break
                    bound = float(text)
                    value = float(value)
                    ok = {
                        "=": value == bound, "<": value < bound, ">": value > bound,
                        "<=": value <= bound, ">=": value >= bound,
                    }[op]
                    if not ok:
                        break
                if not ok:
                    continue
                evaluation = eval_by_run.get(run.run_id)
                for metric, lo, hi in query.metric_bounds:
                    if metric in ("cpu_mean", "cpu_max", "ram_max", "traj_length"):
                        value = getattr(run, metric)
                    else:
                        value = evaluation.metric(metric) if evaluation else None
                    if value is None or (lo is not None and value < lo) or (
                        hi is not None and value > hi
                    ):
                        ok = False
                        break
                if ok:
                    hits.append(run.run_id)
            return sorted(hits)

        for _ in range(40):
            clauses = {}
            if rng.random() < 0.5:
                clauses["algorithm_ids"] = frozenset(
                    rng.choice(["mock-accurate", "mock-sloppy"],
                               size=int(rng.integers(1, 3)), replace=False)
                )
            if rng.random() < 0.4:
                clauses["dataset_ids"] = frozenset({str(rng.choice(["synth-a", "synth-b"]))})
            preds = []
            if rng.random() < 0.6:
                op = str(rng.choice(["=", "<", ">", "<=", ">="]))
                preds.append(("nFeatures", op, str(int(rng.choice([500, 1000, 2000])))))
            if rng.random() < 0.3:
                preds.append(("traj_length", ">", f"{rng.uniform(0.3, 0.9):.2f}"))
            bounds = []
            if rng.random() < 0.6:
                bounds.append(("ate_rmse", None, float(rng.uniform(0.1, 1.0))))
            if rng.random() < 0.3:
                bounds.append(("cpu_mean", float(rng.uniform(0.5, 2.0)), None))
            if not (clauses or preds or bounds):
                clauses["algorithm_ids"] = frozenset({"mock-accurate"})
            query = SearchQuery(
                param_predicates=tuple(preds),
                metric_bounds=tuple(bounds),
                **clauses,
            )
            assert store.search(query, target="evaluations") == oracle(query)


class TestExport:
    def test_csv_columns(self, campaign, tmp_path):
        _, store, runner = campaign
        record, _ = run_and_ingest(store, runner, make_config(noise=0.01))
        store.evaluate(record.run_id)
        path = store.export_evaluations_csv([record.run_id], tmp_path / "out.csv")
        header = path.read_text().splitlines()[0].split(",")
        assert header[:6] == ["run_id", "config_id", "algorithm_id", "dataset_id",
                              "sequence", "status"]
        assert "ate_rmse" in header and "rpe_rmse" in header

    def test_catalog_dump(self, campaign):
        _, store, _ = campaign
        store.add_configuration(make_config())
        dump = store.dump_catalog()
        assert {a["id"] for a in dump["algorithms"]} == {"mock-accurate", "mock-sloppy"}
        assert len(dump["configurations"]) == 1
