import math
import statistics
import time

import numpy as np
import pytest

from mapbench.analysis import (
    AnalysisEngine,
    AnalysisError,
    AnalysisSpec,
    BadCombinationRule,
    LimitationRules,
    MixedDatasetTrajectoryComparison,
    SelectionSpec,
    Table,
    UnknownMode,
    export_raw,
    parse_analysis_spec,
    repeatability_stats,
    report_from_dict,
    resolve_selection,
)
from mapbench.config import MappingConfiguration
from mapbench.layout import DataLayout
from mapbench.store import EvaluationRecord, RunRecord, Store
from mapbench.synthetic import demo_catalog, install_dataset
from mapbench.trajeval import MetricStats

LISTING_STYLE_SPEC = """
group_name: "rate ladder"
group_description: "image-rate sweep over the mock algorithms"
evaluation_form:
  algorithm_dataset_type: 0
  1_trajectory_comparison:
    choose: 1
configuration_choose:
  configuration_id: [1, 2, 3]
  comb_configuration_id: [5]
  limitation_rules:
    algorithm_id: [mock-accurate]
    dataset_id: [synth-a]
    parameters_value: ["nFeatures < 1200"]
    evaluation_value:
      ate_rmse_nolimitation: 0
      ate_rmse_minimum:
      ate_rmse_maximun: 1.0
  combination_rule:
    first_one: [2]
    first_rule: ["I"]
    second_one: [0, 1]
    second_rule: ["U"]
"""


@pytest.fixture
def campaign(tmp_path):
    layout = DataLayout(tmp_path / "campaign").ensure()
    catalog = demo_catalog()
    for dataset in catalog.datasets.values():
        install_dataset(layout, dataset, seed=5, frames=20)
    store = Store(layout)
    for alg in catalog.algorithms.values():
        store.add_algorithm(alg)
    for ds in catalog.datasets.values():
        store.add_dataset(ds)
    return layout, store


def add_config(store, cfg_id, algorithm="mock-accurate", dataset="synth-a",
               comb_parent=None, nFeatures=1000, frame_rate=20, resolution_factor=1.0):
    config = MappingConfiguration(
        id=cfg_id,
        algorithm_id=algorithm,
        dataset_id=dataset,
        sequence="seq01",
        algorithm_params={"nFeatures": nFeatures, "behavior": "ok"},
        dataset_params={"frame_rate": frame_rate, "resolution_factor": resolution_factor},
        comb_parent=comb_parent,
    )
    store.add_configuration(config)
    return config


def import_run(store, run_id, config_id, status="finished", traj_length=1.0,
               ate_rmse=None, cpu_mean=1.0, run_dir=None):
    store.import_runs([
        RunRecord(
            run_id=run_id, config_id=config_id, node_id="n1", cpu_type="t",
            core_count=2, status=status, cpu_mean=cpu_mean, cpu_max=cpu_mean + 1.0,
            ram_max=800.0, traj_length=traj_length if status == "finished" else None,
            started_at=time.time(), finished_at=time.time(), time_scale=1.0,
            reason=None, run_dir=run_dir,
        )
    ])
    if ate_rmse is not None:
        # constant error vector gives rmse == mean == ate_rmse exactly
        store.import_evaluations([
            EvaluationRecord(
                run_id=run_id,
                ate=MetricStats.from_errors([ate_rmse] * 4),
                rpe=MetricStats.from_errors([ate_rmse / 10] * 4),
                aligned=True, with_scale=False, evaluator_version="trajeval/test",
            )
        ])


class TestParseSpec:
    def test_listing_shaped_document(self):
        spec = parse_analysis_spec(LISTING_STYLE_SPEC)
        assert spec.group_name == "rate ladder"
        assert list(spec.modes) == ["1_trajectory_comparison"]
        sel = spec.selection
        assert sel.config_ids == ("1", "2", "3")
        assert sel.comb_ids == ("5",)
        assert sel.limitation.algorithm_ids == ("mock-accurate",)
        assert sel.limitation.param_predicates == (("nFeatures", "<", "1200"),)
        assert sel.limitation.metric_bounds == (("ate_rmse", None, 1.0),)
        assert sel.rule == (((2,), ("I",)), ((0, 1), ("U",)))

    def test_choose_zero_disables_mode(self):
        doc = {
            "group_name": "g",
            "evaluation_form": {
                "1_trajectory_comparison": {"choose": 0},
                "3_accuracy_metrics_comparison": {"choose": 1},
            },
            "configuration_choose": {"configuration_id": ["c1"]},
        }
        spec = parse_analysis_spec(doc)
        assert list(spec.modes) == ["3_accuracy_metrics_comparison"]

    def test_nolimitation_disables_bound(self):
        doc = {
            "group_name": "g",
            "evaluation_form": {"3_accuracy_metrics_comparison": {"choose": 1}},
            "configuration_choose": {
                "configuration_id": ["c1"],
                "limitation_rules": {
                    "evaluation_value": {
                        "ate_rmse_nolimitation": 1,
                        "ate_rmse_maximum": 0.5,
                        "rpe_rmse_maximum": 0.2,
                    }
                },
            },
        }
        spec = parse_analysis_spec(doc)
        assert spec.selection.limitation.metric_bounds == (("rpe_rmse", None, 0.2),)

    def test_unknown_mode(self):
        doc = {
            "group_name": "g",
            "evaluation_form": {"8_sorcery": {"choose": 1}},
            "configuration_choose": {},
        }
        with pytest.raises(UnknownMode):
            parse_analysis_spec(doc)

    def test_bad_source_number(self):
        doc = {
            "group_name": "g",
            "evaluation_form": {"3_accuracy_metrics_comparison": {"choose": 1}},
            "configuration_choose": {
                "configuration_id": ["c1"],
                "combination_rule": {"first_one": [7], "first_rule": []},
            },
        }
        with pytest.raises(BadCombinationRule):
            parse_analysis_spec(doc)

    def test_requires_a_mode(self):
        with pytest.raises(AnalysisError):
            parse_analysis_spec({"group_name": "g", "configuration_choose": {}})


class TestResolveSelection:
    def seed(self, store):
        add_config(store, "cfg-a")
        add_config(store, "cfg-b", nFeatures=2000)
        add_config(store, "cfg-c", comb_parent="comb-1", nFeatures=500)
        import_run(store, "r1", "cfg-a", ate_rmse=0.1)
        import_run(store, "r2", "cfg-b", ate_rmse=0.2)
        import_run(store, "r3", "cfg-c", ate_rmse=0.3)

    def test_union(self, campaign):
        _, store = campaign
        self.seed(store)
        sel = SelectionSpec(
            config_ids=("cfg-a",), comb_ids=("comb-1",),
            rule=(((0, 1), ("U",)),),
        )
        assert resolve_selection(sel, store) == {"r1", "r3"}

    def test_intersection(self, campaign):
        _, store = campaign
        self.seed(store)
        sel = SelectionSpec(
            config_ids=("cfg-a", "cfg-b"),
            limitation=LimitationRules(param_predicates=(("nFeatures", ">=", "2000"),)),
            rule=(((0, 2), ("I",)),),
        )
        assert resolve_selection(sel, store) == {"r2"}

    def test_union_minus_c(self, campaign):
        _, store = campaign
        self.seed(store)
        sel = SelectionSpec(
            config_ids=("cfg-a", "cfg-b"), comb_ids=("comb-1",),
            limitation=LimitationRules(param_predicates=(("nFeatures", "<", "1000"),)),
            rule=(((0, 1), ("U", "-")), ((2,), ())),
        )
        # (explicit U comb) - limited = {r1,r2,r3} - {r3}
        assert resolve_selection(sel, store) == {"r1", "r2"}

    def test_default_rule_unions_declared_sources(self, campaign):
        _, store = campaign
        self.seed(store)
        sel = SelectionSpec(config_ids=("cfg-a",), comb_ids=("comb-1",))
        assert resolve_selection(sel, store) == {"r1", "r3"}

    def test_randomized_rules_match_brute_force(self, campaign):
        _, store = campaign
        for i in range(12):
            add_config(store, f"cfg-{i:02d}",
                       comb_parent="comb-even" if i % 2 == 0 else None,
                       nFeatures=500 * (1 + i % 4))
            for j in range(2):
                import_run(store, f"run-{i:02d}-{j}", f"cfg-{i:02d}", ate_rmse=0.1 * (1 + i))
        rng = np.random.default_rng(3)
        explicit_ids = tuple(f"cfg-{i:02d}" for i in range(0, 12, 3))
        limitation = LimitationRules(param_predicates=(("nFeatures", ">=", "1500"),))

        runs = store.list_runs()
        source0 = {r.run_id for r in runs if r.config_id in explicit_ids}
        source1 = {
            r.run_id for r in runs
            if store.get_configuration(r.config_id).comb_parent == "comb-even"
        }
        source2 = {
            r.run_id for r in runs
            if store.get_configuration(r.config_id).algorithm_params["nFeatures"] >= 1500
        }
        materialized = [source0, source1, source2]

        def brute(rule):
            def clause_val(sources, ops):
                value = set(materialized[sources[0]])
                for s, op in zip(sources[1:], ops[: len(sources) - 1]):
                    value = {
                        "U": value | materialized[s],
                        "I": value & materialized[s],
                        "-": value - materialized[s],
                    }[op]
                conn = ops[len(sources) - 1] if len(ops) == len(sources) else None
                return value, conn

            acc, conn = clause_val(*rule[0])
            for clause in rule[1:]:
                value, nxt = clause_val(*clause)
                acc = {"U": acc | value, "I": acc & value, "-": acc - value}[conn]
                conn = nxt
            return acc

        for _ in range(50):
            n_clauses = int(rng.integers(1, 3))
            rule = []
            for k in range(n_clauses):
                n_src = int(rng.integers(1, 4))
                sources = tuple(int(s) for s in rng.integers(0, 3, size=n_src))
                n_ops = n_src - 1 + (1 if k < n_clauses - 1 else int(rng.integers(0, 2)))
                ops = tuple(str(rng.choice(["U", "I", "-"])) for _ in range(n_ops))
                rule.append((sources, ops))
            sel = SelectionSpec(
                config_ids=explicit_ids, comb_ids=("comb-even",),
                limitation=limitation, rule=tuple(rule),
            )
            assert resolve_selection(sel, store) == brute(tuple(rule))


class TestRepeatabilityStats:
    def test_identical_values_zero_std(self):
        stats = repeatability_stats({"c": [{"ate_rmse": 0.5}] * 4})
        mean, std, n = stats["c"]["ate_rmse"]
        assert mean == 0.5 and std == 0.0 and n == 4

    def test_one_two_three(self):
        stats = repeatability_stats({"c": [{"m": 1.0}, {"m": 2.0}, {"m": 3.0}]})
        mean, std, n = stats["c"]["m"]
        assert mean == 2.0
        assert math.isclose(std, math.sqrt(2.0 / 3.0), rel_tol=1e-12)
        assert n == 3

    def test_randomized_groups_match_direct(self):
        rng = np.random.default_rng(11)
        groups = {
            f"c{i}": [{"ate_rmse": float(rng.uniform(0, 2))} for _ in range(5)]
            for i in range(10)
        }
        stats = repeatability_stats(groups)
        for cid, samples in groups.items():
            values = [s["ate_rmse"] for s in samples]
            mean, std, n = stats[cid]["ate_rmse"]
            assert math.isclose(mean, sum(values) / len(values), rel_tol=1e-12)
            direct_var = sum((v - sum(values) / len(values)) ** 2 for v in values) / len(values)
            assert math.isclose(std, math.sqrt(direct_var), rel_tol=1e-12, abs_tol=1e-15)
            assert n == 5


def simple_spec(modes, **sel_kwargs):
    return AnalysisSpec(
        group_name="test group",
        group_description="",
        modes=modes,
        selection=SelectionSpec(**sel_kwargs),
    )


class TestRunAnalysis:
    def test_mode3_mean_std_over_repeats(self, campaign):
        _, store = campaign
        add_config(store, "cfg-rep")
        values = [0.071, 0.075, 0.069, 0.080, 0.066]
        for i, v in enumerate(values):
            import_run(store, f"rep-{i}", "cfg-rep", ate_rmse=v)
        engine = AnalysisEngine(store)
        report = engine.run_analysis(
            simple_spec({"3_accuracy_metrics_comparison": {}}, config_ids=("cfg-rep",))
        )
        table = report.outputs["3_accuracy_metrics_comparison"]["grouped_stats"]
        rows = {r[1]: r for r in table.rows if r[0] == "cfg-rep"}
        mean, std, n = rows["ate_rmse"][2], rows["ate_rmse"][3], rows["ate_rmse"][4]
        assert n == 5
        assert math.isclose(mean, statistics.fmean(values), rel_tol=1e-12)
        assert math.isclose(std, statistics.pstdev(values), rel_tol=1e-12)

    def test_other_modes_use_first_run_only(self, campaign):
        _, store = campaign
        add_config(store, "cfg-rep")
        import_run(store, "rep-0", "cfg-rep", ate_rmse=0.1, cpu_mean=1.0)
        import_run(store, "rep-1", "cfg-rep", ate_rmse=0.9, cpu_mean=9.0)
        engine = AnalysisEngine(store)
        report = engine.run_analysis(
            simple_spec({"5_cpu_ram_usage_comparison": {}}, config_ids=("cfg-rep",))
        )
        table = report.outputs["5_cpu_ram_usage_comparison"]["usage"]
        assert len(table.rows) == 1
        assert table.rows[0][1] == "rep-0"

    def test_scatter_places_failed_at_1_2_times_max(self, campaign):
        _, store = campaign
        for i, (rmse, tl) in enumerate([(0.2, 1.0), (0.5, 0.9), (0.3, 0.3)]):
            add_config(store, f"cfg-s{i}", frame_rate=20 - i, resolution_factor=1.0 - 0.1 * i)
            import_run(store, f"srun-{i}", f"cfg-s{i}", ate_rmse=rmse, traj_length=tl)
        engine = AnalysisEngine(store)
        report = engine.run_analysis(
            simple_spec(
                {"7_3d_scatter": {"x": "frame_rate", "y": "resolution_factor", "z": "ate_rmse"}},
                config_ids=("cfg-s0", "cfg-s1", "cfg-s2"),
            )
        )
        table = report.outputs["7_3d_scatter"]["scatter"]
        assert table.columns == ("x", "y", "z", "run_id", "status")
        by_run = {r[3]: r for r in table.rows}
        assert by_run["srun-0"][4] == "success"
        assert by_run["srun-2"][4] == "failed"
        # failed run plotted 20% above the best success ATE, not at its own 0.3
        assert math.isclose(by_run["srun-2"][2], 1.2 * 0.5, rel_tol=1e-12)
        assert by_run["srun-2"][0] == 18.0

    def test_scatter_all_failed_omitted_with_notice(self, campaign):
        _, store = campaign
        add_config(store, "cfg-f")
        import_run(store, "frun", "cfg-f", status="failed")
        engine = AnalysisEngine(store)
        report = engine.run_analysis(
            simple_spec({"6_2d_scatter": {"x": "cpu_mean", "y": "ate_rmse"}},
                        config_ids=("cfg-f",))
        )
        assert report.outputs["6_2d_scatter"]["scatter"].rows == ()
        assert any("omitted" in n for n in report.notices)

    def test_ate_bound_flips_classification(self, campaign):
        _, store = campaign
        add_config(store, "cfg-hi")
        import_run(store, "hi-run", "cfg-hi", ate_rmse=1.5, traj_length=0.9)
        add_config(store, "cfg-lo")
        import_run(store, "lo-run", "cfg-lo", ate_rmse=0.4, traj_length=0.9)
        spec = AnalysisSpec(
            group_name="bounded", group_description="", max_ate=1.0,
            modes={"6_2d_scatter": {"x": "cpu_mean", "y": "ate_rmse"}},
            selection=SelectionSpec(config_ids=("cfg-hi", "cfg-lo")),
        )
        report = AnalysisEngine(store).run_analysis(spec)
        by_run = {r[2]: r for r in report.outputs["6_2d_scatter"]["scatter"].rows}
        assert by_run["lo-run"][3] == "success"
        assert by_run["hi-run"][3] == "failed"
        assert math.isclose(by_run["hi-run"][1], 1.2 * 0.4, rel_tol=1e-12)

    def test_mixed_dataset_trajectory_comparison_rejected(self, campaign):
        layout, store = campaign
        add_config(store, "cfg-da", dataset="synth-a")
        add_config(store, "cfg-db", dataset="synth-b")
        for cfg in ("cfg-da", "cfg-db"):
            run_id = f"run-{cfg}"
            run_dir = layout.run_dir(run_id)
            results = run_dir / "results"
            results.mkdir(parents=True)
            config = store.get_configuration(cfg)
            gt = layout.ground_truth_path(config.dataset_id, "seq01").read_text()
            (results / "traj.txt").write_text(gt)
            import_run(store, run_id, cfg, ate_rmse=0.1, run_dir=str(run_dir))
        engine = AnalysisEngine(store)
        with pytest.raises(MixedDatasetTrajectoryComparison):
            engine.run_analysis(
                simple_spec({"1_trajectory_comparison": {}},
                            config_ids=("cfg-da", "cfg-db"))
            )

    def test_trajectory_mode_emits_reference_and_runs(self, campaign):
        layout, store = campaign
        add_config(store, "cfg-t")
        run_dir = layout.run_dir("trun")
        (run_dir / "results").mkdir(parents=True)
        gt_text = layout.ground_truth_path("synth-a", "seq01").read_text()
        (run_dir / "results" / "traj.txt").write_text(gt_text)
        import_run(store, "trun", "cfg-t", ate_rmse=0.0, run_dir=str(run_dir))
        report = AnalysisEngine(store).run_analysis(
            simple_spec({"1_trajectory_comparison": {}}, config_ids=("cfg-t",))
        )
        table = report.outputs["1_trajectory_comparison"]["trajectories"]
        run_ids = {r[0] for r in table.rows}
        assert run_ids == {"__reference__", "trun"}

    def test_empty_selection_reports_notice(self, campaign):
        _, store = campaign
        report = AnalysisEngine(store).run_analysis(
            simple_spec({"3_accuracy_metrics_comparison": {}}, config_ids=("ghost",))
        )
        assert report.run_ids == ()
        assert any("zero runs" in n for n in report.notices)

    def test_reports_are_immutable_new_ids(self, campaign):
        _, store = campaign
        add_config(store, "cfg-i")
        import_run(store, "irun", "cfg-i", ate_rmse=0.2)
        engine = AnalysisEngine(store)
        spec = simple_spec({"3_accuracy_metrics_comparison": {}}, config_ids=("cfg-i",))
        r1 = engine.run_analysis(spec)
        r2 = engine.run_analysis(spec)
        assert r1.report_id != r2.report_id
        assert r1.url_token != r2.url_token
        store.save_report(r1.report_id, r1.url_token, r1.to_dict())
        stored = store.get_report_by_token(r1.url_token)
        assert report_from_dict(stored).outputs.keys() == r1.outputs.keys()


class TestExportRaw:
    def test_mode3_columns(self, campaign, tmp_path):
        _, store = campaign
        add_config(store, "cfg-e")
        import_run(store, "erun", "cfg-e", ate_rmse=0.2)
        report = AnalysisEngine(store).run_analysis(
            simple_spec({"3_accuracy_metrics_comparison": {}}, config_ids=("cfg-e",))
        )
        out = export_raw(report, tmp_path / "exp")
        content = (out / "3_accuracy_metrics_comparison__grouped_stats.csv").read_text()
        assert content.splitlines()[0] == "config_id,metric,mean,std,n"

    def test_scatter_columns_and_header_only_when_empty(self, campaign, tmp_path):
        _, store = campaign
        report = AnalysisEngine(store).run_analysis(
            simple_spec(
                {"7_3d_scatter": {"x": "frame_rate", "y": "resolution_factor", "z": "ate_rmse"}},
                config_ids=("ghost",),
            )
        )
        out = export_raw(report, tmp_path / "exp")
        lines = (out / "7_3d_scatter__scatter.csv").read_text().splitlines()
        assert lines == ["x,y,z,run_id,status"]
