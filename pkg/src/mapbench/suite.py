"""Campaign facade: one root directory wiring store, runner and analysis.

The service and CLI operate exclusively through this class, so embedded and
network deployments behave identically.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .analysis import AnalysisEngine, AnalysisReport, AnalysisSpec, parse_analysis_spec
from .config import (
    CombinationSpec,
    MappingConfiguration,
    combination_spec_from_document,
    expand_combinations,
    expansion_count,
)
from .dataprep import PrepCache
from .executor import MappingRunner, RunResult
from .layout import DataLayout
from .store import EvalOptions, RunRecord, Store
from .synthetic import demo_catalog, install_dataset


class Suite:
    def __init__(
        self,
        root: Path | str,
        time_scale: float = 1.0,
        profile_period: float = 0.5,
    ) -> None:
        self.layout = DataLayout(root).ensure()
        self.store = Store(self.layout)
        self.analysis = AnalysisEngine(self.store)
        self.time_scale = time_scale
        self.profile_period = profile_period
        self._prep_cache = PrepCache(self.layout.prepared_dir)

    def close(self) -> None:
        self.store.close()

    # -- setup -----------------------------------------------------------------

    def seed_demo(self, frames: int = 40, seed: int = 0) -> None:
        """Register the mock catalog and materialize its synthetic datasets."""
        catalog = demo_catalog()
        for algorithm in catalog.algorithms.values():
            self.store.add_algorithm(algorithm)
        for dataset in catalog.datasets.values():
            self.store.add_dataset(dataset)
            install_dataset(self.layout, dataset, seed=seed, frames=frames)

    def runner(self) -> MappingRunner:
        runner = MappingRunner(
            self.layout,
            self.store.catalog(),
            prep_cache=self._prep_cache,
            time_scale=self.time_scale,
            profile_period=self.profile_period,
        )
        runner.register_mock_adapters()
        return runner

    # -- configurations ----------------------------------------------------------

    def expand_combination(
        self, document: Mapping[str, Any], store_results: bool = True
    ) -> list[MappingConfiguration]:
        spec = combination_spec_from_document(document)
        configs = expand_combinations(spec)
        if store_results:
            self.store.add_combination_spec(spec.id, dict(document))
            self.store.add_configurations(configs)
        return configs

    def preview_combination(self, document: Mapping[str, Any]) -> int:
        return expansion_count(combination_spec_from_document(document))

    # -- execution ----------------------------------------------------------------

    def run_configs(
        self,
        config_ids: Sequence[str],
        max_parallel: int = 1,
        repeats: int = 1,
        node_id: str = "workstation",
    ) -> list[RunRecord]:
        """Run configurations through the queue and ingest every result."""
        configs = [self.store.get_configuration(cid) for cid in config_ids]
        jobs = [config for config in configs for _ in range(repeats)]
        runner = self.runner()
        results = runner.run_queue(jobs, max_parallel=max_parallel)
        records = []
        for result in results:
            run_dir = self.layout.run_dir(result.run_id)
            if run_dir.exists():
                records.append(
                    self.store.ingest(run_dir, result.config_id, node_id=node_id)
                )
            else:  # preparation failed before a workspace existed
                records.append(
                    self.store.record_failed_run(
                        result.run_id, result.config_id, result.reason or "failed",
                        node_id=node_id, time_scale=result.time_scale,
                    )
                )
        return records

    # -- evaluation -----------------------------------------------------------------

    def evaluate_runs(
        self, run_ids: Sequence[str] | None, options: EvalOptions = EvalOptions()
    ):
        if run_ids is None:
            return self.store.evaluate_all_unevaluated(options)
        return [self.store.evaluate(run_id, options) for run_id in run_ids]

    # -- analysis ---------------------------------------------------------------------

    def run_analysis(
        self, document: str | Mapping[str, Any], hidden: bool = False
    ) -> AnalysisReport:
        spec = document if isinstance(document, AnalysisSpec) else parse_analysis_spec(document)
        report = self.analysis.run_analysis(spec, export_root=self.layout.exports_dir)
        self.store.save_report(report.report_id, report.url_token, report.to_dict(),
                               hidden=hidden)
        return report
