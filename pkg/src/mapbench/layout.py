"""On-disk layout shared by the executor, store and service.

One campaign root holds everything::

    root/
      db.sqlite3                   embedded store
      datasets/<id>/<sequence>/    index.csv + groundtruth.txt per sequence
      prepared/<key>/              derived dataset variants (content-addressed)
      runs/<run_id>/unified.yaml   per-run workspace
      runs/<run_id>/results/       traj.txt, profiling.csv, finished, ...
      exports/                     analysis raw-data exports
"""

from __future__ import annotations

from pathlib import Path

TRAJ_FILENAME = "traj.txt"
PROFILING_FILENAME = "profiling.csv"
SENTINEL_FILENAME = "finished"
FAILURE_MARKER_FILENAME = "failed"
GROUND_TRUTH_FILENAME = "groundtruth.txt"
UNIFIED_CONFIG_FILENAME = "unified.yaml"


class DataLayout:
    def __init__(self, root: Path | str) -> None:
        # absolute: sandboxed workers run with their own cwd, so every path
        # handed to them must survive the chdir
        self.root = Path(root).resolve()

    def ensure(self) -> "DataLayout":
        for sub in ("datasets", "prepared", "runs", "exports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    @property
    def db_path(self) -> Path:
        return self.root / "db.sqlite3"

    @property
    def datasets_dir(self) -> Path:
        return self.root / "datasets"

    @property
    def prepared_dir(self) -> Path:
        return self.root / "prepared"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def exports_dir(self) -> Path:
        return self.root / "exports"

    def sequence_dir(self, dataset_id: str, sequence: str) -> Path:
        return self.datasets_dir / dataset_id / sequence

    def ground_truth_path(self, dataset_id: str, sequence: str) -> Path:
        return self.sequence_dir(dataset_id, sequence) / GROUND_TRUTH_FILENAME

    def prepared_variant_dir(self, key: str) -> Path:
        return self.prepared_dir / key

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def run_results_dir(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "results"

    def run_config_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / UNIFIED_CONFIG_FILENAME
