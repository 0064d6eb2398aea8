// Typed mirrors of the API resources (see ../src/mapbench/service/schema.json).
// The console renders these fields verbatim; it never recomputes metrics.

export interface Meta {
  mode: "view_only" | "workstation" | "cluster" | "cloud";
  no_new_analysis: boolean;
  version: string;
  nodes: { host: string; inner_address: string }[];
  docs_url: string;
}

export interface MetricStats {
  rmse: number;
  mean: number;
  median: number;
  std: number;
  min: number;
  max: number;
  sse: number;
  n: number;
}

export interface RunRecord {
  run_id: string;
  config_id: string;
  node_id: string;
  cpu_type: string;
  core_count: number;
  status: "finished" | "failed" | "timed_out";
  cpu_mean: number;
  cpu_max: number;
  ram_max: number;
  traj_length: number | null;
  started_at: number;
  finished_at: number;
  time_scale: number;
  reason: string | null;
}

export interface EvaluationRecord {
  run_id: string;
  ate: MetricStats;
  rpe: MetricStats | null;
  aligned: boolean;
  with_scale: boolean;
  evaluator_version: string;
}

export interface Configuration {
  id: string;
  algorithm_id: string;
  dataset_id: string;
  sequence: string;
  algorithm_params: Record<string, unknown>;
  dataset_params: Record<string, unknown>;
  remap: { from: string; to: string }[];
  comb_parent: string | null;
}

export interface AlgorithmSpec {
  id: string;
  name: string;
  sensor_modes: string[];
  image_ref: string;
  parameter_template: { key: string; default: unknown; kind: string }[];
}

export interface DatasetSpec {
  id: string;
  name: string;
  sequences: string[];
  topics: Record<string, string>;
  ground_truth_ref: string;
  native_rate: number;
  native_resolution: [number, number];
}

export interface DataTable {
  columns: string[];
  rows: (string | number)[][];
}

export interface AnalysisReport {
  report_id: string;
  url_token: string;
  group_name: string;
  group_description: string;
  run_ids: string[];
  outputs: Record<string, Record<string, DataTable>>;
  notices: string[];
  created_at: number;
  export_dir: string | null;
}

export interface TrajectoryResponse {
  columns: string[];
  estimate: number[][];
  reference: number[][];
  map_artifact: string | null;
  docs_url: string;
}

export interface ProfilingResponse {
  columns: string[];
  rows: number[][];
  docs_url: string;
}
