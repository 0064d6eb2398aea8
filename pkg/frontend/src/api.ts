// Thin typed client over the JSON API. fetch is injectable for tests.

import type {
  AlgorithmSpec,
  AnalysisReport,
  Configuration,
  DatasetSpec,
  EvaluationRecord,
  Meta,
  ProfilingResponse,
  RunRecord,
  TrajectoryResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "Content-Type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const response = await this.fetchFn(this.baseUrl + path, init);
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(
        response.status,
        payload.error ?? "error",
        payload.message ?? response.statusText,
      );
    }
    return payload as T;
  }

  meta(): Promise<Meta> {
    return this.request("GET", "/api/meta");
  }

  schema(): Promise<Record<string, unknown>> {
    return this.request("GET", "/api/schema");
  }

  algorithms(): Promise<AlgorithmSpec[]> {
    return this.request<{ items: AlgorithmSpec[] }>("GET", "/api/algorithms").then(
      (r) => r.items,
    );
  }

  datasets(): Promise<DatasetSpec[]> {
    return this.request<{ items: DatasetSpec[] }>("GET", "/api/datasets").then(
      (r) => r.items,
    );
  }

  configurations(combParent?: string): Promise<Configuration[]> {
    const query = combParent ? `?comb_parent=${encodeURIComponent(combParent)}` : "";
    return this.request<{ items: Configuration[] }>(
      "GET",
      `/api/configurations${query}`,
    ).then((r) => r.items);
  }

  createConfiguration(doc: Partial<Configuration>): Promise<Configuration> {
    return this.request("POST", "/api/configurations", doc);
  }

  previewCombination(doc: unknown): Promise<number> {
    return this.request<{ count: number }>(
      "POST",
      "/api/combination-specs/preview",
      doc,
    ).then((r) => r.count);
  }

  createCombination(doc: unknown): Promise<{ id: string; count: number; config_ids: string[] }> {
    return this.request("POST", "/api/combination-specs", doc);
  }

  createTasks(configIds: string[], maxParallel = 1, repeats = 1): Promise<RunRecord[]> {
    return this.request<{ items: RunRecord[] }>("POST", "/api/tasks", {
      config_ids: configIds,
      max_parallel: maxParallel,
      repeats,
    }).then((r) => r.items);
  }

  runs(configId?: string): Promise<RunRecord[]> {
    const query = configId ? `?config_id=${encodeURIComponent(configId)}` : "";
    return this.request<{ items: RunRecord[] }>("GET", `/api/runs${query}`).then(
      (r) => r.items,
    );
  }

  run(runId: string): Promise<RunRecord> {
    return this.request("GET", `/api/runs/${encodeURIComponent(runId)}`);
  }

  runProfiling(runId: string): Promise<ProfilingResponse> {
    return this.request("GET", `/api/runs/${encodeURIComponent(runId)}/profiling`);
  }

  runTrajectory(runId: string): Promise<TrajectoryResponse> {
    return this.request("GET", `/api/runs/${encodeURIComponent(runId)}/trajectory`);
  }

  evaluations(): Promise<EvaluationRecord[]> {
    return this.request<{ items: EvaluationRecord[] }>("GET", "/api/evaluations").then(
      (r) => r.items,
    );
  }

  evaluate(runIds: string[] | null, force = false): Promise<EvaluationRecord[]> {
    const body = runIds === null ? { all_unevaluated: true, force } : { run_ids: runIds, force };
    return this.request<{ items: EvaluationRecord[] }>("POST", "/api/evaluations", body).then(
      (r) => r.items,
    );
  }

  search(body: {
    target: "configurations" | "evaluations";
    algorithm_ids?: string[];
    dataset_ids?: string[];
    predicates?: string[];
    metric_bounds?: { metric: string; min?: number; max?: number }[];
  }): Promise<string[]> {
    return this.request<{ ids: string[] }>("POST", "/api/search", body).then((r) => r.ids);
  }

  createAnalysis(spec: unknown): Promise<AnalysisReport> {
    return this.request("POST", "/api/analyses", { spec });
  }

  analyses(): Promise<{ report_id: string; url_token: string; group_name: string }[]> {
    return this.request<{ items: { report_id: string; url_token: string; group_name: string }[] }>(
      "GET",
      "/api/analyses",
    ).then((r) => r.items);
  }

  analysisByToken(token: string): Promise<AnalysisReport> {
    return this.request("GET", `/api/analyses/by-token/${encodeURIComponent(token)}`);
  }

  exportUrl(token: string, filename: string): string {
    return `${this.baseUrl}/api/analyses/by-token/${encodeURIComponent(token)}/export/${encodeURIComponent(filename)}`;
  }

  exportFile(token: string, filename: string): Promise<string> {
    return this.fetchFn(this.exportUrl(token, filename)).then((r) => {
      if (!r.ok) throw new ApiError(r.status, "export_failed", filename);
      return r.text();
    });
  }
}
