// Analysis explorer: spec assembly, the editable template, export links.
//
// The editor works on the raw spec text (the API parses it server-side), or
// assembles a document from the form controls.  Export buttons download the
// API's CSV files unchanged.

import type { ApiClient } from "./api.js";
import type { AnalysisReport, DataTable } from "./types.js";

export const ANALYSIS_MODES = [
  "1_trajectory_comparison",
  "2_accuracy_metric_diagrams",
  "3_accuracy_metrics_comparison",
  "4_accuracy_histograms",
  "5_cpu_ram_usage_comparison",
  "6_2d_scatter",
  "7_3d_scatter",
  "repeatability_analysis",
] as const;

export type AnalysisMode = (typeof ANALYSIS_MODES)[number];

// Editable starting point, in the input format the API accepts verbatim.
export const SPEC_TEMPLATE = `group_name: "my analysis"
group_description: ""
evaluation_form:
  algorithm_dataset_type: 0
  3_accuracy_metrics_comparison:
    choose: 1
  7_3d_scatter:
    choose: 1
    x: frame_rate
    y: resolution_factor
    z: ate_rmse
configuration_choose:
  configuration_id: []
  comb_configuration_id: []
  limitation_rules:
    algorithm_id: []
    dataset_id: []
    parameters_value: []
    evaluation_value:
      ate_rmse_nolimitation: 1
      ate_rmse_minimum:
      ate_rmse_maximum:
  combination_rule:
    first_one: [2]
    first_rule: []
`;

export interface AnalysisFormState {
  groupName: string;
  description: string;
  modes: Partial<Record<AnalysisMode, Record<string, unknown>>>;
  configIds: string[];
  combIds: string[];
  algorithmIds: string[];
  datasetIds: string[];
  parameterPredicates: string[];   // "nFeatures => 2000" lines
  ateRmseMax: number | null;
}

/** Build the structured spec document from the form controls. */
export function specFromForm(state: AnalysisFormState): Record<string, unknown> {
  const form: Record<string, unknown> = { algorithm_dataset_type: 0 };
  for (const [mode, options] of Object.entries(state.modes)) {
    form[mode] = { choose: 1, ...options };
  }
  const evaluationValue: Record<string, unknown> = {};
  if (state.ateRmseMax !== null) {
    evaluationValue["ate_rmse_maximum"] = state.ateRmseMax;
    evaluationValue["ate_rmse_nolimitation"] = 0;
  }
  return {
    group_name: state.groupName,
    group_description: state.description,
    evaluation_form: form,
    configuration_choose: {
      configuration_id: state.configIds,
      comb_configuration_id: state.combIds,
      limitation_rules: {
        algorithm_id: state.algorithmIds,
        dataset_id: state.datasetIds,
        parameters_value: state.parameterPredicates,
        evaluation_value: evaluationValue,
      },
    },
  };
}

export interface ExportLink {
  filename: string;
  url: string;
}

/** One download link per exported table of the report. */
export function exportLinks(client: ApiClient, report: AnalysisReport): ExportLink[] {
  const links: ExportLink[] = [];
  for (const [mode, tables] of Object.entries(report.outputs)) {
    for (const name of Object.keys(tables)) {
      const filename = `${mode}__${name}.csv`;
      links.push({ filename, url: client.exportUrl(report.url_token, filename) });
    }
  }
  return links.sort((a, b) => a.filename.localeCompare(b.filename));
}

export function scatterTable(report: AnalysisReport): DataTable | null {
  const mode = report.outputs["7_3d_scatter"] ?? report.outputs["6_2d_scatter"];
  return mode?.["scatter"] ?? null;
}

/** Grouped mean/std rows of mode 3, for the comparison table view. */
export function groupedStatsRows(
  report: AnalysisReport,
): { configId: string; metric: string; mean: number; std: number; n: number }[] {
  const table =
    report.outputs["3_accuracy_metrics_comparison"]?.["grouped_stats"] ??
    report.outputs["repeatability_analysis"]?.["grouped_stats"];
  if (!table) return [];
  return table.rows.map((row) => ({
    configId: String(row[0]),
    metric: String(row[1]),
    mean: Number(row[2]),
    std: Number(row[3]),
    n: Number(row[4]),
  }));
}

/** Quick client-side syntax check mirroring the API's predicate grammar,
 * so typos surface inline before a request is made. */
export function validatePredicate(text: string): string | null {
  const m = /^\s*[A-Za-z_][A-Za-z0-9_]*\s*(=>|>=|<=|=|<|>)\s*[^<>=\s][^<>=]*$/.test(text);
  return m ? null : `cannot parse predicate: ${text}`;
}
