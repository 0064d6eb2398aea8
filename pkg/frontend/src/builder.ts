// Configuration builder: single and combination configs.
//
// Multi-value fields take "v1 | v2 | v3" text; keys that modify the dataset
// (frame rate, resolution factor) are entered through linked-group tables so
// dependent parameters travel with the driver value.  The expansion count
// shown in the preview always comes from the API, never from local math.

import type { ApiClient } from "./api.js";

export const DATASET_MODIFYING_KEYS = ["frame_rate", "resolution_factor"];

export interface MultiValueField {
  key: string;
  text: string;          // raw "a | b | c" input
}

export interface LinkedOptionRow {
  value: string;                      // driver value as typed
  overrides: Record<string, string>;  // dependent key -> value as typed
}

export interface LinkedGroupInput {
  driver: string;
  rows: LinkedOptionRow[];
}

export interface BuilderState {
  specId: string;
  base: {
    algorithm_id: string;
    dataset_id: string;
    sequence: string;
    algorithm_params: Record<string, unknown>;
    dataset_params: Record<string, unknown>;
    remap: { from: string; to: string }[];
  };
  multiValues: MultiValueField[];
  linkedGroups: LinkedGroupInput[];
}

export interface FieldIssue {
  field: string;
  message: string;
}

/** Split "a | b | c"; empty items are reported, not silently dropped. */
export function splitMultiValueText(text: string): { items: string[]; error: string | null } {
  if (!text.trim()) return { items: [], error: "value list is empty" };
  const items = text.split("|").map((s) => s.trim());
  if (items.some((s) => s.length === 0)) {
    return { items: [], error: "empty item in value list" };
  }
  return { items, error: null };
}

function coerce(text: string): unknown {
  if (/^-?\d+$/.test(text)) return parseInt(text, 10);
  if (/^-?\d*\.\d+([eE][+-]?\d+)?$/.test(text) || /^-?\d+[eE][+-]?\d+$/.test(text)) {
    return parseFloat(text);
  }
  if (text === "true") return true;
  if (text === "false") return false;
  return text;
}

export function validateBuilder(state: BuilderState): FieldIssue[] {
  const issues: FieldIssue[] = [];
  if (!state.specId.trim()) issues.push({ field: "specId", message: "id required" });
  const seen = new Set<string>();
  for (const field of state.multiValues) {
    if (!field.key.trim()) {
      issues.push({ field: "multi", message: "key required" });
      continue;
    }
    if (seen.has(field.key)) {
      issues.push({ field: field.key, message: "duplicate axis" });
    }
    seen.add(field.key);
    if (DATASET_MODIFYING_KEYS.includes(field.key)) {
      issues.push({
        field: field.key,
        message: `${field.key} modifies the dataset; use a linked group`,
      });
    }
    const { error } = splitMultiValueText(field.text);
    if (error) issues.push({ field: field.key, message: error });
  }
  for (const group of state.linkedGroups) {
    if (!group.driver.trim()) {
      issues.push({ field: "linked", message: "driver key required" });
      continue;
    }
    if (seen.has(group.driver)) {
      issues.push({ field: group.driver, message: "duplicate axis" });
    }
    seen.add(group.driver);
    if (group.rows.length === 0) {
      issues.push({ field: group.driver, message: "linked group needs options" });
    }
    const values = group.rows.map((r) => r.value.trim());
    if (new Set(values).size !== values.length) {
      issues.push({ field: group.driver, message: "duplicate driver values" });
    }
  }
  return issues;
}

/** Assemble the API combination-spec document from builder state. */
export function toCombinationDocument(state: BuilderState): Record<string, unknown> {
  const multi: Record<string, unknown[]> = {};
  for (const field of state.multiValues) {
    const { items } = splitMultiValueText(field.text);
    multi[field.key] = items.map(coerce);
  }
  const groups = state.linkedGroups.map((group) => ({
    driver: group.driver,
    options: group.rows.map((row) => ({
      value: coerce(row.value),
      overrides: Object.fromEntries(
        Object.entries(row.overrides).map(([k, v]) => [k, coerce(v)]),
      ),
    })),
  }));
  return {
    id: state.specId,
    base: { id: `${state.specId}-base`, ...state.base },
    multi_values: multi,
    linked_groups: groups,
  };
}

export interface PreviewResult {
  count: number | null;   // the API's number, displayed verbatim
  issues: FieldIssue[];
  error: string | null;   // API-side validation message, shown inline
}

/** Live preview: local input validation first, then the API's count. */
export async function previewExpansion(
  client: ApiClient,
  state: BuilderState,
): Promise<PreviewResult> {
  const issues = validateBuilder(state);
  if (issues.length > 0) return { count: null, issues, error: null };
  try {
    const count = await client.previewCombination(toCombinationDocument(state));
    return { count, issues: [], error: null };
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    return { count: null, issues: [], error: message };
  }
}
