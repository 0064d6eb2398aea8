// Single-page console over the campaign API: hash-routed pages for the
// catalog/builder, runs, and the analysis explorer.

import { ApiClient, ApiError } from "./api.js";
import {
  ANALYSIS_MODES,
  SPEC_TEMPLATE,
  exportLinks,
  groupedStatsRows,
  scatterTable,
  validatePredicate,
} from "./analysis.js";
import {
  BuilderState,
  previewExpansion,
  toCombinationDocument,
  validateBuilder,
} from "./builder.js";
import { clear, fmt, h, table } from "./dom.js";
import { applyGates, modeGates, ModeGates } from "./gating.js";
import { drawLineChart, runDetailViewModel } from "./rundetail.js";
import { buildScatterScene, drawScatter, hitTest, Rotation } from "./scatter.js";
import type { Meta } from "./types.js";

const client = new ApiClient("");
let meta: Meta;
let gates: ModeGates;

function el(id: string): HTMLElement {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id}`);
  return found;
}

function navigate(): void {
  const hash = location.hash || "#/runs";
  const [, page, arg] = hash.split("/");
  const root = clear(el("page"));
  const render: Record<string, () => Promise<void>> = {
    configs: () => renderConfigsPage(root),
    runs: arg ? () => renderRunDetail(root, arg) : () => renderRunsPage(root),
    analyses: arg ? () => renderReport(root, arg) : () => renderAnalysesPage(root),
  };
  void (render[page ?? "runs"] ?? (() => renderRunsPage(root)))();
  applyGates(document.body, gates);
}

// --- configurations + builder -------------------------------------------------

async function renderConfigsPage(root: HTMLElement): Promise<void> {
  const [algorithms, datasets, configs] = await Promise.all([
    client.algorithms(),
    client.datasets(),
    client.configurations(),
  ]);

  const state: BuilderState = {
    specId: `comb-${Date.now() % 100000}`,
    base: {
      algorithm_id: algorithms[0]?.id ?? "",
      dataset_id: datasets[0]?.id ?? "",
      sequence: datasets[0]?.sequences[0] ?? "",
      algorithm_params: Object.fromEntries(
        (algorithms[0]?.parameter_template ?? []).map((p) => [p.key, p.default]),
      ),
      dataset_params: { frame_rate: datasets[0]?.native_rate ?? 20, resolution_factor: 1 },
      remap: [],
    },
    multiValues: [{ key: "nFeatures", text: "500 | 1000 | 2000" }],
    linkedGroups: [],
  };

  const preview = h("span", { class: "preview" }, "…");
  const issues = h("div", { class: "issues" });

  async function refreshPreview(): Promise<void> {
    const result = await previewExpansion(client, state);
    clear(issues);
    preview.textContent =
      result.count !== null ? `${result.count} configurations` : "—";
    for (const issue of result.issues) {
      issues.append(h("div", { class: "issue" }, `${issue.field}: ${issue.message}`));
    }
    if (result.error) issues.append(h("div", { class: "issue" }, result.error));
  }

  const multiBox = h("div", {});
  function renderMulti(): void {
    clear(multiBox);
    state.multiValues.forEach((field, i) => {
      multiBox.append(
        h("div", { class: "row" },
          h("input", {
            value: field.key, placeholder: "key", "data-requires": "mutation",
            oninput: (ev) => {
              state.multiValues[i].key = (ev.target as HTMLInputElement).value;
              void refreshPreview();
            },
          }),
          h("input", {
            value: field.text, placeholder: "v1 | v2 | v3", class: "wide",
            "data-requires": "mutation",
            oninput: (ev) => {
              state.multiValues[i].text = (ev.target as HTMLInputElement).value;
              void refreshPreview();
            },
          }),
        ),
      );
    });
  }
  renderMulti();

  const submitOut = h("div", {});
  root.append(
    gates.banner ? h("div", { class: "banner" }, gates.banner) : h("span", {}),
    h("h2", {}, "Combination builder"),
    h("div", { class: "row" },
      h("label", {}, "spec id "),
      h("input", {
        value: state.specId, "data-requires": "mutation",
        oninput: (ev) => { state.specId = (ev.target as HTMLInputElement).value; },
      }),
    ),
    h("p", {}, "Multi-value axes ('|'-separated). Dataset-modifying keys ",
      h("code", {}, "frame_rate, resolution_factor"),
      " belong in linked groups."),
    multiBox,
    h("div", { class: "row" },
      h("button", {
        "data-requires": "mutation",
        onclick: () => {
          state.multiValues.push({ key: "", text: "" });
          renderMulti();
        },
      }, "+ axis"),
      h("button", { onclick: () => void refreshPreview() }, "preview"),
      preview,
    ),
    issues,
    h("div", { class: "row" },
      h("button", {
        "data-requires": "mutation",
        onclick: async () => {
          const bad = validateBuilder(state);
          if (bad.length > 0) return void refreshPreview();
          try {
            const created = await client.createCombination(toCombinationDocument(state));
            submitOut.textContent =
              `created ${created.count} configurations under ${created.id}`;
          } catch (err) {
            submitOut.textContent = err instanceof ApiError ? err.message : String(err);
          }
        },
      }, "create configurations"),
      submitOut,
    ),
    h("h2", {}, `Configurations (${configs.length})`),
    table(
      ["id", "algorithm", "dataset", "sequence", "comb_parent", ""],
      configs.slice(0, 200).map((c) => [
        c.id, c.algorithm_id, c.dataset_id, c.sequence, c.comb_parent ?? "",
        h("button", {
          "data-requires": "mutation",
          onclick: async (ev) => {
            (ev.target as HTMLButtonElement).disabled = true;
            await client.createTasks([c.id]);
            location.hash = "#/runs";
          },
        }, "run"),
      ]),
    ),
  );
  void refreshPreview();
}

// --- runs ------------------------------------------------------------------------

async function renderRunsPage(root: HTMLElement): Promise<void> {
  const runs = await client.runs();
  const searchBox = h("input", { class: "wide", placeholder: 'nFeatures => 2000' });
  const searchOut = h("div", {});
  root.append(
    gates.banner ? h("div", { class: "banner" }, gates.banner) : h("span", {}),
    h("h2", {}, `Runs (${runs.length})`),
    h("div", { class: "row" },
      searchBox,
      h("button", {
        onclick: async () => {
          const text = (searchBox as HTMLInputElement).value.trim();
          const syntax = text ? validatePredicate(text) : null;
          clear(searchOut);
          if (syntax) return void searchOut.append(h("div", { class: "issue" }, syntax));
          try {
            const ids = await client.search({
              target: "evaluations",
              predicates: text ? [text] : [],
            });
            searchOut.append(h("div", {}, `matches: ${ids.join(", ") || "none"}`));
          } catch (err) {
            searchOut.append(h("div", { class: "issue" },
              err instanceof ApiError ? err.message : String(err)));
          }
        },
      }, "search evaluations"),
      h("button", {
        "data-requires": "mutation",
        onclick: async () => {
          const fresh = await client.evaluate(null);
          searchOut.textContent = `evaluated ${fresh.length} run(s)`;
        },
      }, "evaluate all un-evaluated"),
    ),
    searchOut,
    table(
      ["run", "config", "status", "traj_length", "cpu mean/max", "ram max"],
      runs.map((r) => [
        h("a", { href: `#/runs/${r.run_id}` }, r.run_id),
        r.config_id,
        h("span", { class: r.status === "finished" ? "ok" : "bad" }, r.status),
        fmt(r.traj_length, 2),
        `${fmt(r.cpu_mean, 2)} / ${fmt(r.cpu_max, 2)}`,
        fmt(r.ram_max, 1),
      ]),
    ),
  );
}

async function renderRunDetail(root: HTMLElement, runId: string): Promise<void> {
  const [run, trajectory, profiling] = await Promise.all([
    client.run(runId),
    client.runTrajectory(runId),
    client.runProfiling(runId),
  ]);
  const vm = runDetailViewModel(run, trajectory, profiling);

  const trajCanvas = h("canvas", { width: "460", height: "340" });
  const cpuCanvas = h("canvas", { width: "460", height: "180" });
  const ramCanvas = h("canvas", { width: "460", height: "180" });
  root.append(
    h("h2", {}, `Run ${runId} `,
      h("span", { class: vm.statusBadge.kind }, vm.statusBadge.text),
      vm.partial ? h("span", { class: "bad" }, " (partial trajectory)") : h("span", {})),
    h("p", {}, `config ${run.config_id}, traj_length ${fmt(run.traj_length, 2)}, ` +
      `cpu ${fmt(run.cpu_mean, 2)}/${fmt(run.cpu_max, 2)} cores, ` +
      `ram ${fmt(run.ram_max, 1)} MB`),
    vm.mapDownload
      ? h("p", {}, "map artifact: ", h("code", {}, vm.mapDownload))
      : h("span", {}),
    h("h3", {}, "Trajectory vs ground truth (top-down)"), trajCanvas,
    h("h3", {}, "CPU (cores)"), cpuCanvas,
    h("h3", {}, "RAM (MB)"), ramCanvas,
  );
  drawLineChart(trajCanvas, [vm.trajectory.reference, vm.trajectory.estimate]);
  drawLineChart(cpuCanvas, [vm.cpu]);
  drawLineChart(ramCanvas, [vm.ram]);
}

// --- analyses ------------------------------------------------------------------------

async function renderAnalysesPage(root: HTMLElement): Promise<void> {
  const reports = await client.analyses();
  const editor = h("textarea", {
    class: "editor", "data-requires": "analysis",
  }) as HTMLTextAreaElement;
  editor.value = SPEC_TEMPLATE;
  const out = h("div", {});
  root.append(
    gates.banner ? h("div", { class: "banner" }, gates.banner) : h("span", {}),
    h("h2", {}, "Analysis explorer"),
    h("p", {}, `modes: ${ANALYSIS_MODES.join(", ")}`),
    editor,
    h("div", { class: "row" },
      h("button", {
        "data-requires": "analysis",
        onclick: async () => {
          try {
            const report = await client.createAnalysis(editor.value);
            location.hash = `#/analyses/${report.url_token}`;
          } catch (err) {
            out.textContent = err instanceof ApiError ? err.message : String(err);
          }
        },
      }, "run analysis"),
      out,
    ),
    h("h2", {}, `Reports (${reports.length})`),
    table(
      ["report", "group", "open"],
      reports.map((r) => [
        r.report_id,
        r.group_name,
        h("a", { href: `#/analyses/${r.url_token}` }, "view"),
      ]),
    ),
  );
}

async function renderReport(root: HTMLElement, token: string): Promise<void> {
  const report = await client.analysisByToken(token);
  root.append(h("h2", {}, `${report.group_name} `, h("code", {}, report.report_id)));
  for (const notice of report.notices) {
    root.append(h("div", { class: "banner" }, notice));
  }

  const stats = groupedStatsRows(report);
  if (stats.length > 0) {
    root.append(
      h("h3", {}, "Grouped accuracy statistics"),
      table(
        ["config", "metric", "mean", "std", "n"],
        stats.map((s) => [s.configId, s.metric, fmt(s.mean, 6), fmt(s.std, 6), s.n]),
      ),
    );
  }

  const scatter = scatterTable(report);
  if (scatter) {
    const canvas = h("canvas", { width: "560", height: "420" }) as HTMLCanvasElement;
    const hover = h("div", { class: "hover" });
    const rotation: Rotation = { yaw: 0.6, pitch: 0.4 };
    let scene = buildScatterScene(scatter, { width: 560, height: 420, margin: 30 }, rotation);
    const redraw = () => {
      scene = buildScatterScene(scatter, { width: 560, height: 420, margin: 30 }, rotation);
      drawScatter(canvas, scene);
    };
    canvas.addEventListener("mousemove", (ev) => {
      const rect = canvas.getBoundingClientRect();
      const hit = hitTest(scene, ev.clientX - rect.left, ev.clientY - rect.top);
      hover.textContent = hit
        ? `${hit.runId} [${hit.status}] x=${hit.x} y=${hit.y}` +
          (hit.z !== null ? ` z=${hit.z}` : "")
        : "";
    });
    canvas.addEventListener("mousedown", () => {
      rotation.yaw += 0.25;   // simple orbit on click
      redraw();
    });
    root.append(h("h3", {}, "Scatter (click to orbit, hover for run details)"),
                canvas, hover);
    redraw();
  }

  const links = exportLinks(client, report);
  if (links.length > 0) {
    root.append(
      h("h3", {}, "Raw data"),
      h("ul", {}, ...links.map((l) =>
        h("li", {}, h("a", { href: l.url, download: l.filename }, l.filename)))),
    );
  }
}

// --- boot ---------------------------------------------------------------------------

async function boot(): Promise<void> {
  meta = await client.meta();
  gates = modeGates(meta);
  el("mode").textContent = `${meta.mode}${meta.no_new_analysis ? " (no new analysis)" : ""}`;
  (el("wiki") as HTMLAnchorElement).href = meta.docs_url;
  window.addEventListener("hashchange", navigate);
  navigate();
}

void boot();
