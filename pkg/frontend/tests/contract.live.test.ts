// Contract tests against the real API: a server process is spawned from the
// sibling Python package and driven over HTTP, exactly as the browser would.

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { previewExpansion, BuilderState } from "../src/builder.js";
import { buildScatterScene } from "../src/scatter.js";
import { modeGates } from "../src/gating.js";
import type { AnalysisReport, DataTable, Meta } from "../src/types.js";

const STARTUP_MS = 30_000;

interface Server {
  proc: ChildProcess;
  base: string;
  stop: () => void;
}

async function startServer(root: string, mode: string, port: number): Promise<Server> {
  const proc = spawn("mapbench", ["--root", root, "--time-scale", "0.002", "serve"], {
    env: {
      ...process.env,
      MAPBENCH_MODE: mode,
      MAPBENCH_BIND_HOST: "127.0.0.1",
      MAPBENCH_BIND_PORT: String(port),
    },
    stdio: "ignore",
  });
  const base = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + STARTUP_MS;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${base}/api/meta`);
      if (response.ok) return { proc, base, stop: () => proc.kill() };
    } catch {
      /* not up yet */
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  proc.kill();
  throw new Error(`API did not come up on ${base}`);
}

// Table V monocular case: 2 algorithms x 6 resolutions x 5 rates
function tableVMonocularSpec(): BuilderState {
  const factors = [1, 0.8, 0.6, 0.5, 0.4, 0.2];
  return {
    specId: "comb-mono",
    base: {
      algorithm_id: "mock-accurate",
      dataset_id: "synth-a",
      sequence: "seq01",
      algorithm_params: { nFeatures: 1000, offset: 0, noise: 0.01, coverage: 1,
                          seed: 3, behavior: "ok" },
      dataset_params: { frame_rate: 20, resolution_factor: 1,
                        fx: 458.654, fy: 457.296, cx: 367.215, cy: 248.375 },
      remap: [],
    },
    multiValues: [{ key: "algorithm", text: "mock-accurate | mock-sloppy" }],
    linkedGroups: [
      {
        driver: "resolution_factor",
        rows: factors.map((f) => ({
          value: String(f),
          overrides: {
            fx: (458.654 * f).toFixed(3),
            fy: (457.296 * f).toFixed(3),
            cx: (367.215 * f).toFixed(3),
            cy: (248.375 * f).toFixed(3),
          },
        })),
      },
      {
        driver: "frame_rate",
        rows: [20, 10, 5, 2, 1].map((r) => ({ value: String(r), overrides: {} })),
      },
    ],
  };
}

describe("live API contract", () => {
  let root: string;
  let workstation: Server;
  let viewOnly: Server;
  let client: ApiClient;

  beforeAll(async () => {
    root = mkdtempSync(join(tmpdir(), "console-contract-"));
    execFileSync("mapbench", ["--root", root, "init", "--demo", "--frames", "20"]);
    const port = 8600 + Math.floor(Math.random() * 400);
    workstation = await startServer(root, "workstation", port);
    viewOnly = await startServer(root, "view_only", port + 400);
    client = new ApiClient(workstation.base);
  }, STARTUP_MS * 2 + 10_000);

  afterAll(() => {
    workstation?.stop();
    viewOnly?.stop();
    rmSync(root, { recursive: true, force: true });
  });

  it("builder preview shows the API's expansion count for the monocular case: 60", async () => {
    const result = await previewExpansion(client, tableVMonocularSpec());
    expect(result.issues).toEqual([]);
    expect(result.error).toBeNull();
    expect(result.count).toBe(60);
  }, 20_000);

  it("3D scatter renders the exported table incl. failed placement at 1.2x max ATE", async () => {
    const good = {
      id: "cfg-live-good",
      algorithm_id: "mock-accurate",
      dataset_id: "synth-a",
      sequence: "seq01",
      algorithm_params: { nFeatures: 2000, offset: 0, noise: 0.03, coverage: 1,
                          seed: 7, behavior: "ok" },
      dataset_params: { frame_rate: 20, resolution_factor: 1 },
      remap: [],
    };
    const lost = {
      ...good,
      id: "cfg-live-lost",
      algorithm_params: { ...good.algorithm_params, nFeatures: 500, coverage: 0.3 },
    };
    await client.createConfiguration(good as any);
    await client.createConfiguration(lost as any);
    const runs = await client.createTasks(["cfg-live-good", "cfg-live-lost"], 2);
    expect(runs).toHaveLength(2);
    expect(runs.every((r) => r.status === "finished")).toBe(true);
    const lostRun = runs.find((r) => r.config_id === "cfg-live-lost")!;
    expect(lostRun.traj_length).toBeLessThan(0.75);

    await client.evaluate(null);
    const report: AnalysisReport = await client.createAnalysis({
      group_name: "live scatter",
      evaluation_form: {
        "7_3d_scatter": { choose: 1, x: "nFeatures", y: "cpu_mean", z: "ate_rmse" },
      },
      configuration_choose: {
        configuration_id: ["cfg-live-good", "cfg-live-lost"],
      },
    });

    const table = report.outputs["7_3d_scatter"]["scatter"] as DataTable;
    expect(table.columns).toEqual(["x", "y", "z", "run_id", "status"]);
    const statusCol = table.columns.indexOf("status");
    const zCol = table.columns.indexOf("z");
    const successZ = table.rows
      .filter((r) => r[statusCol] === "success")
      .map((r) => Number(r[zCol]));
    const failedRows = table.rows.filter((r) => r[statusCol] === "failed");
    expect(successZ.length).toBeGreaterThan(0);
    expect(failedRows).toHaveLength(1);
    expect(Number(failedRows[0][zCol])).toBeCloseTo(1.2 * Math.max(...successZ), 9);

    // the console renders that exact table: verbatim values, distinct styling
    const scene = buildScatterScene(table, { width: 560, height: 420, margin: 30 });
    expect(scene.points).toHaveLength(table.rows.length);
    const failedPoint = scene.points.find((p) => p.failed)!;
    expect(failedPoint.z).toBeCloseTo(1.2 * Math.max(...successZ), 9);
    expect(scene.points.filter((p) => !p.failed)).toHaveLength(successZ.length);

    // export buttons download the API's raw CSV unchanged
    const csv = await client.exportFile(report.url_token, "7_3d_scatter__scatter.csv");
    const lines = csv.trim().split(/\r?\n/);
    expect(lines[0]).toBe("x,y,z,run_id,status");
    expect(lines.length).toBe(table.rows.length + 1);
  }, 90_000);

  it("view_only meta disables all mutating controls and the API enforces it", async () => {
    const voClient = new ApiClient(viewOnly.base);
    const meta: Meta = await voClient.meta();
    expect(meta.mode).toBe("view_only");
    const gates = modeGates(meta);
    expect(gates.canMutate).toBe(false);
    expect(gates.canCreateAnalysis).toBe(true);
    expect(gates.banner).toBeTruthy();

    await expect(voClient.createTasks(["cfg-live-good"])).rejects.toMatchObject({
      status: 403,
      code: "mode_violation",
    });
    await expect(
      voClient.createConfiguration({ id: "cfg-vo" } as any),
    ).rejects.toBeInstanceOf(ApiError);
  }, 20_000);

  it("console types only rely on fields the published schema declares", async () => {
    const schema = (await client.schema()) as any;
    const endpoints = Object.keys(schema.endpoints);
    for (const needed of [
      "GET /api/meta",
      "POST /api/combination-specs/preview",
      "POST /api/tasks",
      "GET /api/runs/{id}/profiling",
      "GET /api/runs/{id}/trajectory",
      "POST /api/analyses",
      "GET /api/analyses/by-token/{token}",
    ]) {
      expect(endpoints).toContain(needed);
    }
    expect(schema.types.run).toEqual(
      expect.arrayContaining(["run_id", "status", "traj_length", "cpu_mean", "ram_max"]),
    );
    expect(schema.types.scatter_row).toEqual(["x", "y", "z", "run_id", "status"]);
    // live meta response carries exactly what the schema promises
    const meta = (await client.meta()) as unknown as Record<string, unknown>;
    for (const field of schema.endpoints["GET /api/meta"].response) {
      expect(meta).toHaveProperty(field);
    }
  }, 20_000);
});
