import { describe, expect, it } from "vitest";

import { runDetailViewModel } from "../src/rundetail.js";
import type { ProfilingResponse, RunRecord, TrajectoryResponse } from "../src/types.js";

const RUN: RunRecord = {
  run_id: "r1", config_id: "c1", node_id: "n1", cpu_type: "x", core_count: 2,
  status: "finished", cpu_mean: 1.2, cpu_max: 2.1, ram_max: 812.5,
  traj_length: 1.0, started_at: 0, finished_at: 1, time_scale: 0.01, reason: null,
};

const TRAJ: TrajectoryResponse = {
  columns: ["t", "x", "y", "z"],
  estimate: [[0, 1.5, 2.5, 0.1], [1, 1.6, 2.4, 0.1]],
  reference: [[0, 1.5, 2.5, 0.0], [1, 1.6, 2.5, 0.0], [2, 1.7, 2.6, 0.0]],
  map_artifact: "map.pcd",
  docs_url: "/wiki/runs",
};

const PROF: ProfilingResponse = {
  columns: ["t", "cpu_cores", "ram_mb"],
  rows: [[0.5, 1.0, 700], [1.0, 2.0, 812.5]],
  docs_url: "/wiki/runs",
};

describe("run detail view model", () => {
  it("copies every chart point from API rows, no recomputation", () => {
    const vm = runDetailViewModel(RUN, TRAJ, PROF);
    expect(vm.trajectory.estimate.points).toEqual([
      { x: 1.5, y: 2.5 }, { x: 1.6, y: 2.4 },
    ]);
    expect(vm.trajectory.reference.points).toHaveLength(3);
    expect(vm.cpu.points).toEqual([{ x: 0.5, y: 1.0 }, { x: 1.0, y: 2.0 }]);
    expect(vm.ram.points).toEqual([{ x: 0.5, y: 700 }, { x: 1.0, y: 812.5 }]);
  });

  it("flags partial trajectories and exposes the map artifact", () => {
    const vm = runDetailViewModel(RUN, TRAJ, PROF);
    expect(vm.partial).toBe(true);   // 2 estimated vs 3 reference poses
    expect(vm.mapDownload).toBe("map.pcd");
    expect(vm.statusBadge).toEqual({ text: "finished", kind: "ok" });
  });

  it("failed runs get a bad badge and keep whatever trajectory exists", () => {
    const failedRun = { ...RUN, status: "failed" as const, traj_length: null };
    const vm = runDetailViewModel(failedRun, TRAJ, PROF);
    expect(vm.statusBadge.kind).toBe("bad");
    expect(vm.trajectory.estimate.points.length).toBeGreaterThan(0);
  });
});
