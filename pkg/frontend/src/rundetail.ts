// Run detail view model: trajectory overlay plus CPU/RAM time series.
// Every series point is copied from an API table row, never derived.

import type { ProfilingResponse, RunRecord, TrajectoryResponse } from "./types.js";

export interface XySeries {
  label: string;
  points: { x: number; y: number }[];
}

export interface RunDetailViewModel {
  run: RunRecord;
  statusBadge: { text: string; kind: "ok" | "bad" };
  trajectory: { estimate: XySeries; reference: XySeries };
  cpu: XySeries;
  ram: XySeries;
  mapDownload: string | null;   // artifact name when the run saved a map
  partial: boolean;             // estimate covers fewer poses than reference
}

export function runDetailViewModel(
  run: RunRecord,
  trajectory: TrajectoryResponse,
  profiling: ProfilingResponse,
): RunDetailViewModel {
  const toXy = (rows: number[][], label: string): XySeries => ({
    label,
    // top-down overlay: x/y columns of "t x y z"
    points: rows.map((r) => ({ x: r[1], y: r[2] })),
  });
  const cpu: XySeries = {
    label: "cpu_cores",
    points: profiling.rows.map((r) => ({ x: r[0], y: r[1] })),
  };
  const ram: XySeries = {
    label: "ram_mb",
    points: profiling.rows.map((r) => ({ x: r[0], y: r[2] })),
  };
  return {
    run,
    statusBadge: {
      text: run.status,
      kind: run.status === "finished" ? "ok" : "bad",
    },
    trajectory: {
      estimate: toXy(trajectory.estimate, "estimate"),
      reference: toXy(trajectory.reference, "reference"),
    },
    cpu,
    ram,
    mapDownload: trajectory.map_artifact,
    partial: trajectory.estimate.length > 0 &&
      trajectory.estimate.length < trajectory.reference.length,
  };
}

export function drawLineChart(
  canvas: HTMLCanvasElement,
  series: XySeries[],
  colors: string[] = ["#2c6fbb", "#c0392b", "#27ae60"],
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const all = series.flatMap((s) => s.points);
  if (all.length === 0) return;
  const xs = all.map((p) => p.x);
  const ys = all.map((p) => p.y);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const spanX = x1 - x0 || 1;
  const spanY = y1 - y0 || 1;
  const margin = 24;
  const w = canvas.width - 2 * margin;
  const h = canvas.height - 2 * margin;
  series.forEach((s, k) => {
    ctx.strokeStyle = colors[k % colors.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.points.forEach((p, i) => {
      const px = margin + ((p.x - x0) / spanX) * w;
      const py = margin + (1 - (p.y - y0) / spanY) * h;
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  });
}
