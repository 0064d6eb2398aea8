// 2D/3D scatter scenes from exported analysis tables.
//
// Input rows are (x, y[, z], run_id, status) exactly as the API exports
// them; values pass through untouched (projection to screen space is
// rendering, not metric math).  Failed runs get distinct styling: the
// server already placed them at 1.2x the best successful ATE.

import type { DataTable } from "./types.js";

export interface ScatterPoint {
  x: number;
  y: number;
  z: number | null;
  runId: string;
  status: string;
  failed: boolean;
  screenX: number;
  screenY: number;
  depth: number;
}

export interface Viewport {
  width: number;
  height: number;
  margin: number;
}

export interface Rotation {
  yaw: number;    // radians, around the vertical axis
  pitch: number;  // radians, tilt
}

export interface ScatterScene {
  points: ScatterPoint[];
  is3d: boolean;
  ranges: { x: [number, number]; y: [number, number]; z: [number, number] | null };
}

function extent(values: number[]): [number, number] {
  if (values.length === 0) return [0, 1];
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  return [lo, hi];
}

function normalize(value: number, [lo, hi]: [number, number]): number {
  return (value - lo) / (hi - lo);
}

/** Orthographic yaw/pitch projection of a unit cube point to [0,1]^2.
 * Rotated cube corners reach sqrt(3)/2 from the center, so the result is
 * scaled by 1/sqrt(3) to stay inside the viewport at any rotation. */
export function projectUnit(
  nx: number,
  ny: number,
  nz: number,
  rotation: Rotation,
): { px: number; py: number; depth: number } {
  const cx = nx - 0.5;
  const cy = ny - 0.5;
  const cz = nz - 0.5;
  const cosY = Math.cos(rotation.yaw);
  const sinY = Math.sin(rotation.yaw);
  const x1 = cx * cosY + cy * sinY;
  const y1 = -cx * sinY + cy * cosY;
  const cosP = Math.cos(rotation.pitch);
  const sinP = Math.sin(rotation.pitch);
  const y2 = y1 * cosP - cz * sinP;
  const z2 = y1 * sinP + cz * cosP;
  const fit = Math.sqrt(3);
  return { px: x1 / fit + 0.5, py: 1 - (z2 / fit + 0.5), depth: y2 };
}

export function buildScatterScene(
  table: DataTable,
  viewport: Viewport,
  rotation: Rotation = { yaw: 0.6, pitch: 0.4 },
): ScatterScene {
  const is3d = table.columns.includes("z");
  const col = (name: string) => table.columns.indexOf(name);
  const ix = col("x");
  const iy = col("y");
  const iz = col("z");
  const irun = col("run_id");
  const istatus = col("status");
  if (ix < 0 || iy < 0 || irun < 0 || istatus < 0) {
    throw new Error(`not a scatter table: columns ${table.columns.join(",")}`);
  }

  const xs = table.rows.map((r) => Number(r[ix]));
  const ys = table.rows.map((r) => Number(r[iy]));
  const zs = is3d ? table.rows.map((r) => Number(r[iz])) : [];
  const ranges = {
    x: extent(xs),
    y: extent(ys),
    z: is3d ? extent(zs) : null,
  };

  const innerW = viewport.width - 2 * viewport.margin;
  const innerH = viewport.height - 2 * viewport.margin;
  const points: ScatterPoint[] = table.rows.map((row, i) => {
    const status = String(row[istatus]);
    const nx = normalize(xs[i], ranges.x);
    const ny = normalize(ys[i], ranges.y);
    let screenX: number;
    let screenY: number;
    let depth = 0;
    if (is3d) {
      const nz = normalize(zs[i], ranges.z!);
      const p = projectUnit(nx, ny, nz, rotation);
      screenX = viewport.margin + p.px * innerW;
      screenY = viewport.margin + p.py * innerH;
      depth = p.depth;
    } else {
      screenX = viewport.margin + nx * innerW;
      screenY = viewport.margin + (1 - ny) * innerH;
    }
    return {
      x: xs[i],
      y: ys[i],
      z: is3d ? zs[i] : null,
      runId: String(row[irun]),
      status,
      failed: status === "failed",
      screenX,
      screenY,
      depth,
    };
  });
  points.sort((a, b) => a.depth - b.depth); // painter's order for 3D
  return { points, is3d, ranges };
}

/** Nearest point within radius of the pointer; hover reveals run details. */
export function hitTest(
  scene: ScatterScene,
  mouseX: number,
  mouseY: number,
  radius = 8,
): ScatterPoint | null {
  let best: ScatterPoint | null = null;
  let bestDist = radius * radius;
  for (const point of scene.points) {
    const dx = point.screenX - mouseX;
    const dy = point.screenY - mouseY;
    const d = dx * dx + dy * dy;
    if (d <= bestDist) {
      best = point;
      bestDist = d;
    }
  }
  return best;
}

export function drawScatter(canvas: HTMLCanvasElement, scene: ScatterScene): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (const point of scene.points) {
    ctx.beginPath();
    if (point.failed) {
      // failed runs: hollow red squares on the penalty plane
      ctx.strokeStyle = "#c0392b";
      ctx.lineWidth = 1.5;
      ctx.strokeRect(point.screenX - 4, point.screenY - 4, 8, 8);
    } else {
      ctx.fillStyle = "#2c6fbb";
      ctx.arc(point.screenX, point.screenY, 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
