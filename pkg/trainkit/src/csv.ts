/**
 * Loader for the simulator's CSV flight logs (imu.csv + truth.csv; the
 * rotor stream is not needed for de-bias or velocity/position training).
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { Quat } from "./quat.js";

export interface FlightLog {
  t: number[];
  gyro: number[][]; // (N,3)
  accel: number[][];
  qGI: Quat[];
  p: number[][];
  v: number[][];
  bGyro: number[][];
  bAccel: number[][];
  dt: number;
}

export function parseCsv(path: string, expectedCols: number): number[][] {
  const text = readFileSync(path, "utf-8");
  const lines = text.split("\n").filter((l) => l.trim().length > 0);
  const rows: number[][] = [];
  for (let i = 1; i < lines.length; i++) {
    const parts = lines[i].split(",").map(Number);
    if (parts.length !== expectedCols) {
      throw new Error(`${path}:${i + 1}: got ${parts.length} columns, expected ${expectedCols}`);
    }
    if (parts.some((v) => Number.isNaN(v))) {
      throw new Error(`${path}:${i + 1}: non-numeric value`);
    }
    rows.push(parts);
  }
  return rows;
}

function median(xs: number[]): number {
  const s = [...xs].sort((a, b) => a - b);
  const m = s.length >> 1;
  return s.length % 2 ? s[m] : 0.5 * (s[m - 1] + s[m]);
}

export function loadLog(dir: string): FlightLog {
  const imu = parseCsv(join(dir, "imu.csv"), 7);
  const truth = parseCsv(join(dir, "truth.csv"), 20);
  if (imu.length !== truth.length) {
    throw new Error("imu/truth row-count mismatch");
  }
  const t = imu.map((r) => r[0]);
  const diffs = t.slice(1).map((v, i) => v - t[i]);
  return {
    t,
    gyro: imu.map((r) => r.slice(1, 4)),
    accel: imu.map((r) => r.slice(4, 7)),
    qGI: truth.map((r) => [r[1], r[2], r[3], r[4]] as Quat),
    p: truth.map((r) => r.slice(5, 8)),
    v: truth.map((r) => r.slice(8, 11)),
    bGyro: truth.map((r) => r.slice(11, 14)),
    bAccel: truth.map((r) => r.slice(14, 17)),
    dt: median(diffs),
  };
}
