/**
 * Training losses over integrated IMU increments plus the sequence
 * velocity/position loss, numerically identical to the Python package
 * (cross-checked in the tests to 1e-9).
 *
 * Velocity increments are gravity-compensated: the accelerometer model puts
 * +R^T g inside the measurement, so integrating R (a_meas - b_hat) yields
 * dv - g_world T, and g_world = [0, 0, -9.8] is added back.
 */

import { FlightLog } from "./csv.js";
import {
  Quat,
  lmat,
  qexp,
  qexpJac,
  qlog,
  qlogJac,
  qmul,
  qToMatrix,
  rmat,
} from "./quat.js";

export const GRAVITY_W = [0.0, 0.0, -9.8];

export function windowStarts(nSamples: number, windowN: number): number[] {
  const starts: number[] = [];
  for (let i = 0; i < nSamples - windowN; i += windowN) starts.push(i);
  if (starts.length === 0) throw new Error(`segment too short for window ${windowN}`);
  return starts;
}

function matTVec(m: number[][], v: number[]): number[] {
  return [
    m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
    m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
    m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
  ];
}

function matVec3(m: number[][], v: number[]): number[] {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

export interface LossResult {
  value: number;
  /** dL/d(bias estimate) per sample, (N,3); zero outside complete windows */
  grads: number[][];
}

export function lossDebiasAccel(
  log: FlightLog,
  bAHat: number[][],
  windowN: number,
  withGrads = false,
): LossResult {
  const dt = log.dt;
  const starts = windowStarts(log.t.length, windowN);
  const rots = log.qGI.map(qToMatrix);
  let total = 0;
  const grads = withGrads ? log.t.map(() => [0, 0, 0]) : [];
  for (const i of starts) {
    const dvHat = [GRAVITY_W[0] * windowN * dt, GRAVITY_W[1] * windowN * dt, GRAVITY_W[2] * windowN * dt];
    for (let t = i; t < i + windowN; t++) {
      const deb = [
        log.accel[t][0] - bAHat[t][0],
        log.accel[t][1] - bAHat[t][1],
        log.accel[t][2] - bAHat[t][2],
      ];
      const w = matVec3(rots[t], deb);
      dvHat[0] += w[0] * dt;
      dvHat[1] += w[1] * dt;
      dvHat[2] += w[2] * dt;
    }
    const err = [
      log.v[i + windowN][0] - log.v[i][0] - dvHat[0],
      log.v[i + windowN][1] - log.v[i][1] - dvHat[1],
      log.v[i + windowN][2] - log.v[i][2] - dvHat[2],
    ];
    total += err[0] * err[0] + err[1] * err[1] + err[2] * err[2];
    if (withGrads) {
      for (let t = i; t < i + windowN; t++) {
        const g = matTVec(rots[t], err); // R^T err
        grads[t][0] += 2 * g[0] * dt;
        grads[t][1] += 2 * g[1] * dt;
        grads[t][2] += 2 * g[2] * dt;
      }
    }
  }
  const nw = starts.length;
  if (withGrads) {
    for (const g of grads) {
      g[0] /= nw;
      g[1] /= nw;
      g[2] /= nw;
    }
  }
  return { value: total / nw, grads };
}

export function lossDebiasGyro(
  log: FlightLog,
  bWHat: number[][],
  windowN: number,
  withGrads = false,
): LossResult {
  const dt = log.dt;
  const starts = windowStarts(log.t.length, windowN);
  let total = 0;
  const grads = withGrads ? log.t.map(() => [0, 0, 0]) : [];
  const CONJ = [1, -1, -1, -1];
  for (const i of starts) {
    const factors: Quat[] = [];
    let qHat: Quat = [1, 0, 0, 0];
    for (let t = i; t < i + windowN; t++) {
      const phi: [number, number, number] = [
        (log.gyro[t][0] - bWHat[t][0]) * dt,
        (log.gyro[t][1] - bWHat[t][1]) * dt,
        (log.gyro[t][2] - bWHat[t][2]) * dt,
      ];
      const e = qexp(phi);
      factors.push(e);
      qHat = qmul(qHat, e);
    }
    const q0 = log.qGI[i];
    const q1 = log.qGI[i + windowN];
    const qRel = qmul([q0[0] * CONJ[0], q0[1] * CONJ[1], q0[2] * CONJ[2], q0[3] * CONJ[3]], q1);
    const m = qmul([qHat[0], -qHat[1], -qHat[2], -qHat[3]], qRel);
    const e = qlog(m);
    total += e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
    if (withGrads) {
      const dE = [2 * e[0], 2 * e[1], 2 * e[2]];
      const Jlog = qlogJac(m); // (3,4)
      const dM = [0, 0, 0, 0];
      for (let c = 0; c < 4; c++) {
        for (let r = 0; r < 3; r++) dM[c] += Jlog[r][c] * dE[r];
      }
      // m = R4(qRel) C q_hat -> dL/dq_hat = (R4(qRel) C)^T dM
      const R4 = rmat(qRel);
      const dQhat = [0, 0, 0, 0];
      for (let c = 0; c < 4; c++) {
        for (let r = 0; r < 4; r++) dQhat[c] += R4[r][c] * CONJ[c] * dM[r];
      }
      // prefix/suffix products around each factor
      const prefixes: Quat[] = [[1, 0, 0, 0]];
      for (let k = 0; k < windowN - 1; k++) prefixes.push(qmul(prefixes[k], factors[k]));
      let suffix: Quat = [1, 0, 0, 0];
      for (let idx = windowN - 1; idx >= 0; idx--) {
        const t = i + idx;
        const L4 = lmat(prefixes[idx]);
        const S4 = rmat(suffix);
        // dq_hat/dE = L4(prefix) R4(suffix); chain transposed onto dQhat
        const dEt = [0, 0, 0, 0];
        for (let c = 0; c < 4; c++) {
          let acc = 0;
          for (let r = 0; r < 4; r++) {
            let lr = 0;
            for (let k2 = 0; k2 < 4; k2++) lr += L4[r][k2] * S4[k2][c];
            acc += lr * dQhat[r];
          }
          dEt[c] = acc;
        }
        const phi: [number, number, number] = [
          (log.gyro[t][0] - bWHat[t][0]) * dt,
          (log.gyro[t][1] - bWHat[t][1]) * dt,
          (log.gyro[t][2] - bWHat[t][2]) * dt,
        ];
        const Jexp = qexpJac(phi); // (4,3)
        for (let j = 0; j < 3; j++) {
          let acc = 0;
          for (let r = 0; r < 4; r++) acc += Jexp[r][j] * dEt[r];
          grads[t][j] += -dt * acc;
        }
        suffix = qmul(factors[idx], suffix);
      }
    }
  }
  const nw = starts.length;
  if (withGrads) {
    for (const g of grads) {
      g[0] /= nw;
      g[1] /= nw;
      g[2] /= nw;
    }
  }
  return { value: total / nw, grads };
}

export interface VpLossGrads {
  value: number;
  dV: number[][];
  dP: number[][];
  dXiV: number[][] | null;
  dXiP: number[][] | null;
}

export function lossVp(
  vTrue: number[][],
  pTrue: number[][],
  vHat: number[][],
  pHat: number[][],
  xiV: number[][] | null,
  xiP: number[][] | null,
  phase: "mse" | "nll",
): VpLossGrads {
  const nBatch = vTrue.length;
  const nSteps = vTrue[0].length;
  const nm = nBatch * nSteps;
  let value = 0;
  const dV = vTrue.map((row) => row.map(() => 0));
  const dP = pTrue.map((row) => row.map(() => 0));
  const dXiV = phase === "nll" ? vTrue.map((row) => row.map(() => 0)) : null;
  const dXiP = phase === "nll" ? pTrue.map((row) => row.map(() => 0)) : null;
  for (let b = 0; b < nBatch; b++) {
    for (let j = 0; j < nSteps; j++) {
      const ev = vTrue[b][j] - vHat[b][j];
      const ep = pTrue[b][j] - pHat[b][j];
      if (phase === "mse") {
        value += ev * ev + ep * ep;
        dV[b][j] = -ev / nm;
        dP[b][j] = -ep / nm;
      } else {
        if (!xiV || !xiP) throw new Error("nll phase needs xi");
        const iv = Math.exp(-2 * xiV[b][j]);
        const ip = Math.exp(-2 * xiP[b][j]);
        value += 2 * xiV[b][j] + 2 * xiP[b][j] + ev * ev * iv + ep * ep * ip;
        dV[b][j] = (-ev * iv) / nm;
        dP[b][j] = (-ep * ip) / nm;
        dXiV![b][j] = (1 - ev * ev * iv) / nm;
        dXiP![b][j] = (1 - ep * ep * ip) / nm;
      }
    }
  }
  return { value: value / (2 * nm), dV, dP, dXiV, dXiP };
}
