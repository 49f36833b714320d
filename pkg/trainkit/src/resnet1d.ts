/**
 * One-residual-block 1D conv net, mirroring the Python inference package:
 *
 *   h0 = relu(conv0(x)); r = conv2(relu(conv1(h0)))
 *   h1 = relu(h0 + r);   g = mean_t(h1)
 *   mean = head_mean g + b; xi = head_xi g + b (optional)
 *
 * Same-padded k=3 convolutions; forward runs in f64 so outputs agree with
 * the Python implementation to machine precision.
 */

import { ResnetDims, WeightBundle } from "./bundle.js";

type Mat = number[][]; // [channels][time] or generic 2-D

function convSame(x: Mat, w: number[][][], b: number[]): Mat {
  const cIn = x.length;
  const t = x[0].length;
  const cOut = w.length;
  const y: Mat = Array.from({ length: cOut }, () => new Array<number>(t).fill(0));
  for (let o = 0; o < cOut; o++) {
    for (let ti = 0; ti < t; ti++) {
      let acc = b[o];
      for (let c = 0; c < cIn; c++) {
        const row = x[c];
        const k = w[o][c];
        if (ti > 0) acc += k[0] * row[ti - 1];
        acc += k[1] * row[ti];
        if (ti + 1 < t) acc += k[2] * row[ti + 1];
      }
      y[o][ti] = acc;
    }
  }
  return y;
}

function convBackward(dy: Mat, x: Mat, w: number[][][]) {
  const cIn = x.length;
  const t = x[0].length;
  const cOut = w.length;
  const dw = w.map((oc) => oc.map((c) => c.map(() => 0)));
  const db = new Array<number>(cOut).fill(0);
  const dx: Mat = Array.from({ length: cIn }, () => new Array<number>(t).fill(0));
  for (let o = 0; o < cOut; o++) {
    for (let ti = 0; ti < t; ti++) {
      const g = dy[o][ti];
      db[o] += g;
      for (let c = 0; c < cIn; c++) {
        if (ti > 0) {
          dw[o][c][0] += g * x[c][ti - 1];
          dx[c][ti - 1] += g * w[o][c][0];
        }
        dw[o][c][1] += g * x[c][ti];
        dx[c][ti] += g * w[o][c][1];
        if (ti + 1 < t) {
          dw[o][c][2] += g * x[c][ti + 1];
          dx[c][ti + 1] += g * w[o][c][2];
        }
      }
    }
  }
  return { dw, db, dx };
}

const relu = (m: Mat): Mat => m.map((row) => row.map((v) => Math.max(v, 0)));

export interface ResnetCache {
  x: Mat;
  z0: Mat;
  h0: Mat;
  z1: Mat;
  a1: Mat;
  z2: Mat;
  h1: Mat;
  g: number[];
}

export function resnetForward(bundle: WeightBundle, window: Mat) {
  const d = bundle.dims as ResnetDims;
  if (window.length !== d.in_channels || window[0].length !== d.window) {
    throw new Error(`window shape [${window.length},${window[0]?.length}] != [${d.in_channels},${d.window}]`);
  }
  const p = bundle.params as Record<string, never>;
  const z0 = convSame(window, p["conv0.w"], p["conv0.b"]);
  const h0 = relu(z0);
  const z1 = convSame(h0, p["conv1.w"], p["conv1.b"]);
  const a1 = relu(z1);
  const r = convSame(a1, p["conv2.w"], p["conv2.b"]);
  const z2 = h0.map((row, i) => row.map((v, j) => v + r[i][j]));
  const h1 = relu(z2);
  const t = d.window;
  const g = h1.map((row) => row.reduce((a, b) => a + b, 0) / t);
  const headW = p["head_mean.w"] as number[][];
  const headB = p["head_mean.b"] as number[];
  const mean = headW.map((row, i) => row.reduce((a, wv, j) => a + wv * g[j], headB[i]));
  let xi: number[] | null = null;
  if (d.cov_head) {
    const xw = p["head_xi.w"] as number[][];
    const xb = p["head_xi.b"] as number[];
    xi = xw.map((row, i) => row.reduce((a, wv, j) => a + wv * g[j], xb[i]));
  }
  const cache: ResnetCache = { x: window, z0, h0, z1, a1, z2, h1, g };
  return { mean, xi, cache };
}

export function resnetBackward(
  bundle: WeightBundle,
  cache: ResnetCache,
  dMean: number[],
  dXi: number[] | null,
): Record<string, unknown> {
  const d = bundle.dims as ResnetDims;
  const p = bundle.params as Record<string, never>;
  const grads: Record<string, unknown> = {};
  const g = cache.g;
  const headW = p["head_mean.w"] as number[][];
  grads["head_mean.w"] = dMean.map((dm) => g.map((gv) => dm * gv));
  grads["head_mean.b"] = dMean.slice();
  const dg = g.map((_, j) => headW.reduce((a, row, i) => a + row[j] * dMean[i], 0));
  if (d.cov_head) {
    const dx = dXi ?? new Array<number>(d.out).fill(0);
    const xw = p["head_xi.w"] as number[][];
    grads["head_xi.w"] = dx.map((dv) => g.map((gv) => dv * gv));
    grads["head_xi.b"] = dx.slice();
    for (let j = 0; j < dg.length; j++) {
      dg[j] += xw.reduce((a, row, i) => a + row[j] * dx[i], 0);
    }
  }
  const t = d.window;
  const dh1 = cache.h1.map((row, i) => row.map(() => dg[i] / t));
  const dz2 = dh1.map((row, i) => row.map((v, j) => (cache.z2[i][j] > 0 ? v : 0)));
  const c2 = convBackward(dz2, cache.a1, p["conv2.w"]);
  const dz1 = c2.dx.map((row, i) => row.map((v, j) => (cache.z1[i][j] > 0 ? v : 0)));
  const c1 = convBackward(dz1, cache.h0, p["conv1.w"]);
  const dh0 = dz2.map((row, i) => row.map((v, j) => v + c1.dx[i][j]));
  const dz0 = dh0.map((row, i) => row.map((v, j) => (cache.z0[i][j] > 0 ? v : 0)));
  const c0 = convBackward(dz0, cache.x, p["conv0.w"]);
  grads["conv0.w"] = c0.dw;
  grads["conv0.b"] = c0.db;
  grads["conv1.w"] = c1.dw;
  grads["conv1.b"] = c1.db;
  grads["conv2.w"] = c2.dw;
  grads["conv2.b"] = c2.db;
  return grads;
}
