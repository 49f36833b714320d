/**
 * Stacked GRU with a per-step linear head; (r, z, n) gate packing and zero
 * initial state, matching the Python inference package:
 *
 *   r = sig(W_ir x + b_ir + W_hr h + b_hr)
 *   z = sig(W_iz x + b_iz + W_hz h + b_hz)
 *   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
 *   h' = (1 - z) n + z h
 */

import { GruDims, WeightBundle } from "./bundle.js";

const sig = (x: number) => 1 / (1 + Math.exp(-x));

interface StepCache {
  x: number[];
  hPrev: number[];
  r: number[];
  z: number[];
  n: number[];
  hn: number[];
}

export interface GruCache {
  steps: StepCache[][];
  feats: number[][];
  seq: number[][];
}

function matVec(w: number[][], v: number[], out: number[]): void {
  for (let i = 0; i < w.length; i++) {
    let acc = 0;
    const row = w[i];
    for (let j = 0; j < v.length; j++) acc += row[j] * v[j];
    out[i] = acc;
  }
}

function cell(
  p: Record<string, never>,
  layer: number,
  h: number,
  x: number[],
  hPrev: number[],
) {
  const gi = new Array<number>(3 * h);
  const gh = new Array<number>(3 * h);
  matVec(p[`gru${layer}.w_ih`], x, gi);
  matVec(p[`gru${layer}.w_hh`], hPrev, gh);
  const bih = p[`gru${layer}.b_ih`] as number[];
  const bhh = p[`gru${layer}.b_hh`] as number[];
  const r = new Array<number>(h);
  const z = new Array<number>(h);
  const n = new Array<number>(h);
  const hn = new Array<number>(h);
  const hNew = new Array<number>(h);
  for (let i = 0; i < h; i++) {
    r[i] = sig(gi[i] + bih[i] + gh[i] + bhh[i]);
    z[i] = sig(gi[h + i] + bih[h + i] + gh[h + i] + bhh[h + i]);
    hn[i] = gh[2 * h + i] + bhh[2 * h + i];
    n[i] = Math.tanh(gi[2 * h + i] + bih[2 * h + i] + r[i] * hn[i]);
    hNew[i] = (1 - z[i]) * n[i] + z[i] * hPrev[i];
  }
  return { r, z, n, hn, hNew };
}

export function zeroState(bundle: WeightBundle): number[][] {
  return (bundle.dims as GruDims).hidden.map((h) => new Array<number>(h).fill(0));
}

export function gruStep(bundle: WeightBundle, x: number[], state: number[][]) {
  const d = bundle.dims as GruDims;
  const p = bundle.params as Record<string, never>;
  let inp = x;
  const next: number[][] = [];
  for (let l = 0; l < d.hidden.length; l++) {
    const { hNew } = cell(p, l, d.hidden[l], inp, state[l]);
    next.push(hNew);
    inp = hNew;
  }
  const hw = p["head.w"] as number[][];
  const hb = p["head.b"] as number[];
  const y = hw.map((row, i) => row.reduce((a, w, j) => a + w * inp[j], hb[i]));
  return { y, state: next };
}

export function gruForward(bundle: WeightBundle, seq: number[][]) {
  const d = bundle.dims as GruDims;
  const p = bundle.params as Record<string, never>;
  const state = zeroState(bundle);
  const steps: StepCache[][] = [];
  const feats: number[][] = [];
  for (const x of seq) {
    let inp = x;
    const stepCache: StepCache[] = [];
    for (let l = 0; l < d.hidden.length; l++) {
      const { r, z, n, hn, hNew } = cell(p, l, d.hidden[l], inp, state[l]);
      stepCache.push({ x: inp, hPrev: state[l], r, z, n, hn });
      state[l] = hNew;
      inp = hNew;
    }
    feats.push(state[state.length - 1].slice());
    steps.push(stepCache);
  }
  const hw = p["head.w"] as number[][];
  const hb = p["head.b"] as number[];
  const out = feats.map((f) => hw.map((row, i) => row.reduce((a, w, j) => a + w * f[j], hb[i])));
  const cache: GruCache = { steps, feats, seq };
  return { out, cache };
}

export function gruBackward(bundle: WeightBundle, cache: GruCache, dOut: number[][]) {
  const d = bundle.dims as GruDims;
  const p = bundle.params as Record<string, never>;
  const nLayers = d.hidden.length;
  const steps = cache.steps.length;

  const grads: Record<string, unknown> = {};
  for (let l = 0; l < nLayers; l++) {
    const h = d.hidden[l];
    const nin = (p[`gru${l}.w_ih`] as number[][])[0].length;
    grads[`gru${l}.w_ih`] = Array.from({ length: 3 * h }, () => new Array<number>(nin).fill(0));
    grads[`gru${l}.w_hh`] = Array.from({ length: 3 * h }, () => new Array<number>(h).fill(0));
    grads[`gru${l}.b_ih`] = new Array<number>(3 * h).fill(0);
    grads[`gru${l}.b_hh`] = new Array<number>(3 * h).fill(0);
  }
  const hw = p["head.w"] as number[][];
  const hTop = d.hidden[nLayers - 1];
  const gHeadW = Array.from({ length: hw.length }, () => new Array<number>(hTop).fill(0));
  const gHeadB = new Array<number>(hw.length).fill(0);
  const dFeats: number[][] = [];
  for (let t = 0; t < steps; t++) {
    const df = new Array<number>(hTop).fill(0);
    for (let i = 0; i < hw.length; i++) {
      const g = dOut[t][i];
      gHeadB[i] += g;
      for (let j = 0; j < hTop; j++) {
        gHeadW[i][j] += g * cache.feats[t][j];
        df[j] += g * hw[i][j];
      }
    }
    dFeats.push(df);
  }
  grads["head.w"] = gHeadW;
  grads["head.b"] = gHeadB;

  const dH: number[][] = d.hidden.map((h) => new Array<number>(h).fill(0));
  const dSeq: number[][] = cache.seq.map((x) => new Array<number>(x.length).fill(0));
  for (let t = steps - 1; t >= 0; t--) {
    for (let j = 0; j < hTop; j++) dH[nLayers - 1][j] += dFeats[t][j];
    let dxNext: number[] | null = null;
    for (let l = nLayers - 1; l >= 0; l--) {
      const h = d.hidden[l];
      const sc = cache.steps[t][l];
      const dh = dH[l];
      if (dxNext !== null) for (let j = 0; j < h; j++) dh[j] += dxNext[j];
      const dgi = new Array<number>(3 * h).fill(0);
      const dgh = new Array<number>(3 * h).fill(0);
      const dhPrev = new Array<number>(h).fill(0);
      for (let i = 0; i < h; i++) {
        const dz = dh[i] * (sc.hPrev[i] - sc.n[i]);
        const dn = dh[i] * (1 - sc.z[i]);
        dhPrev[i] = dh[i] * sc.z[i];
        const daN = dn * (1 - sc.n[i] * sc.n[i]);
        const dr = daN * sc.hn[i];
        const dHn = daN * sc.r[i];
        const daZ = dz * sc.z[i] * (1 - sc.z[i]);
        const daR = dr * sc.r[i] * (1 - sc.r[i]);
        dgi[i] = daR;
        dgi[h + i] = daZ;
        dgi[2 * h + i] = daN;
        dgh[i] = daR;
        dgh[h + i] = daZ;
        dgh[2 * h + i] = dHn;
      }
      const wIh = p[`gru${l}.w_ih`] as number[][];
      const wHh = p[`gru${l}.w_hh`] as number[][];
      const gIh = grads[`gru${l}.w_ih`] as number[][];
      const gHh = grads[`gru${l}.w_hh`] as number[][];
      const gBih = grads[`gru${l}.b_ih`] as number[];
      const gBhh = grads[`gru${l}.b_hh`] as number[];
      const dx = new Array<number>(sc.x.length).fill(0);
      for (let i = 0; i < 3 * h; i++) {
        gBih[i] += dgi[i];
        gBhh[i] += dgh[i];
        for (let j = 0; j < sc.x.length; j++) {
          gIh[i][j] += dgi[i] * sc.x[j];
          dx[j] += wIh[i][j] * dgi[i];
        }
        for (let j = 0; j < h; j++) {
          gHh[i][j] += dgh[i] * sc.hPrev[j];
          dhPrev[j] += wHh[i][j] * dgh[i];
        }
      }
      dH[l] = dhPrev;
      dxNext = dx;
    }
    for (let j = 0; j < dSeq[t].length; j++) dSeq[t][j] = dxNext![j];
  }
  return { grads, dSeq };
}
