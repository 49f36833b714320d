/**
 * Desk-scale training of the de-bias and velocity/position networks on
 * simulator logs, exporting weight JSON consumable by the Python package.
 *
 * De-bias nets train on the integrated-increment MSE losses with
 * ground-truth attitude; the V-P cascade trains per axis on the sequence
 * loss, switching from MSE to NLL after a configurable epoch (default 20,
 * initial learning rate 1e-4).
 */

import {
  Params,
  ResnetDims,
  GruDims,
  WeightBundle,
  mulberry32,
  randomBundle,
  saveBundle,
  zipParams,
} from "./bundle.js";
import { Adam, addParams } from "./adam.js";
import { FlightLog, loadLog } from "./csv.js";
import { gruBackward, gruForward } from "./gru.js";
import { GRAVITY_W, lossDebiasAccel, lossDebiasGyro, lossVp, windowStarts } from "./losses.js";
import { resnetBackward, resnetForward } from "./resnet1d.js";
import { qToMatrix } from "./quat.js";

export class TrainingDiverged extends Error {}

export interface TrainSpec {
  logDirs: string[];
  valDir?: string;
  target?: "accel" | "gyro"; // de-bias channel
  window?: number; // history / integration window (paper: 20)
  width?: number; // resnet channel width
  epochs?: number;
  switchEpoch?: number; // MSE -> NLL (vp only; paper: 20)
  lr?: number; // paper: 1e-4
  seqLen?: number; // vp sequence length in windows
  gruHidden?: number[]; // paper: [64, 128, 256]
  seed?: number;
}

const defaults = {
  target: "accel" as const,
  window: 20,
  width: 32,
  epochs: 60,
  switchEpoch: 20,
  lr: 1e-4,
  seqLen: 50,
  gruHidden: [64, 128, 256],
  seed: 0,
};

export interface TrainResult {
  bundle: WeightBundle;
  history: number[];
  valLoss: number | null;
  baselineValLoss: number | null;
}

function channels(log: FlightLog, target: "accel" | "gyro"): number[][] {
  const src = target === "accel" ? log.accel : log.gyro;
  // channel-major (3 x N)
  return [0, 1, 2].map((c) => src.map((row) => row[c]));
}

/** Per-window net outputs broadcast to every sample of the window. */
function windowEstimates(bundle: WeightBundle, feats: number[][], windowN: number, n: number) {
  const est: number[][] = Array.from({ length: n }, () => [0, 0, 0]);
  const caches = [];
  const spans: Array<[number, number]> = [];
  for (let start = 0; start < n; start += windowN) {
    const lo = Math.min(start, n - windowN);
    const win = feats.map((ch) => ch.slice(lo, lo + windowN));
    const { mean, cache } = resnetForward(bundle, win);
    const hi = Math.min(start + windowN, n);
    for (let t = start; t < hi; t++) est[t] = mean;
    caches.push(cache);
    spans.push([start, hi]);
  }
  return { est, caches, spans };
}

export function debiasLoss(
  log: FlightLog,
  bundle: WeightBundle,
  target: "accel" | "gyro",
  windowN: number,
): number {
  const { est } = windowEstimates(bundle, channels(log, target), windowN, log.t.length);
  const fn = target === "accel" ? lossDebiasAccel : lossDebiasGyro;
  return fn(log, est, windowN).value;
}

export function trainDebias(spec: TrainSpec): TrainResult {
  const cfg = { ...defaults, ...spec };
  const logs = cfg.logDirs.map(loadLog);
  const val = cfg.valDir ? loadLog(cfg.valDir) : null;
  const dims: ResnetDims = {
    in_channels: 3,
    width: cfg.width,
    window: cfg.window,
    out: 3,
    cov_head: false,
  };
  let bundle = randomBundle("resnet1d", dims, mulberry32(cfg.seed));
  const adam = new Adam(bundle.params, cfg.lr);
  const lossFn = cfg.target === "accel" ? lossDebiasAccel : lossDebiasGyro;
  const history: number[] = [];
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    let grads: Params | null = null;
    let total = 0;
    for (const log of logs) {
      const n = log.t.length;
      const { est, caches, spans } = windowEstimates(
        bundle, channels(log, cfg.target), cfg.window, n,
      );
      const { value, grads: dEst } = lossFn(log, est, cfg.window, true);
      total += value;
      for (let w = 0; w < caches.length; w++) {
        const [lo, hi] = spans[w];
        const dMean = [0, 0, 0];
        for (let t = lo; t < hi; t++) {
          dMean[0] += dEst[t][0];
          dMean[1] += dEst[t][1];
          dMean[2] += dEst[t][2];
        }
        const g = resnetBackward(bundle, caches[w], dMean, null) as Params;
        grads = grads === null ? g : addParams(grads, g);
      }
    }
    total /= logs.length;
    if (!Number.isFinite(total)) throw new TrainingDiverged(`epoch ${epoch}: loss ${total}`);
    history.push(total);
    bundle = { ...bundle, params: adam.step(bundle.params, grads!) };
  }
  let valLoss: number | null = null;
  let baseline: number | null = null;
  if (val) {
    valLoss = debiasLoss(val, bundle, cfg.target, cfg.window);
    const zeroEst = val.t.map(() => [0, 0, 0]);
    baseline = lossFn(val, zeroEst, cfg.window).value;
  }
  return { bundle, history, valLoss, baselineValLoss: baseline };
}

// ---------------------------------------------------------------------------
// velocity/position cascade

export interface VpSequence {
  features: number[][]; // per window: [dv_axis, dt_window]
  doubleInt: number[]; // per window: double-integral feature
  dtWin: number;
  v0: number; // anchor velocity (axis component)
  vTrue: number[]; // relative to anchor, at window ends
  pTrue: number[];
}

/** Build per-axis windowed sequences from a log with truth de-biasing. */
export function buildVpSequences(
  log: FlightLog,
  axis: number,
  windowM: number,
  seqLen: number,
): VpSequence[] {
  const n = log.t.length;
  const dt = log.dt;
  const rots = log.qGI.map(qToMatrix);
  const starts = windowStarts(n, windowM);
  const winFeatures: Array<{ dv: number; dd: number; end: number }> = [];
  for (const i of starts) {
    let dv = 0;
    let dd = 0;
    // world z/y/x component of the gravity-compensated specific force
    for (let t = i; t < i + windowM; t++) {
      const deb = [
        log.accel[t][0] - log.bAccel[t][0],
        log.accel[t][1] - log.bAccel[t][1],
        log.accel[t][2] - log.bAccel[t][2],
      ];
      const r = rots[t];
      const s = r[axis][0] * deb[0] + r[axis][1] * deb[1] + r[axis][2] * deb[2] + GRAVITY_W[axis];
      dv += s * dt;
      dd += dv * dt;
    }
    winFeatures.push({ dv, dd, end: i + windowM });
  }
  const seqs: VpSequence[] = [];
  for (let s0 = 0; s0 + seqLen <= winFeatures.length; s0 += seqLen) {
    const anchorIdx = starts[s0];
    const v0 = log.v[anchorIdx][axis];
    const p0 = log.p[anchorIdx][axis];
    const chunk = winFeatures.slice(s0, s0 + seqLen);
    seqs.push({
      features: chunk.map((w) => [w.dv, windowM * dt]),
      doubleInt: chunk.map((w) => w.dd),
      dtWin: windowM * dt,
      v0,
      vTrue: chunk.map((w) => log.v[w.end][axis] - v0),
      pTrue: chunk.map((w) => log.p[w.end][axis] - p0),
    });
  }
  return seqs;
}

export function vpForward(
  vNet: WeightBundle,
  pNet: WeightBundle,
  seq: VpSequence,
) {
  const outV = gruForward(vNet, seq.features);
  const vHat = outV.out.map((y) => y[0]);
  const xiV = outV.out.map((y) => y[1]);
  const pFeat = vHat.map((v, j) => [(v + seq.v0) * seq.dtWin - seq.doubleInt[j], seq.dtWin]);
  const outP = gruForward(pNet, pFeat);
  return {
    vHat,
    xiV,
    pHat: outP.out.map((y) => y[0]),
    xiP: outP.out.map((y) => y[1]),
    cacheV: outV.cache,
    cacheP: outP.cache,
  };
}

export interface VpTrainResult {
  vNet: WeightBundle;
  pNet: WeightBundle;
  history: number[];
}

export function trainVpAxis(spec: TrainSpec, axis: number): VpTrainResult {
  const cfg = { ...defaults, ...spec };
  const dims: GruDims = { in_dim: 2, hidden: cfg.gruHidden, out: 2 };
  const rand = mulberry32(cfg.seed * 3 + axis);
  let vNet = randomBundle("gru_vp", dims, rand);
  let pNet = randomBundle("gru_vp", dims, rand);
  const seqs = cfg.logDirs.flatMap((d) =>
    buildVpSequences(loadLog(d), axis, cfg.window, cfg.seqLen),
  );
  if (seqs.length === 0) throw new Error("no complete sequences in the training logs");
  const adamV = new Adam(vNet.params, cfg.lr);
  const adamP = new Adam(pNet.params, cfg.lr);
  const history: number[] = [];
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    const phase = epoch < cfg.switchEpoch ? "mse" : "nll";
    let gV: Params | null = null;
    let gP: Params | null = null;
    let total = 0;
    for (const seq of seqs) {
      const fw = vpForward(vNet, pNet, seq);
      const loss = lossVp(
        [seq.vTrue], [seq.pTrue], [fw.vHat], [fw.pHat], [fw.xiV], [fw.xiP], phase,
      );
      total += loss.value;
      const dOutP = fw.pHat.map((_, j) => [loss.dP[0][j], loss.dXiP ? loss.dXiP[0][j] : 0]);
      const bp = gruBackward(pNet, fw.cacheP, dOutP);
      const dOutV = fw.vHat.map((_, j) => [
        loss.dV[0][j] + bp.dSeq[j][0] * seq.dtWin,
        loss.dXiV ? loss.dXiV[0][j] : 0,
      ]);
      const bv = gruBackward(vNet, fw.cacheV, dOutV);
      gP = gP === null ? (bp.grads as Params) : addParams(gP, bp.grads as Params);
      gV = gV === null ? (bv.grads as Params) : addParams(gV, bv.grads as Params);
    }
    total /= seqs.length;
    if (!Number.isFinite(total)) throw new TrainingDiverged(`epoch ${epoch}: loss ${total}`);
    history.push(total);
    vNet = { ...vNet, params: adamV.step(vNet.params, gV!) };
    pNet = { ...pNet, params: adamP.step(pNet.params, gP!) };
  }
  return { vNet, pNet, history };
}

export function trainVp(spec: TrainSpec): VpTrainResult[] {
  return [0, 1, 2].map((axis) => trainVpAxis(spec, axis));
}

export function exportWeights(bundle: WeightBundle, path: string): void {
  saveBundle(bundle, path);
}
