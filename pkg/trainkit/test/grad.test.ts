import { describe, expect, it } from "vitest";
import { mulberry32, Params, randomBundle, zipParams } from "../src/bundle.js";
import { loadLog } from "../src/csv.js";
import { gruBackward, gruForward } from "../src/gru.js";
import { lossDebiasGyro } from "../src/losses.js";
import { resnetBackward, resnetForward } from "../src/resnet1d.js";
import { fixtureLog, simulateLog } from "./helpers.js";

/** numeric gradient via central differences over every scalar in params */
function numericGrads(params: Params, f: () => number, eps = 1e-6): Params {
  const walk = (a: unknown): unknown => {
    if (Array.isArray(a)) {
      return a.map((_, i) => {
        const hold = a[i];
        if (Array.isArray(hold)) return (walk(hold) as unknown);
        a[i] = (hold as number) + eps;
        const fp = f();
        a[i] = (hold as number) - eps;
        const fm = f();
        a[i] = hold;
        return (fp - fm) / (2 * eps);
      });
    }
    return 0;
  };
  return Object.fromEntries(Object.entries(params).map(([k, v]) => [k, walk(v)]));
}

function maxRelErr(a: Params, b: Params): number {
  let worst = 0;
  const norm = (x: unknown): number => {
    if (Array.isArray(x)) return x.reduce((acc: number, v) => acc + norm(v), 0);
    return (x as number) * (x as number);
  };
  for (const k of Object.keys(a)) {
    const d = zipParams({ k: a[k] }, { k: b[k] }, (x, y) => x - y);
    const nd = Math.sqrt(norm(d["k"]));
    const na = Math.sqrt(norm(a[k]));
    const nb = Math.sqrt(norm(b[k]));
    worst = Math.max(worst, nd / Math.max(na, nb, 1e-8));
  }
  return worst;
}

describe("training gradients against central differences", () => {
  it("resnet parameter gradients", () => {
    const dims = { in_channels: 3, width: 4, window: 12, out: 3, cov_head: true };
    const b = randomBundle("resnet1d", dims, mulberry32(21), 1.0);
    const rand = mulberry32(22);
    const x = Array.from({ length: 3 }, () => Array.from({ length: 12 }, () => 2 * rand() - 1));
    const wm = [0.3, -0.7, 1.1];
    const wx = [0.5, 0.2, -0.4];
    const value = () => {
      const { mean, xi } = resnetForward(b, x);
      return wm.reduce((a, w, i) => a + w * mean[i], 0) + wx.reduce((a, w, i) => a + w * xi![i], 0);
    };
    const { cache } = resnetForward(b, x);
    const analytic = resnetBackward(b, cache, wm, wx);
    const numeric = numericGrads(b.params, value);
    expect(maxRelErr(analytic as Params, numeric)).toBeLessThan(1e-5);
  });

  it("gru parameter and input gradients", () => {
    const dims = { in_dim: 2, hidden: [3, 4], out: 2 };
    const b = randomBundle("gru_vp", dims, mulberry32(23), 1.0);
    const rand = mulberry32(24);
    const seq = Array.from({ length: 6 }, () => [2 * rand() - 1, 0.3]);
    const w = Array.from({ length: 6 }, () => [rand() - 0.5, rand() - 0.5]);
    const value = () => {
      const { out } = gruForward(b, seq);
      let acc = 0;
      for (let t = 0; t < 6; t++) for (let j = 0; j < 2; j++) acc += w[t][j] * out[t][j];
      return acc;
    };
    const { cache } = gruForward(b, seq);
    const { grads, dSeq } = gruBackward(b, cache, w);
    const numeric = numericGrads(b.params, value);
    expect(maxRelErr(grads as Params, numeric)).toBeLessThan(1e-5);
    // input gradient: perturb one sequence entry
    const eps = 1e-6;
    seq[3][0] += eps;
    const fp = value();
    seq[3][0] -= 2 * eps;
    const fm = value();
    seq[3][0] += eps;
    expect(Math.abs((fp - fm) / (2 * eps) - dSeq[3][0])).toBeLessThan(1e-6);
  });

  it("gyro-loss gradients through the quaternion chain", () => {
    const dir = fixtureLog("hoverlog", () => simulateLog("hover", 1.0, 31));
    const flight = loadLog(dir);
    const rand = mulberry32(25);
    const est = flight.t.map(() => [0.05 * rand(), 0.05 * rand(), 0.05 * rand()]);
    const { grads } = lossDebiasGyro(flight, est, 20, true);
    const eps = 1e-6;
    // spot-check a handful of sample gradients
    for (const t of [0, 7, 19, 25, 39]) {
      for (let j = 0; j < 3; j++) {
        est[t][j] += eps;
        const fp = lossDebiasGyro(flight, est, 20).value;
        est[t][j] -= 2 * eps;
        const fm = lossDebiasGyro(flight, est, 20).value;
        est[t][j] += eps;
        const num = (fp - fm) / (2 * eps);
        expect(Math.abs(num - grads[t][j])).toBeLessThan(1e-8 + 1e-4 * Math.abs(num));
      }
    }
  });
});
