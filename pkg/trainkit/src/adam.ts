/** Adam over named nested-array parameters. */

import { Params, mapParams, zipParams } from "./bundle.js";

export class Adam {
  private m: Params;
  private v: Params;
  private t = 0;

  constructor(
    params: Params,
    readonly lr = 1e-4,
    readonly beta1 = 0.9,
    readonly beta2 = 0.999,
    readonly eps = 1e-8,
  ) {
    this.m = mapParams(params, () => 0);
    this.v = mapParams(params, () => 0);
  }

  step(params: Params, grads: Params): Params {
    this.t += 1;
    this.m = zipParams(this.m, grads, (m, g) => this.beta1 * m + (1 - this.beta1) * g);
    this.v = zipParams(this.v, grads, (v, g) => this.beta2 * v + (1 - this.beta2) * g * g);
    const bc1 = 1 - Math.pow(this.beta1, this.t);
    const bc2 = 1 - Math.pow(this.beta2, this.t);
    const mHat = mapParams(this.m, (m) => m / bc1);
    const vHat = mapParams(this.v, (v) => v / bc2);
    const update = zipParams(mHat, vHat, (m, v) => (this.lr * m) / (Math.sqrt(v) + this.eps));
    return zipParams(params, update, (p, u) => p - u);
  }
}

export function addParams(a: Params, b: Params): Params {
  return zipParams(a, b, (x, y) => x + y);
}
