/**
 * Weight bundles: named nested-array parameters plus an architecture tag,
 * serialized as a single JSON document {arch, dims, params}. The layout
 * matches the Python package exactly so exported files load there without
 * shape errors.
 */

import { readFileSync, writeFileSync } from "node:fs";

export type Params = Record<string, unknown>;

export interface ResnetDims {
  in_channels: number;
  width: number;
  window: number;
  out: number;
  cov_head: boolean;
}

export interface GruDims {
  in_dim: number;
  hidden: number[];
  out: number;
}

export interface WeightBundle {
  arch: "resnet1d" | "gru_vp";
  dims: ResnetDims | GruDims;
  params: Params;
}

export class ShapeError extends Error {}

type Shape = number[];

function shapeOf(arr: unknown): Shape {
  const shape: Shape = [];
  let a = arr;
  while (Array.isArray(a)) {
    shape.push(a.length);
    a = a[0];
  }
  return shape;
}

function sameShape(a: Shape, b: Shape): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

export function resnetShapes(d: ResnetDims): Record<string, Shape> {
  const s: Record<string, Shape> = {
    "conv0.w": [d.width, d.in_channels, 3],
    "conv0.b": [d.width],
    "conv1.w": [d.width, d.width, 3],
    "conv1.b": [d.width],
    "conv2.w": [d.width, d.width, 3],
    "conv2.b": [d.width],
    "head_mean.w": [d.out, d.width],
    "head_mean.b": [d.out],
  };
  if (d.cov_head) {
    s["head_xi.w"] = [d.out, d.width];
    s["head_xi.b"] = [d.out];
  }
  return s;
}

export function gruShapes(d: GruDims): Record<string, Shape> {
  const sizes = [d.in_dim, ...d.hidden];
  const s: Record<string, Shape> = {};
  for (let l = 0; l < d.hidden.length; l++) {
    const h = sizes[l + 1];
    s[`gru${l}.w_ih`] = [3 * h, sizes[l]];
    s[`gru${l}.w_hh`] = [3 * h, h];
    s[`gru${l}.b_ih`] = [3 * h];
    s[`gru${l}.b_hh`] = [3 * h];
  }
  s["head.w"] = [d.out, sizes[sizes.length - 1]];
  s["head.b"] = [d.out];
  return s;
}

export function validateBundle(b: WeightBundle): void {
  const expected =
    b.arch === "resnet1d"
      ? resnetShapes(b.dims as ResnetDims)
      : b.arch === "gru_vp"
        ? gruShapes(b.dims as GruDims)
        : null;
  if (expected === null) throw new ShapeError(`unknown architecture ${b.arch}`);
  for (const [name, shape] of Object.entries(expected)) {
    if (!(name in b.params)) throw new ShapeError(`missing parameter ${name}`);
    const got = shapeOf(b.params[name]);
    if (!sameShape(got, shape)) {
      throw new ShapeError(`${name}: shape [${got}], expected [${shape}]`);
    }
  }
  for (const name of Object.keys(b.params)) {
    if (!(name in expected)) throw new ShapeError(`unexpected parameter ${name}`);
  }
}

export function saveBundle(b: WeightBundle, path: string): void {
  validateBundle(b);
  writeFileSync(path, JSON.stringify(b));
}

export function loadBundle(path: string): WeightBundle {
  const doc = JSON.parse(readFileSync(path, "utf-8")) as WeightBundle;
  validateBundle(doc);
  return doc;
}

// -- array helpers (desk-scale nets: plain nested arrays are fine) ----------

export function zeros(shape: Shape): unknown {
  if (shape.length === 0) return 0;
  return Array.from({ length: shape[0] }, () => zeros(shape.slice(1)));
}

export function mapParams(p: Params, f: (x: number) => number): Params {
  const walk = (a: unknown): unknown =>
    Array.isArray(a) ? a.map(walk) : f(a as number);
  return Object.fromEntries(Object.entries(p).map(([k, v]) => [k, walk(v)]));
}

export function zipParams(
  a: Params,
  b: Params,
  f: (x: number, y: number) => number,
): Params {
  const walk = (x: unknown, y: unknown): unknown =>
    Array.isArray(x)
      ? x.map((xi, i) => walk(xi, (y as unknown[])[i]))
      : f(x as number, y as number);
  return Object.fromEntries(Object.entries(a).map(([k, v]) => [k, walk(v, b[k])]));
}

/** Deterministic Gaussian init matching the Python random_bundle scaling. */
export function randomBundle(
  arch: WeightBundle["arch"],
  dims: ResnetDims | GruDims,
  rand: () => number,
  scale = 0.3,
): WeightBundle {
  const shapes = arch === "resnet1d" ? resnetShapes(dims as ResnetDims) : gruShapes(dims as GruDims);
  const params: Params = {};
  for (const [name, shape] of Object.entries(shapes)) {
    if (name.endsWith(".b")) {
      params[name] = zeros(shape);
    } else {
      const fanIn = shape.slice(1).reduce((a, b) => a * b, 1);
      const sd = scale / Math.sqrt(fanIn);
      const fill = (sh: Shape): unknown =>
        sh.length === 0
          ? sd * gauss(rand)
          : Array.from({ length: sh[0] }, () => fill(sh.slice(1)));
      params[name] = fill(shape);
    }
  }
  return { arch, dims, params };
}

function gauss(rand: () => number): number {
  // Box-Muller
  let u = 0;
  while (u === 0) u = rand();
  const v = rand();
  return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
}

/** mulberry32: tiny seedable PRNG, deterministic across platforms. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
