import { describe, expect, it } from "vitest";
import { join } from "node:path";
import {
  loadBundle,
  mulberry32,
  randomBundle,
  saveBundle,
  ShapeError,
  validateBundle,
  WeightBundle,
} from "../src/bundle.js";
import { resnetForward } from "../src/resnet1d.js";
import { tempDir } from "./helpers.js";

const RESNET_DIMS = { in_channels: 3, width: 4, window: 20, out: 3, cov_head: false };

describe("weight bundles", () => {
  it("validates shapes and rejects tampering", () => {
    const b = randomBundle("resnet1d", RESNET_DIMS, mulberry32(1));
    validateBundle(b);
    const bad: WeightBundle = {
      ...b,
      params: { ...b.params, "conv0.w": [[0, 0, 0]] },
    };
    expect(() => validateBundle(bad)).toThrow(ShapeError);
    const missing = { ...b, params: { ...b.params } };
    delete (missing.params as Record<string, unknown>)["head_mean.b"];
    expect(() => validateBundle(missing)).toThrow(ShapeError);
  });

  it("round-trips through JSON with identical forward outputs", () => {
    const b = randomBundle("resnet1d", RESNET_DIMS, mulberry32(2));
    const path = join(tempDir(), "w.json");
    saveBundle(b, path);
    const back = loadBundle(path);
    const rand = mulberry32(3);
    const x = Array.from({ length: 3 }, () =>
      Array.from({ length: 20 }, () => rand() - 0.5),
    );
    const a = resnetForward(b, x).mean;
    const c = resnetForward(back, x).mean;
    for (let i = 0; i < 3; i++) expect(Math.abs(a[i] - c[i])).toBeLessThan(1e-12);
  });

  it("seeded init is deterministic", () => {
    const a = randomBundle("gru_vp", { in_dim: 2, hidden: [3, 4], out: 2 }, mulberry32(5));
    const b = randomBundle("gru_vp", { in_dim: 2, hidden: [3, 4], out: 2 }, mulberry32(5));
    expect(JSON.stringify(a)).toBe(JSON.stringify(b));
  });
});
