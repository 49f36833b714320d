import { execFileSync } from "node:child_process";
import { mkdtempSync, writeFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));
export const PYBRIDGE = join(here, "pybridge.py");

export function tempDir(prefix = "trainkit-"): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

export function pyBridge(job: Record<string, unknown>): Record<string, never> {
  const dir = tempDir("job-");
  const jobFile = join(dir, "job.json");
  writeFileSync(jobFile, JSON.stringify(job));
  const out = execFileSync("python3", [PYBRIDGE, jobFile], { encoding: "utf-8" });
  return JSON.parse(out);
}

const SIM_CFG = (kind: string, duration: number, seed: number, extra = "") => `
seed = ${seed}

[sim]
kind = "${kind}"
duration = ${duration}
f_imu = 100.0
f_rotor = 50.0
${extra}

[noise]
sigma_gyro = 2e-3
sigma_accel = 1e-2
b_gyro0 = [0.02, -0.015, 0.025]
b_accel0 = [0.15, -0.1, 0.12]

[params]
mass = 1.0
tau = 1.1
d = [0.2, 0.2, 0.1]
`;

/** Generate a fixture log through the primary package's CLI. */
export function simulateLog(
  kind: string,
  duration: number,
  seed: number,
  extra = "",
): string {
  const dir = tempDir("log-");
  const cfg = join(dir, "cfg.toml");
  writeFileSync(cfg, SIM_CFG(kind, duration, seed, extra));
  const out = join(dir, "log");
  execFileSync("python3", ["-m", "dido.cli", "simulate", "--config", cfg, "--out", out], {
    encoding: "utf-8",
  });
  if (!existsSync(join(out, "imu.csv"))) throw new Error("simulation produced no log");
  return out;
}

// cache fixture logs across test files within a run
const cache = new Map<string, string>();

export function fixtureLog(key: string, make: () => string): string {
  if (!cache.has(key)) cache.set(key, make());
  return cache.get(key)!;
}
