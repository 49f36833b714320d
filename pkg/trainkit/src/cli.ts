/**
 * trainkit CLI: `trainkit debias|vp --spec spec.json`
 *
 * The spec file holds TrainSpec fields plus output paths:
 *   { "logDirs": [...], "valDir": "...", "target": "accel", "out": "w.json",
 *     "epochs": 60, ... }
 * For vp, "out" is a prefix; per-axis files get _v{x,y,z} / _p{x,y,z}.json.
 */

import { readFileSync } from "node:fs";
import { exportWeights, trainDebias, trainVp, TrainSpec } from "./train.js";

function usage(): never {
  console.error("usage: trainkit debias|vp --spec <file.json>");
  process.exit(1);
}

export function run(argv: string[]): number {
  const [cmd, ...rest] = argv;
  if (!cmd || (cmd !== "debias" && cmd !== "vp")) usage();
  const idx = rest.indexOf("--spec");
  if (idx < 0 || idx + 1 >= rest.length) usage();
  const doc = JSON.parse(readFileSync(rest[idx + 1], "utf-8")) as TrainSpec & {
    out: string;
  };
  if (!doc.out) usage();
  if (cmd === "debias") {
    const res = trainDebias(doc);
    exportWeights(res.bundle, doc.out);
    const tail = res.history[res.history.length - 1];
    console.log(
      `trained ${doc.target ?? "accel"} de-bias net: train loss ${tail.toExponential(3)}` +
        (res.valLoss !== null
          ? `, val ${res.valLoss!.toExponential(3)} (zero-output baseline ${res.baselineValLoss!.toExponential(3)})`
          : ""),
    );
    return 0;
  }
  const axes = trainVp(doc);
  const names = ["x", "y", "z"];
  axes.forEach((axis, i) => {
    exportWeights(axis.vNet, `${doc.out}_v${names[i]}.json`);
    exportWeights(axis.pNet, `${doc.out}_p${names[i]}.json`);
    console.log(
      `axis ${names[i]}: final loss ${axis.history[axis.history.length - 1].toExponential(3)}`,
    );
  });
  return 0;
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(run(process.argv.slice(2)));
}
