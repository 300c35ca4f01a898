#!/usr/bin/env node
/**
 * claimlink-ft: fine-tune the toy encoder and export stores.
 *
 * Exit codes follow the engine's convention: 0 success, 2 for invalid
 * input or config, 3 for a failure inside training itself.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import { ConfigError, loadConfig } from "./config.js";
import {
  buildTrainingExamples,
  DataError,
  loadCorpusTexts,
  loadNegativesFile,
  loadSplitAssignment,
} from "./data.js";
import { resolveModelRef } from "./encoder.js";
import { exportStore } from "./export.js";
import { lossCurveCsv, TrainError, trainModel } from "./train.js";

function fail(code: number, message: string): never {
  process.stderr.write(`claimlink-ft: ${message}\n`);
  process.exit(code);
}

export function runTrain(argv: string[]): void {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        config: { type: "string" },
        negatives: { type: "string" },
        base: { type: "string" },
        out: { type: "string" },
      },
      allowPositionals: false,
    });
  } catch (err) {
    fail(2, (err as Error).message);
  }
  const { config: configPath, negatives, base, out } = parsed.values;
  if (!configPath || !base || !out) {
    fail(2, "train requires --config, --base and --out");
  }

  try {
    const cfg = loadConfig(configPath);
    if (negatives) {
      cfg.negatives_path = negatives;
    }
    if (!cfg.negatives_path) {
      throw new ConfigError("no negatives file: set negatives_path or pass --negatives");
    }
    for (const key of ["posts_path", "claims_path", "pairs_path"] as const) {
      if (!cfg[key]) {
        throw new ConfigError(`config must set ${key}`);
      }
    }

    const corpus = loadCorpusTexts(cfg.posts_path, cfg.claims_path, cfg.pairs_path);
    const split = cfg.split_manifest_path
      ? loadSplitAssignment(cfg.split_manifest_path)
      : undefined;
    const { header, records } = loadNegativesFile(cfg.negatives_path);
    const examples = buildTrainingExamples(corpus, records, cfg.seed, split);

    const encoder = resolveModelRef(base, cfg.seed);
    const result = trainModel(encoder, examples, cfg, {
      negativesHeader: header,
      baseRef: base,
    });

    mkdirSync(out, { recursive: true });
    result.model.save(join(out, "model.json"));
    writeFileSync(join(out, "loss_curve.csv"), lossCurveCsv(result.steps));
    writeFileSync(join(out, "manifest.json"), JSON.stringify(result.manifest, null, 1) + "\n");

    const tag = `claimlink-ft:${base}`;
    const byId = (a: [string, string], b: [string, string]) => (a[0] < b[0] ? -1 : 1);
    const postItems = [...corpus.posts.entries()].sort(byId);
    const claimItems = [...corpus.claims.entries()].sort(byId);
    exportStore(result.model, postItems, tag, join(out, "queries.clnk"));
    exportStore(result.model, claimItems, tag, join(out, "claims.clnk"));

    const epochs = result.epochMeanLoss.map((l, i) => `epoch ${i} loss ${l.toFixed(6)}`);
    process.stdout.write(
      `trained on ${examples.length} examples for ${result.manifest.total_steps} steps\n` +
        epochs.join("\n") +
        `\nwrote model.json, loss_curve.csv, manifest.json, queries.clnk, claims.clnk to ${out}\n`,
    );
  } catch (err) {
    if (err instanceof ConfigError || err instanceof DataError) {
      fail(2, err.message);
    }
    if (err instanceof TrainError) {
      fail(3, err.message);
    }
    throw err;
  }
}

export function main(argv: string[]): void {
  const [command, ...rest] = argv;
  if (command === "train") {
    runTrain(rest);
    return;
  }
  if (command === "--help" || command === "-h" || command === undefined) {
    process.stdout.write(
      "usage: claimlink-ft train --config CFG [--negatives FILE] --base MODEL_REF --out DIR\n",
    );
    process.exit(command === undefined ? 2 : 0);
  }
  fail(2, `unknown command ${JSON.stringify(command)}`);
}

const isDirectRun =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;
if (isDirectRun) {
  main(process.argv.slice(2));
}
