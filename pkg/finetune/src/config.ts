/**
 * Training configuration.
 *
 * Defaults are the final supervised hyper-parameter values; a config
 * file only needs to name what it overrides. Every loaded config is
 * validated before training starts and echoed verbatim into the
 * training manifest so a run can be reproduced from its outputs alone.
 */

import { readFileSync } from "node:fs";

export interface TrainConfig {
  /** Peak AdamW step size. Zero is allowed and makes training a no-op. */
  learning_rate: number;
  batch_size: number;
  /** Steps of linear ramp from zero to the peak learning rate. */
  warmup_steps: number;
  epochs: number;
  /** Mass moved off the gold column of each target distribution. */
  label_smoothing: number;
  /** Only cosine is supported. */
  similarity: string;
  /** Multiplier applied to similarities before the softmax. */
  similarity_scale: number;
  weight_decay: number;
  /** Multiplier applied to the learning rate after the cut point. */
  decay_factor: number;
  /** Fraction of total steps after which decay_factor kicks in. */
  cut_fraction: number;
  /** Global gradient-norm ceiling. */
  clip_value: number;
  /** Mined negatives file; the CLI --negatives flag overrides it. */
  negatives_path: string;
  seed: number;
  /** Corpus files the examples and exported stores are built from. */
  posts_path: string;
  claims_path: string;
  pairs_path: string;
  /** Split manifest used for the train-only containment check. */
  split_manifest_path: string;
}

export const DEFAULTS: TrainConfig = {
  learning_rate: 1e-8,
  batch_size: 8,
  warmup_steps: 1600,
  epochs: 3,
  label_smoothing: 0.1,
  similarity: "cosine",
  similarity_scale: 20,
  weight_decay: 8e-5,
  decay_factor: 0.38,
  cut_fraction: 0.3,
  clip_value: 1,
  negatives_path: "",
  seed: 0,
  posts_path: "",
  claims_path: "",
  pairs_path: "",
  split_manifest_path: "",
};

const NUMERIC_KEYS: (keyof TrainConfig)[] = [
  "learning_rate",
  "batch_size",
  "warmup_steps",
  "epochs",
  "label_smoothing",
  "similarity_scale",
  "weight_decay",
  "decay_factor",
  "cut_fraction",
  "clip_value",
  "seed",
];

const STRING_KEYS: (keyof TrainConfig)[] = [
  "similarity",
  "negatives_path",
  "posts_path",
  "claims_path",
  "pairs_path",
  "split_manifest_path",
];

export class ConfigError extends Error {}

export function validateConfig(cfg: TrainConfig): void {
  const positive: [string, number][] = [
    ["batch_size", cfg.batch_size],
    ["warmup_steps", cfg.warmup_steps],
    ["epochs", cfg.epochs],
    ["similarity_scale", cfg.similarity_scale],
    ["clip_value", cfg.clip_value],
  ];
  for (const [name, value] of positive) {
    if (!(Number.isFinite(value) && value > 0)) {
      throw new ConfigError(`${name} must be positive, got ${value}`);
    }
  }
  for (const name of ["batch_size", "warmup_steps", "epochs", "seed"] as const) {
    if (!Number.isInteger(cfg[name])) {
      throw new ConfigError(`${name} must be an integer, got ${cfg[name]}`);
    }
  }
  if (!(cfg.learning_rate >= 0 && Number.isFinite(cfg.learning_rate))) {
    throw new ConfigError(`learning_rate must be >= 0, got ${cfg.learning_rate}`);
  }
  if (!(cfg.weight_decay >= 0 && Number.isFinite(cfg.weight_decay))) {
    throw new ConfigError(`weight_decay must be >= 0, got ${cfg.weight_decay}`);
  }
  if (!(cfg.label_smoothing >= 0 && cfg.label_smoothing < 1)) {
    throw new ConfigError(`label_smoothing must be in [0, 1), got ${cfg.label_smoothing}`);
  }
  if (!(cfg.decay_factor > 0 && cfg.decay_factor <= 1)) {
    throw new ConfigError(`decay_factor must be in (0, 1], got ${cfg.decay_factor}`);
  }
  if (!(cfg.cut_fraction >= 0 && cfg.cut_fraction <= 1)) {
    throw new ConfigError(`cut_fraction must be in [0, 1], got ${cfg.cut_fraction}`);
  }
  if (cfg.seed < 0) {
    throw new ConfigError(`seed must be >= 0, got ${cfg.seed}`);
  }
  if (cfg.similarity !== "cosine") {
    throw new ConfigError(`similarity must be "cosine", got ${JSON.stringify(cfg.similarity)}`);
  }
}

/** Merge a parsed JSON document over the defaults; unknown keys are errors. */
export function configFromDocument(doc: unknown): TrainConfig {
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ConfigError("config document must be a JSON object");
  }
  const cfg: TrainConfig = { ...DEFAULTS };
  for (const [key, value] of Object.entries(doc as Record<string, unknown>)) {
    if (NUMERIC_KEYS.includes(key as keyof TrainConfig)) {
      if (typeof value !== "number") {
        throw new ConfigError(`${key} must be a number, got ${JSON.stringify(value)}`);
      }
      (cfg as unknown as Record<string, number>)[key] = value;
    } else if (STRING_KEYS.includes(key as keyof TrainConfig)) {
      if (typeof value !== "string") {
        throw new ConfigError(`${key} must be a string, got ${JSON.stringify(value)}`);
      }
      (cfg as unknown as Record<string, string>)[key] = value;
    } else {
      throw new ConfigError(`unknown config key ${JSON.stringify(key)}`);
    }
  }
  validateConfig(cfg);
  return cfg;
}

export function loadConfig(path: string): TrainConfig {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new ConfigError(`cannot read config ${path}: ${(err as Error).message}`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch (err) {
    throw new ConfigError(`${path} is not valid JSON: ${(err as Error).message}`);
  }
  return configFromDocument(doc);
}
