/**
 * A deliberately small trainable text encoder.
 *
 * Texts are hashed into a fixed bag-of-words feature vector, then
 * projected by a trainable matrix and unit-normalized. That is the
 * whole model: the projection is the only parameter, gradients have a
 * closed form, and everything runs in plain float64 so two runs with
 * the same seed produce identical bytes.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { fnv1a, deriveRng } from "./rng.js";

/** Sparse L2-normalized feature vector. */
export interface Features {
  indices: number[];
  values: number[];
}

const TOKEN_RE = /[\p{L}\p{N}]+/gu;

export function tokenize(text: string): string[] {
  return text.toLowerCase().match(TOKEN_RE) ?? [];
}

/** The hash bucket a single token lands in. */
export function bucketOf(token: string, featureDim: number): number {
  return fnv1a(token) % featureDim;
}

/**
 * Hash tokens into counts, then L2-normalize. Distinct tokens may share
 * a bucket; the collision is part of the model, not an error. Texts
 * with no word characters at all cannot be embedded.
 */
export function features(text: string, featureDim: number): Features {
  const counts = new Map<number, number>();
  for (const token of tokenize(text)) {
    const bucket = bucketOf(token, featureDim);
    counts.set(bucket, (counts.get(bucket) ?? 0) + 1);
  }
  if (counts.size === 0) {
    throw new Error(`text has no tokens to embed: ${JSON.stringify(text.slice(0, 40))}`);
  }
  const indices = [...counts.keys()].sort((a, b) => a - b);
  let norm = 0;
  for (const idx of indices) {
    const c = counts.get(idx)!;
    norm += c * c;
  }
  norm = Math.sqrt(norm);
  return { indices, values: indices.map((idx) => counts.get(idx)! / norm) };
}

export interface EmbedWithInput {
  embedding: Float64Array;
  /** Pre-normalization projection and its norm, needed for gradients. */
  projected: Float64Array;
  norm: number;
  features: Features;
}

export class HashedEncoder {
  readonly featureDim: number;
  readonly embedDim: number;
  /** Row-major embedDim x featureDim projection. */
  readonly weights: Float64Array;

  constructor(featureDim: number, embedDim: number, weights?: Float64Array) {
    if (!Number.isInteger(featureDim) || featureDim < 1) {
      throw new Error(`featureDim must be a positive integer, got ${featureDim}`);
    }
    if (!Number.isInteger(embedDim) || embedDim < 1) {
      throw new Error(`embedDim must be a positive integer, got ${embedDim}`);
    }
    this.featureDim = featureDim;
    this.embedDim = embedDim;
    if (weights !== undefined) {
      if (weights.length !== featureDim * embedDim) {
        throw new Error(
          `weights length ${weights.length} does not match ${embedDim}x${featureDim}`,
        );
      }
      this.weights = weights;
    } else {
      this.weights = new Float64Array(featureDim * embedDim);
    }
  }

  /** Fresh encoder with uniform init scaled to the layer fan. */
  static init(featureDim: number, embedDim: number, seed: number): HashedEncoder {
    const rng = deriveRng(seed, "encoder-init");
    const bound = Math.sqrt(6 / (featureDim + embedDim));
    const weights = new Float64Array(featureDim * embedDim);
    for (let i = 0; i < weights.length; i++) {
      weights[i] = (rng() * 2 - 1) * bound;
    }
    return new HashedEncoder(featureDim, embedDim, weights);
  }

  clone(): HashedEncoder {
    return new HashedEncoder(this.featureDim, this.embedDim, this.weights.slice());
  }

  /** Embed plus the intermediates backprop needs. */
  embedWithInput(text: string): EmbedWithInput {
    const feats = features(text, this.featureDim);
    const projected = new Float64Array(this.embedDim);
    for (let r = 0; r < this.embedDim; r++) {
      const rowOffset = r * this.featureDim;
      let acc = 0;
      for (let s = 0; s < feats.indices.length; s++) {
        acc += this.weights[rowOffset + feats.indices[s]] * feats.values[s];
      }
      projected[r] = acc;
    }
    let norm = 0;
    for (let r = 0; r < this.embedDim; r++) {
      norm += projected[r] * projected[r];
    }
    norm = Math.sqrt(norm);
    if (!(norm > 1e-12)) {
      throw new Error(`projection collapsed to zero for ${JSON.stringify(text.slice(0, 40))}`);
    }
    const embedding = new Float64Array(this.embedDim);
    for (let r = 0; r < this.embedDim; r++) {
      embedding[r] = projected[r] / norm;
    }
    return { embedding, projected, norm, features: feats };
  }

  embed(text: string): Float64Array {
    return this.embedWithInput(text).embedding;
  }

  save(path: string): void {
    const doc = {
      kind: "hashed-encoder",
      feature_dim: this.featureDim,
      embed_dim: this.embedDim,
      weights: Array.from(this.weights),
    };
    writeFileSync(path, JSON.stringify(doc));
  }

  static load(path: string): HashedEncoder {
    let doc: Record<string, unknown>;
    try {
      doc = JSON.parse(readFileSync(path, "utf-8"));
    } catch (err) {
      throw new Error(`cannot read encoder ${path}: ${(err as Error).message}`);
    }
    if (doc.kind !== "hashed-encoder") {
      throw new Error(`${path} is not a saved encoder`);
    }
    const featureDim = doc.feature_dim as number;
    const embedDim = doc.embed_dim as number;
    const weights = doc.weights;
    if (!Array.isArray(weights) || weights.length !== featureDim * embedDim) {
      throw new Error(`${path}: weights do not match declared dimensions`);
    }
    return new HashedEncoder(featureDim, embedDim, Float64Array.from(weights as number[]));
  }
}

/** Parse a model reference: either "hashed:FEATxEMB" or a saved model path. */
export function resolveModelRef(ref: string, seed: number): HashedEncoder {
  const match = /^hashed:(\d+)x(\d+)$/.exec(ref);
  if (match) {
    return HashedEncoder.init(Number(match[1]), Number(match[2]), seed);
  }
  return HashedEncoder.load(ref);
}
