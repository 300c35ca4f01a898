/**
 * Contrastive trainer for the hashed encoder.
 *
 * Each batch ranks every example's gold claim against all other gold
 * claims in the batch plus every mined negative, as one softmax per
 * post over scaled cosine similarities. The loss is cross-entropy
 * against a label-smoothed target: with smoothing e over C candidate
 * columns the gold column carries (1 - e) + e/C and every other column
 * e/C. The learning rate ramps linearly over the warmup steps, follows
 * a cosine to zero afterwards, and is additionally multiplied by
 * decay_factor once cut_fraction of all steps have passed. Updates are
 * AdamW with decoupled weight decay, after clipping the global
 * gradient norm to clip_value.
 *
 * All arithmetic is scalar float64, so a (seed, config, data) triple
 * fully determines the final weights.
 */

import type { TrainConfig } from "./config.js";
import type { NegativesHeader, TrainingExample } from "./data.js";
import { HashedEncoder, type EmbedWithInput } from "./encoder.js";
import { deriveRng, shuffleInPlace } from "./rng.js";

export interface StepRecord {
  epoch: number;
  step: number;
  lr: number;
  loss: number;
}

export interface TrainManifest {
  config: TrainConfig;
  negatives: { strategy: string; k: number; seed: number } | null;
  base_ref: string;
  feature_dim: number;
  embed_dim: number;
  n_examples: number;
  total_steps: number;
  epoch_mean_loss: number[];
  final_loss: number;
  deterministic: boolean;
  determinism_note: string;
}

export interface TrainResult {
  model: HashedEncoder;
  steps: StepRecord[];
  epochMeanLoss: number[];
  manifest: TrainManifest;
}

export class TrainError extends Error {}

export function lrAtStep(step: number, totalSteps: number, cfg: TrainConfig): number {
  const warm = step < cfg.warmup_steps ? (step + 1) / cfg.warmup_steps : 1;
  let cosine = 1;
  if (step >= cfg.warmup_steps) {
    const span = Math.max(1, totalSteps - cfg.warmup_steps);
    const progress = Math.min(1, (step - cfg.warmup_steps) / span);
    cosine = 0.5 * (1 + Math.cos(Math.PI * progress));
  }
  const cutStep = Math.floor(cfg.cut_fraction * totalSteps);
  const cut = step >= cutStep ? cfg.decay_factor : 1;
  return cfg.learning_rate * warm * cosine * cut;
}

export interface RankingLossResult {
  loss: number;
  /** d loss / d query embedding, one row per query. */
  gradQueries: Float64Array[];
  /** d loss / d candidate embedding, one row per candidate column. */
  gradCandidates: Float64Array[];
}

/**
 * Smoothed softmax ranking loss over unit embeddings.
 *
 * queries[i] is scored against every candidates[j]; targets[i] names
 * the gold column of row i. Returns the batch-mean loss and exact
 * gradients with respect to both embedding sets.
 */
export function rankingLoss(
  queries: Float64Array[],
  candidates: Float64Array[],
  targets: number[],
  scale: number,
  smoothing: number,
): RankingLossResult {
  const nRows = queries.length;
  const nCols = candidates.length;
  if (nRows === 0) {
    throw new TrainError("ranking loss needs at least one query");
  }
  if (targets.length !== nRows) {
    throw new TrainError(`${nRows} queries but ${targets.length} targets`);
  }
  const dim = queries[0].length;

  const gradQueries = queries.map(() => new Float64Array(dim));
  const gradCandidates = candidates.map(() => new Float64Array(dim));
  let totalLoss = 0;

  for (let i = 0; i < nRows; i++) {
    const target = targets[i];
    if (!(target >= 0 && target < nCols)) {
      throw new TrainError(`target ${target} out of range for ${nCols} candidates`);
    }
    const q = queries[i];
    const logits = new Float64Array(nCols);
    for (let j = 0; j < nCols; j++) {
      const c = candidates[j];
      let dot = 0;
      for (let d = 0; d < dim; d++) {
        dot += q[d] * c[d];
      }
      logits[j] = scale * dot;
    }
    let maxLogit = -Infinity;
    for (let j = 0; j < nCols; j++) {
      if (logits[j] > maxLogit) maxLogit = logits[j];
    }
    let sumExp = 0;
    for (let j = 0; j < nCols; j++) {
      sumExp += Math.exp(logits[j] - maxLogit);
    }
    const logSumExp = maxLogit + Math.log(sumExp);

    // Smoothed cross-entropy: sum_j t_j (logSumExp - z_j).
    const offGold = smoothing / nCols;
    let rowLoss = 0;
    for (let j = 0; j < nCols; j++) {
      const t = offGold + (j === target ? 1 - smoothing : 0);
      rowLoss += t * (logSumExp - logits[j]);
    }
    totalLoss += rowLoss;

    for (let j = 0; j < nCols; j++) {
      const p = Math.exp(logits[j] - logSumExp);
      const t = offGold + (j === target ? 1 - smoothing : 0);
      const dz = ((p - t) / nRows) * scale;
      const c = candidates[j];
      const gq = gradQueries[i];
      const gc = gradCandidates[j];
      for (let d = 0; d < dim; d++) {
        gq[d] += dz * c[d];
        gc[d] += dz * q[d];
      }
    }
  }

  return { loss: totalLoss / nRows, gradQueries, gradCandidates };
}

/** Chain a unit-embedding gradient back through normalization into the weights. */
function accumulateWeightGrad(
  gradW: Float64Array,
  embedded: EmbedWithInput,
  gradEmbedding: Float64Array,
  featureDim: number,
): void {
  const dim = embedded.embedding.length;
  let dotEG = 0;
  for (let d = 0; d < dim; d++) {
    dotEG += embedded.embedding[d] * gradEmbedding[d];
  }
  const feats = embedded.features;
  for (let r = 0; r < dim; r++) {
    const dProj = (gradEmbedding[r] - embedded.embedding[r] * dotEG) / embedded.norm;
    if (dProj === 0) continue;
    const rowOffset = r * featureDim;
    for (let s = 0; s < feats.indices.length; s++) {
      gradW[rowOffset + feats.indices[s]] += dProj * feats.values[s];
    }
  }
}

class AdamW {
  private readonly m: Float64Array;
  private readonly v: Float64Array;
  private t = 0;
  private readonly beta1 = 0.9;
  private readonly beta2 = 0.999;
  private readonly eps = 1e-8;

  constructor(size: number, private readonly weightDecay: number) {
    this.m = new Float64Array(size);
    this.v = new Float64Array(size);
  }

  update(weights: Float64Array, grad: Float64Array, lr: number): void {
    this.t += 1;
    const c1 = 1 - Math.pow(this.beta1, this.t);
    const c2 = 1 - Math.pow(this.beta2, this.t);
    for (let i = 0; i < weights.length; i++) {
      const g = grad[i];
      this.m[i] = this.beta1 * this.m[i] + (1 - this.beta1) * g;
      this.v[i] = this.beta2 * this.v[i] + (1 - this.beta2) * g * g;
      const mhat = this.m[i] / c1;
      const vhat = this.v[i] / c2;
      weights[i] -=
        lr * (mhat / (Math.sqrt(vhat) + this.eps) + this.weightDecay * weights[i]);
    }
  }
}

function clipGlobalNorm(grad: Float64Array, clipValue: number): void {
  let sq = 0;
  for (let i = 0; i < grad.length; i++) {
    sq += grad[i] * grad[i];
  }
  const norm = Math.sqrt(sq);
  if (norm > clipValue) {
    const scale = clipValue / norm;
    for (let i = 0; i < grad.length; i++) {
      grad[i] *= scale;
    }
  }
}

export function trainModel(
  base: HashedEncoder,
  examples: TrainingExample[],
  cfg: TrainConfig,
  options: { negativesHeader?: NegativesHeader; baseRef?: string } = {},
): TrainResult {
  if (examples.length === 0) {
    throw new TrainError("no training examples");
  }
  const model = base.clone();
  const featureDim = model.featureDim;
  const opt = new AdamW(model.weights.length, cfg.weight_decay);

  const stepsPerEpoch = Math.ceil(examples.length / cfg.batch_size);
  const totalSteps = stepsPerEpoch * cfg.epochs;
  const steps: StepRecord[] = [];
  const epochMeanLoss: number[] = [];

  const order = examples.map((_, i) => i);
  let globalStep = 0;

  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    shuffleInPlace(order, deriveRng(cfg.seed, `order:${epoch}`));
    let epochLossSum = 0;

    for (let start = 0; start < order.length; start += cfg.batch_size) {
      const batch = order.slice(start, start + cfg.batch_size).map((i) => examples[i]);

      const queryEmbeds = batch.map((ex) => model.embedWithInput(ex.postText));
      const candidateEmbeds: EmbedWithInput[] = batch.map((ex) =>
        model.embedWithInput(ex.goldText),
      );
      for (const ex of batch) {
        for (const text of ex.negativeTexts) {
          candidateEmbeds.push(model.embedWithInput(text));
        }
      }

      const { loss, gradQueries, gradCandidates } = rankingLoss(
        queryEmbeds.map((e) => e.embedding),
        candidateEmbeds.map((e) => e.embedding),
        batch.map((_, i) => i),
        cfg.similarity_scale,
        cfg.label_smoothing,
      );
      if (!Number.isFinite(loss)) {
        throw new TrainError(`non-finite loss ${loss} at step ${globalStep}; aborting`);
      }

      const gradW = new Float64Array(model.weights.length);
      for (let i = 0; i < queryEmbeds.length; i++) {
        accumulateWeightGrad(gradW, queryEmbeds[i], gradQueries[i], featureDim);
      }
      for (let j = 0; j < candidateEmbeds.length; j++) {
        accumulateWeightGrad(gradW, candidateEmbeds[j], gradCandidates[j], featureDim);
      }
      clipGlobalNorm(gradW, cfg.clip_value);

      const lr = lrAtStep(globalStep, totalSteps, cfg);
      opt.update(model.weights, gradW, lr);

      steps.push({ epoch, step: globalStep, lr, loss });
      epochLossSum += loss * batch.length;
      globalStep += 1;
    }

    epochMeanLoss.push(epochLossSum / examples.length);
  }

  const manifest: TrainManifest = {
    config: { ...cfg },
    negatives: options.negativesHeader
      ? {
          strategy: options.negativesHeader.strategy,
          k: options.negativesHeader.k,
          seed: options.negativesHeader.seed,
        }
      : null,
    base_ref: options.baseRef ?? "",
    feature_dim: featureDim,
    embed_dim: model.embedDim,
    n_examples: examples.length,
    total_steps: totalSteps,
    epoch_mean_loss: [...epochMeanLoss],
    final_loss: steps[steps.length - 1].loss,
    deterministic: true,
    determinism_note:
      "scalar float64 arithmetic with seeded shuffling; no device-dependent kernels involved",
  };

  return { model, steps, epochMeanLoss, manifest };
}

export function lossCurveCsv(steps: StepRecord[]): string {
  const lines = ["epoch,step,lr,loss"];
  for (const rec of steps) {
    lines.push(`${rec.epoch},${rec.step},${rec.lr},${rec.loss}`);
  }
  return lines.join("\n") + "\n";
}
