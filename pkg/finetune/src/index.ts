export { DEFAULTS, ConfigError, configFromDocument, loadConfig, validateConfig } from "./config.js";
export type { TrainConfig } from "./config.js";
export {
  DataError,
  buildTrainingExamples,
  loadCorpusTexts,
  loadNegativesFile,
  loadSplitAssignment,
} from "./data.js";
export type {
  CorpusTexts,
  NegativeRecord,
  NegativesHeader,
  SplitAssignment,
  TrainingExample,
} from "./data.js";
export { HashedEncoder, bucketOf, features, resolveModelRef, tokenize } from "./encoder.js";
export type { Features } from "./encoder.js";
export { embedToStore, exportStore } from "./export.js";
export { deriveRng, fnv1a, mulberry32, shuffleInPlace } from "./rng.js";
export {
  NORM_TOLERANCE,
  STORE_MAGIC,
  STORE_VERSION,
  StoreFormatError,
  allRowsUnitNorm,
  crc32,
  readStore,
  writeStore,
} from "./store.js";
export type { EmbeddingStoreFile } from "./store.js";
export { TrainError, lossCurveCsv, lrAtStep, rankingLoss, trainModel } from "./train.js";
export type { RankingLossResult, StepRecord, TrainManifest, TrainResult } from "./train.js";
