/**
 * Readers for the retrieval engine's on-disk corpus artifacts and
 * assembly of training examples.
 *
 * Everything here consumes files the `claimlink` CLI writes: the clean
 * corpus JSONL trio, the split manifest, and a mined negatives file.
 * Nothing imports the engine itself.
 */

import { readFileSync } from "node:fs";

import { deriveRng, shuffleInPlace } from "./rng.js";

export interface CorpusTexts {
  posts: Map<string, string>;
  claims: Map<string, string>;
  pairs: { postId: string; claimId: string }[];
}

export interface NegativesHeader {
  kind: string;
  strategy: string;
  k: number;
  seed: number;
}

export interface NegativeRecord {
  postId: string;
  goldClaimId: string;
  negativeIds: string[];
  shortfall: string | null;
}

export interface SplitAssignment {
  posts: Map<string, string>;
  claims: Map<string, string>;
}

/** One training unit: a post, its gold claim, and its mined negatives. */
export interface TrainingExample {
  postId: string;
  postText: string;
  goldId: string;
  goldText: string;
  negativeIds: string[];
  negativeTexts: string[];
}

export class DataError extends Error {}

function readJsonl(path: string): unknown[] {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new DataError(`cannot read ${path}: ${(err as Error).message}`);
  }
  const out: unknown[] = [];
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    try {
      out.push(JSON.parse(line));
    } catch {
      throw new DataError(`${path}, line ${i + 1}: not valid JSON`);
    }
  }
  return out;
}

function requireString(rec: Record<string, unknown>, key: string, where: string): string {
  const value = rec[key];
  if (typeof value !== "string") {
    throw new DataError(`${where}: missing or non-string ${JSON.stringify(key)}`);
  }
  return value;
}

export function loadCorpusTexts(
  postsPath: string,
  claimsPath: string,
  pairsPath: string,
): CorpusTexts {
  const posts = new Map<string, string>();
  for (const rec of readJsonl(postsPath) as Record<string, unknown>[]) {
    const id = requireString(rec, "id", postsPath);
    posts.set(id, requireString(rec, "text", postsPath));
  }
  const claims = new Map<string, string>();
  for (const rec of readJsonl(claimsPath) as Record<string, unknown>[]) {
    const id = requireString(rec, "id", claimsPath);
    claims.set(id, requireString(rec, "claim", claimsPath));
  }
  const pairs: { postId: string; claimId: string }[] = [];
  for (const rec of readJsonl(pairsPath) as Record<string, unknown>[]) {
    pairs.push({
      postId: requireString(rec, "post_id", pairsPath),
      claimId: requireString(rec, "claim_id", pairsPath),
    });
  }
  return { posts, claims, pairs };
}

export function loadSplitAssignment(path: string): SplitAssignment {
  let doc: Record<string, unknown>;
  try {
    doc = JSON.parse(readFileSync(path, "utf-8"));
  } catch (err) {
    throw new DataError(`cannot read split manifest ${path}: ${(err as Error).message}`);
  }
  const toMap = (key: string): Map<string, string> => {
    const section = doc[key];
    if (typeof section !== "object" || section === null) {
      throw new DataError(`${path}: manifest lacks a ${JSON.stringify(key)} map`);
    }
    return new Map(Object.entries(section as Record<string, string>));
  };
  return { posts: toMap("posts"), claims: toMap("claims") };
}

/** Parse a mined negatives file: one header line, then one record per line. */
export function loadNegativesFile(path: string): {
  header: NegativesHeader;
  records: NegativeRecord[];
} {
  const rows = readJsonl(path) as Record<string, unknown>[];
  if (rows.length === 0) {
    throw new DataError(`${path}: empty negatives file`);
  }
  const head = rows[0];
  if (head.kind !== "negatives") {
    throw new DataError(`${path}: first line is not a negatives header`);
  }
  if (typeof head.strategy !== "string" || typeof head.k !== "number") {
    throw new DataError(`${path}: header lacks strategy or k`);
  }
  const header: NegativesHeader = {
    kind: "negatives",
    strategy: head.strategy,
    k: head.k,
    seed: typeof head.seed === "number" ? head.seed : 0,
  };
  const records: NegativeRecord[] = [];
  for (let i = 1; i < rows.length; i++) {
    const rec = rows[i];
    const where = `${path}, record ${i}`;
    const negatives = rec.negative_ids;
    if (!Array.isArray(negatives) || negatives.some((n) => typeof n !== "string")) {
      throw new DataError(`${where}: negative_ids must be a string array`);
    }
    records.push({
      postId: requireString(rec, "post_id", where),
      goldClaimId: requireString(rec, "gold_claim_id", where),
      negativeIds: negatives as string[],
      shortfall: typeof rec.shortfall === "string" ? rec.shortfall : null,
    });
  }
  return { header, records };
}

/**
 * Turn mined negative records into shuffled training examples.
 *
 * The negatives file is re-validated here even though the miner already
 * enforces its contract: a gold id appearing among its own negatives, a
 * duplicated negative, or any id missing from the corpus is a hard
 * error. When a split assignment is given, every post and claim an
 * example touches must sit in the train split; this is what keeps dev
 * and test texts out of the optimizer no matter what file was passed.
 */
export function buildTrainingExamples(
  corpus: CorpusTexts,
  records: NegativeRecord[],
  seed: number,
  split?: SplitAssignment,
): TrainingExample[] {
  const goldOf = new Map<string, Set<string>>();
  for (const pair of corpus.pairs) {
    let set = goldOf.get(pair.postId);
    if (!set) {
      set = new Set();
      goldOf.set(pair.postId, set);
    }
    set.add(pair.claimId);
  }

  const examples: TrainingExample[] = [];
  for (const rec of records) {
    const postText = corpus.posts.get(rec.postId);
    if (postText === undefined) {
      throw new DataError(`negatives reference unknown post ${JSON.stringify(rec.postId)}`);
    }
    const goldText = corpus.claims.get(rec.goldClaimId);
    if (goldText === undefined) {
      throw new DataError(`negatives reference unknown claim ${JSON.stringify(rec.goldClaimId)}`);
    }
    const golds = goldOf.get(rec.postId);
    if (!golds || !golds.has(rec.goldClaimId)) {
      throw new DataError(
        `record for post ${JSON.stringify(rec.postId)} names ${JSON.stringify(rec.goldClaimId)} which is not its gold claim`,
      );
    }
    const seen = new Set<string>();
    const negativeTexts: string[] = [];
    for (const negId of rec.negativeIds) {
      if (golds.has(negId)) {
        throw new DataError(
          `gold claim ${JSON.stringify(negId)} leaked into negatives of post ${JSON.stringify(rec.postId)}`,
        );
      }
      if (seen.has(negId)) {
        throw new DataError(
          `duplicate negative ${JSON.stringify(negId)} for post ${JSON.stringify(rec.postId)}`,
        );
      }
      seen.add(negId);
      const text = corpus.claims.get(negId);
      if (text === undefined) {
        throw new DataError(`negatives reference unknown claim ${JSON.stringify(negId)}`);
      }
      negativeTexts.push(text);
    }
    if (split) {
      const touched: [string, string | undefined][] = [
        [rec.postId, split.posts.get(rec.postId)],
        [rec.goldClaimId, split.claims.get(rec.goldClaimId)],
        ...rec.negativeIds.map((n): [string, string | undefined] => [n, split.claims.get(n)]),
      ];
      for (const [id, assigned] of touched) {
        if (assigned !== "train") {
          throw new DataError(
            `example for post ${JSON.stringify(rec.postId)} touches ${JSON.stringify(id)} ` +
              `assigned to split ${JSON.stringify(assigned ?? "none")}; training reads train only`,
          );
        }
      }
    }
    examples.push({
      postId: rec.postId,
      postText,
      goldId: rec.goldClaimId,
      goldText,
      negativeIds: [...rec.negativeIds],
      negativeTexts,
    });
  }

  shuffleInPlace(examples, deriveRng(seed, "examples"));
  return examples;
}
