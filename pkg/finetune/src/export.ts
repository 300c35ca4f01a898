/**
 * Export encoder embeddings as a binary store the retrieval engine can
 * load directly.
 */

import type { HashedEncoder } from "./encoder.js";
import { writeStore, type EmbeddingStoreFile } from "./store.js";

/** Embed (id, text) items in order into an in-memory store. */
export function embedToStore(
  model: HashedEncoder,
  items: [string, string][],
  providerTag: string,
): EmbeddingStoreFile {
  const dim = model.embedDim;
  const ids = items.map(([id]) => id);
  const seen = new Set<string>();
  for (const id of ids) {
    if (seen.has(id)) {
      throw new Error(`duplicate id in export: ${JSON.stringify(id)}`);
    }
    seen.add(id);
  }
  const matrix = new Float32Array(items.length * dim);
  for (let row = 0; row < items.length; row++) {
    const embedding = model.embed(items[row][1]);
    for (let d = 0; d < dim; d++) {
      matrix[row * dim + d] = embedding[d];
    }
  }
  return { ids, matrix, dim, providerTag };
}

export function exportStore(
  model: HashedEncoder,
  items: [string, string][],
  providerTag: string,
  path: string,
): EmbeddingStoreFile {
  const store = embedToStore(model, items, providerTag);
  writeStore(path, store);
  return store;
}
