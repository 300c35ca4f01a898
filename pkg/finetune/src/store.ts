// Reader/writer for the retrieval engine's binary embedding store.
//
// Layout, all integers little-endian: magic "CLNK", u32 version (1),
// u32 dim, u64 count, u32-length-prefixed provider tag, u32-length-
// prefixed UTF-8 id per row, count*dim float32 payload, u32 CRC-32 of
// the payload.

import { readFileSync, writeFileSync } from "node:fs";

export const STORE_MAGIC = "CLNK";
export const STORE_VERSION = 1;
export const NORM_TOLERANCE = 1e-4;

export class StoreFormatError extends Error {}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    crc = CRC_TABLE[(crc ^ data[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

export interface EmbeddingStoreFile {
  ids: string[];
  /** Row-major count x dim. */
  matrix: Float32Array;
  dim: number;
  providerTag: string;
}

export function writeStore(path: string, store: EmbeddingStoreFile): void {
  const { ids, matrix, dim, providerTag } = store;
  if (matrix.length !== ids.length * dim) {
    throw new StoreFormatError(
      `matrix length ${matrix.length} does not match ${ids.length} rows x ${dim}`,
    );
  }
  const encoder = new TextEncoder();
  const tagBytes = encoder.encode(providerTag);
  const idBytes = ids.map((id) => encoder.encode(id));

  let size = 4 + 4 + 4 + 8 + 4 + tagBytes.length;
  for (const raw of idBytes) {
    size += 4 + raw.length;
  }
  size += matrix.length * 4 + 4;

  const buf = Buffer.alloc(size);
  let offset = 0;
  offset += buf.write(STORE_MAGIC, offset, "ascii");
  offset = buf.writeUInt32LE(STORE_VERSION, offset);
  offset = buf.writeUInt32LE(dim, offset);
  offset = buf.writeBigUInt64LE(BigInt(ids.length), offset);
  offset = buf.writeUInt32LE(tagBytes.length, offset);
  Buffer.from(tagBytes).copy(buf, offset);
  offset += tagBytes.length;
  for (const raw of idBytes) {
    offset = buf.writeUInt32LE(raw.length, offset);
    Buffer.from(raw).copy(buf, offset);
    offset += raw.length;
  }
  const payload = Buffer.alloc(matrix.length * 4);
  for (let i = 0; i < matrix.length; i++) {
    payload.writeFloatLE(matrix[i], i * 4);
  }
  payload.copy(buf, offset);
  offset += payload.length;
  buf.writeUInt32LE(crc32(payload), offset);

  writeFileSync(path, buf);
}

export function readStore(path: string): EmbeddingStoreFile {
  const buf = readFileSync(path);
  let offset = 0;

  const take = (n: number, what: string): Buffer => {
    if (offset + n > buf.length) {
      throw new StoreFormatError(`${path}: truncated ${what} at offset ${offset}`);
    }
    const chunk = buf.subarray(offset, offset + n);
    offset += n;
    return chunk;
  };

  if (take(4, "magic").toString("ascii") !== STORE_MAGIC) {
    throw new StoreFormatError(`${path}: bad magic bytes`);
  }
  const version = take(4, "version").readUInt32LE(0);
  if (version !== STORE_VERSION) {
    throw new StoreFormatError(`${path}: unsupported version ${version}`);
  }
  const dim = take(4, "dim").readUInt32LE(0);
  const count = Number(take(8, "count").readBigUInt64LE(0));
  const tagLen = take(4, "tag length").readUInt32LE(0);
  const providerTag = take(tagLen, "tag").toString("utf-8");

  const ids: string[] = [];
  for (let i = 0; i < count; i++) {
    const idLen = take(4, `id length #${i}`).readUInt32LE(0);
    ids.push(take(idLen, `id #${i}`).toString("utf-8"));
  }

  const payload = take(count * dim * 4, "payload");
  const expected = take(4, "checksum").readUInt32LE(0);
  if (offset !== buf.length) {
    throw new StoreFormatError(`${path}: ${buf.length - offset} trailing bytes`);
  }
  const actual = crc32(payload);
  if (actual !== expected) {
    throw new StoreFormatError(
      `${path}: checksum mismatch: stored ${expected.toString(16)}, computed ${actual.toString(16)}`,
    );
  }

  const matrix = new Float32Array(count * dim);
  for (let i = 0; i < matrix.length; i++) {
    matrix[i] = payload.readFloatLE(i * 4);
  }
  return { ids, matrix, dim, providerTag };
}

/** True when every row is unit length within the store tolerance. */
export function allRowsUnitNorm(store: EmbeddingStoreFile): boolean {
  for (let row = 0; row < store.ids.length; row++) {
    let sq = 0;
    for (let d = 0; d < store.dim; d++) {
      const v = store.matrix[row * store.dim + d];
      sq += v * v;
    }
    if (Math.abs(Math.sqrt(sq) - 1) > NORM_TOLERANCE) {
      return false;
    }
  }
  return true;
}
