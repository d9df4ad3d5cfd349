/**
 * Binary embedding file writer/reader, byte-compatible with the engine.
 *
 * Layout (little-endian): magic "UNIR", version u16 (= 1), mode u8
 * (0 = feature, 1 = score), dim u32, count u64, then count * [len u16,
 * utf-8 id bytes], then the matrices (feature: one f32 matrix; score:
 * presence bitmask + image matrix + text matrix), then CRC32 of everything
 * before it. The presence bitmask packs two bits per row LSB-first: bit 2i
 * is image presence of row i, bit 2i+1 text presence; a presence bit is off
 * exactly when the row is the all-zero placeholder.
 */

const MAGIC = Buffer.from("UNIR", "ascii");
const VERSION = 1;

export type StoreMode = "feature" | "score";

export interface FeatureStore {
  mode: "feature";
  dim: number;
  ids: string[];
  feature: Float32Array; // count * dim, row-major
}

export interface ScoreStore {
  mode: "score";
  dim: number;
  ids: string[];
  image: Float32Array;
  text: Float32Array;
}

export type EmbeddingFile = FeatureStore | ScoreStore;

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

export function crc32(buf: Buffer, seed = 0): number {
  let c = ~seed >>> 0;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return ~c >>> 0;
}

function rowIsZero(mat: Float32Array, row: number, dim: number): boolean {
  const base = row * dim;
  for (let d = 0; d < dim; d++) {
    if (mat[base + d] !== 0) return false;
  }
  return true;
}

export function packPresence(store: ScoreStore): Buffer {
  const count = store.ids.length;
  const bytes = Buffer.alloc(Math.ceil((2 * count) / 8));
  for (let i = 0; i < count; i++) {
    if (!rowIsZero(store.image, i, store.dim)) {
      bytes[(2 * i) >> 3] |= 1 << ((2 * i) & 7);
    }
    if (!rowIsZero(store.text, i, store.dim)) {
      bytes[(2 * i + 1) >> 3] |= 1 << ((2 * i + 1) & 7);
    }
  }
  return bytes;
}

function matrixBuffer(mat: Float32Array, count: number, dim: number): Buffer {
  if (mat.length !== count * dim) {
    throw new Error(`matrix length ${mat.length} != ${count}*${dim}`);
  }
  const buf = Buffer.alloc(mat.length * 4);
  for (let i = 0; i < mat.length; i++) {
    buf.writeFloatLE(mat[i], i * 4);
  }
  return buf;
}

export function encodeEmbeddingFile(store: EmbeddingFile): Buffer {
  const count = store.ids.length;
  const head = Buffer.alloc(4 + 2 + 1 + 4 + 8);
  MAGIC.copy(head, 0);
  head.writeUInt16LE(VERSION, 4);
  head.writeUInt8(store.mode === "feature" ? 0 : 1, 6);
  head.writeUInt32LE(store.dim, 7);
  head.writeBigUInt64LE(BigInt(count), 11);

  const idChunks: Buffer[] = [];
  for (const id of store.ids) {
    const encoded = Buffer.from(id, "utf-8");
    if (encoded.length > 0xffff) throw new Error(`id too long: ${id}`);
    const len = Buffer.alloc(2);
    len.writeUInt16LE(encoded.length, 0);
    idChunks.push(len, encoded);
  }

  const body: Buffer[] = [head, ...idChunks];
  if (store.mode === "feature") {
    body.push(matrixBuffer(store.feature, count, store.dim));
  } else {
    body.push(packPresence(store));
    body.push(matrixBuffer(store.image, count, store.dim));
    body.push(matrixBuffer(store.text, count, store.dim));
  }
  const payload = Buffer.concat(body);
  const crc = Buffer.alloc(4);
  crc.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([payload, crc]);
}

export function decodeEmbeddingFile(raw: Buffer): EmbeddingFile {
  if (raw.length < 8 || !raw.subarray(0, 4).equals(MAGIC)) {
    throw new Error("BAD_MAGIC: not an embedding file");
  }
  const storedCrc = raw.readUInt32LE(raw.length - 4);
  const body = raw.subarray(0, raw.length - 4);
  if (crc32(body) !== storedCrc) {
    throw new Error("CHECKSUM_MISMATCH");
  }
  const version = body.readUInt16LE(4);
  if (version !== VERSION) throw new Error(`BAD_MAGIC: version ${version}`);
  const modeByte = body.readUInt8(6);
  const dim = body.readUInt32LE(7);
  const count = Number(body.readBigUInt64LE(11));
  let offset = 19;
  const ids: string[] = [];
  for (let i = 0; i < count; i++) {
    const len = body.readUInt16LE(offset);
    offset += 2;
    ids.push(body.subarray(offset, offset + len).toString("utf-8"));
    offset += len;
  }
  const readMatrix = (): Float32Array => {
    const mat = new Float32Array(count * dim);
    for (let i = 0; i < mat.length; i++) {
      mat[i] = body.readFloatLE(offset + i * 4);
    }
    offset += mat.length * 4;
    return mat;
  };
  if (modeByte === 0) {
    const feature = readMatrix();
    return { mode: "feature", dim, ids, feature };
  }
  offset += Math.ceil((2 * count) / 8); // presence recomputed from zero rows
  const image = readMatrix();
  const text = readMatrix();
  return { mode: "score", dim, ids, image, text };
}
