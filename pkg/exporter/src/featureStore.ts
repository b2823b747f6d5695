/**
 * ILRFEAT1 feature-store container, byte-compatible with the primary loader.
 *
 * Layout (little-endian):
 *   magic    8 bytes "ILRFEAT1"
 *   type     1 byte  0=Img 1=CF 2=Text 3=JointText
 *   n_items  u32
 *   dim      u32
 *   ids      n_items * (u32 byte length + UTF-8 item id), row order
 *   rows     n_items*dim float32, row-major
 */

export const MAGIC = Buffer.from("ILRFEAT1", "ascii");

export type FeatureType = "Img" | "CF" | "Text" | "JointText";

const TYPE_TAGS: Record<FeatureType, number> = { Img: 0, CF: 1, Text: 2, JointText: 3 };
const TAG_TYPES: Record<number, FeatureType> = { 0: "Img", 1: "CF", 2: "Text", 3: "JointText" };

export interface FeatureMatrix {
  featureType: FeatureType;
  itemIds: string[];
  /** rows[i] has length dim; values are stored as float32 */
  rows: Float32Array[];
  dim: number;
}

export function makeMatrix(featureType: FeatureType, itemIds: string[],
                           rows: Float32Array[]): FeatureMatrix {
  if (itemIds.length !== rows.length) {
    throw new Error(`ids (${itemIds.length}) and rows (${rows.length}) differ in length`);
  }
  const dim = rows.length > 0 ? rows[0].length : 0;
  for (const [i, row] of rows.entries()) {
    if (row.length !== dim) throw new Error(`row ${i} has dim ${row.length}, expected ${dim}`);
    for (const v of row) {
      if (!Number.isFinite(v)) throw new Error(`non-finite value in row ${i} (${itemIds[i]})`);
    }
  }
  if (new Set(itemIds).size !== itemIds.length) throw new Error("duplicate item ids");
  return { featureType, itemIds, rows, dim };
}

export function encodeFeatureStore(matrix: FeatureMatrix): Buffer {
  const idBufs = matrix.itemIds.map((id) => Buffer.from(id, "utf-8"));
  let size = 8 + 1 + 8;
  for (const b of idBufs) size += 4 + b.length;
  size += matrix.itemIds.length * matrix.dim * 4;

  const out = Buffer.alloc(size);
  let off = 0;
  MAGIC.copy(out, off); off += 8;
  out.writeUInt8(TYPE_TAGS[matrix.featureType], off); off += 1;
  out.writeUInt32LE(matrix.itemIds.length, off); off += 4;
  out.writeUInt32LE(matrix.dim, off); off += 4;
  for (const b of idBufs) {
    out.writeUInt32LE(b.length, off); off += 4;
    b.copy(out, off); off += b.length;
  }
  for (const row of matrix.rows) {
    for (const v of row) {
      out.writeFloatLE(v, off); off += 4;
    }
  }
  return out;
}

export function decodeFeatureStore(blob: Buffer, source = "<buffer>"): FeatureMatrix {
  const need = (offset: number, count: number, what: string) => {
    if (offset + count > blob.length) {
      throw new Error(`${source}: truncated at offset ${offset}: expected ${count} bytes of ${what}`);
    }
  };
  need(0, 8, "magic");
  if (!blob.subarray(0, 8).equals(MAGIC)) {
    throw new Error(`${source}: bad magic at offset 0`);
  }
  need(8, 1, "type tag");
  const tag = blob.readUInt8(8);
  const featureType = TAG_TYPES[tag];
  if (featureType === undefined) throw new Error(`${source}: unknown feature type tag ${tag}`);
  need(9, 8, "header");
  const nItems = blob.readUInt32LE(9);
  const dim = blob.readUInt32LE(13);
  let off = 17;
  const itemIds: string[] = [];
  for (let i = 0; i < nItems; i++) {
    need(off, 4, `id length [${i}]`);
    const len = blob.readUInt32LE(off); off += 4;
    need(off, len, `id bytes [${i}]`);
    itemIds.push(blob.subarray(off, off + len).toString("utf-8")); off += len;
  }
  need(off, nItems * dim * 4, "row payload");
  const rows: Float32Array[] = [];
  for (let i = 0; i < nItems; i++) {
    const row = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = blob.readFloatLE(off); off += 4;
    }
    rows.push(row);
  }
  if (off !== blob.length) {
    throw new Error(`${source}: ${blob.length - off} trailing bytes after offset ${off}`);
  }
  return makeMatrix(featureType, itemIds, rows);
}

/** L2-normalize in place; zero rows stay zero. Returns the same row. */
export function unitNormalize(row: Float32Array): Float32Array {
  let norm = 0;
  for (const v of row) norm += v * v;
  norm = Math.sqrt(norm);
  if (norm > 0) {
    for (let i = 0; i < row.length; i++) row[i] = row[i] / norm;
  }
  return row;
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0, na = 0, nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na === 0 || nb === 0) return 0;
  return dot / (Math.sqrt(na) * Math.sqrt(nb));
}
