/** Feature-export pipelines writing the ILRFEAT1 container plus a JSON manifest. */

import { writeFileSync } from "node:fs";
import { join } from "node:path";
import Papa from "papaparse";
import { readFileSync } from "node:fs";

import { decodeImage } from "./images.js";
import type { EncoderBackends } from "./encoders.js";
import { FeatureMatrix, encodeFeatureStore, makeMatrix, unitNormalize } from "./featureStore.js";
import type { ItemRecord } from "./metadata.js";

export interface ExportFailure {
  itemId: string;
  reason: string;
}

export interface ExportManifest {
  source: string;
  output: string;
  featureType: string;
  backend: string;
  dim: number;
  nItems: number;
  nEncoded: number;
  failures: ExportFailure[];
}

export function writeMatrix(matrix: FeatureMatrix, outPath: string): void {
  writeFileSync(outPath, encodeFeatureStore(matrix));
}

export function writeManifest(manifest: ExportManifest, path: string): void {
  writeFileSync(path, JSON.stringify(manifest, Object.keys(manifest).sort(), 2) + "\n");
}

export interface ImageExportOptions {
  metadataPath: string;
  imagesDir: string;
  outPath: string;
  dim: number;
  backendName: string;
  backends: EncoderBackends;
}

/** One unit-normalized row per item that has a decodable image; failures are listed, not fatal. */
export function exportImageFeatures(items: ItemRecord[], opts: ImageExportOptions): ExportManifest {
  const ids: string[] = [];
  const rows: Float32Array[] = [];
  const failures: ExportFailure[] = [];
  for (const item of items) {
    if (!item.imageRef) {
      failures.push({ itemId: item.itemId, reason: "no image reference" });
      continue;
    }
    const path = join(opts.imagesDir, item.imageRef);
    try {
      const pixels = decodeImage(path);
      ids.push(item.itemId);
      rows.push(opts.backends.image(pixels, opts.dim));
    } catch (err) {
      failures.push({ itemId: item.itemId, reason: (err as Error).message });
    }
  }
  if (ids.length === 0) {
    throw new Error("no image could be encoded; refusing to write an empty Img store");
  }
  writeMatrix(makeMatrix("Img", ids, rows), opts.outPath);
  return {
    source: opts.metadataPath, output: opts.outPath, featureType: "Img",
    backend: opts.backendName, dim: opts.dim, nItems: items.length,
    nEncoded: ids.length, failures,
  };
}

export interface TextExportOptions {
  metadataPath: string;
  outPath: string;
  dim: number;
  backendName: string;
  backends: EncoderBackends;
  featureType: "JointText" | "Text";
}

/** Rows for every item; empty descriptions become zero rows plus a manifest note. */
export function exportTextFeatures(items: ItemRecord[], opts: TextExportOptions): ExportManifest {
  const ids: string[] = [];
  const rows: Float32Array[] = [];
  const failures: ExportFailure[] = [];
  const encode = opts.featureType === "JointText" ? opts.backends.jointText
    : opts.backends.sentence;
  for (const item of items) {
    ids.push(item.itemId);
    if (!item.description) {
      rows.push(new Float32Array(opts.dim));
      failures.push({ itemId: item.itemId, reason: "empty description: zero row" });
      continue;
    }
    rows.push(encode(item.description, opts.dim));
  }
  writeMatrix(makeMatrix(opts.featureType, ids, rows), opts.outPath);
  return {
    source: opts.metadataPath, output: opts.outPath, featureType: opts.featureType,
    backend: opts.backendName, dim: opts.dim, nItems: items.length,
    nEncoded: ids.length - failures.length, failures,
  };
}

export interface CfConvertOptions {
  metadataPath: string;
  embeddingsPath: string;
  outPath: string;
}

/**
 * Reorder an externally trained CF matrix (CSV: item_id, v0, v1, ...) onto the
 * catalog's metadata order. Unmatched catalog items get zero rows; coverage
 * under 50% is an error.
 */
export function convertCfEmbeddings(items: ItemRecord[], opts: CfConvertOptions): ExportManifest {
  const text = readFileSync(opts.embeddingsPath, "utf-8");
  const parsed = Papa.parse<string[]>(text.trim(), { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    throw new Error(`${opts.embeddingsPath}: ${parsed.errors[0].message}`);
  }
  let rows = parsed.data;
  // tolerate a header row: first data cell that does not parse as a number
  if (rows.length > 0 && rows[0].length > 1 && Number.isNaN(Number(rows[0][1]))) {
    rows = rows.slice(1);
  }
  const byId = new Map<string, Float32Array>();
  let dim = -1;
  for (const [i, row] of rows.entries()) {
    const id = row[0];
    const values = row.slice(1).map(Number);
    if (values.some((v) => Number.isNaN(v))) {
      throw new Error(`${opts.embeddingsPath}: row ${i + 1}: non-numeric embedding value`);
    }
    if (dim === -1) dim = values.length;
    if (values.length !== dim) {
      throw new Error(`${opts.embeddingsPath}: row ${i + 1}: dim ${values.length}, expected ${dim}`);
    }
    byId.set(id, unitNormalize(Float32Array.from(values)));
  }
  if (dim <= 0) throw new Error(`${opts.embeddingsPath}: no embedding rows`);

  const failures: ExportFailure[] = [];
  const ids: string[] = [];
  const out: Float32Array[] = [];
  let matched = 0;
  for (const item of items) {
    ids.push(item.itemId);
    const row = byId.get(item.itemId);
    if (row === undefined) {
      out.push(new Float32Array(dim));
      failures.push({ itemId: item.itemId, reason: "no external embedding: zero row" });
    } else {
      out.push(row);
      matched++;
    }
  }
  if (matched < items.length * 0.5) {
    throw new Error(
      `external embeddings cover ${matched}/${items.length} catalog items (< 50%)`);
  }
  for (const id of byId.keys()) {
    if (!ids.includes(id)) failures.push({ itemId: id, reason: "external id not in catalog" });
  }
  writeMatrix(makeMatrix("CF", ids, out), opts.outPath);
  return {
    source: opts.embeddingsPath, output: opts.outPath, featureType: "CF",
    backend: "external", dim, nItems: items.length, nEncoded: matched, failures,
  };
}
