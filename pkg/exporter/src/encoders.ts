/**
 * Deterministic offline encoders.
 *
 * The joint image/text space reserves its first SHARED_DIMS components for
 * visual attributes both modalities can estimate (color moments, brightness,
 * saturation, contrast); the remaining components are modality-specific
 * (image: thumbnail texture projections; text: hashed bag of words). Matched
 * image/description pairs correlate through the shared block, which is all
 * the downstream overlap analysis and missing-image fallback need.
 *
 * A pretrained vision-language backend can be selected by name; it requires
 * model assets on disk and is not available in offline environments.
 */

import { createHash } from "node:crypto";
import type { Pixels } from "./images.js";
import { unitNormalize } from "./featureStore.js";

export const SHARED_DIMS = 8;
const SHARED_WEIGHT = 2.0;

function hash32(...parts: string[]): number {
  const digest = createHash("sha256").update(parts.join("")).digest();
  return digest.readUInt32LE(0);
}

function hashSign(...parts: string[]): number {
  return hash32("sign", ...parts) % 2 === 0 ? 1 : -1;
}

/** Shared visual-attribute block: rgb means, luma, saturation, opponents, contrast. */
function sharedFromRgb(r: number, g: number, b: number, contrast: number): number[] {
  const luma = 0.299 * r + 0.587 * g + 0.114 * b;
  const mx = Math.max(r, g, b);
  const mn = Math.min(r, g, b);
  const sat = mx > 0 ? (mx - mn) / mx : 0;
  return [
    r * 2 - 1, g * 2 - 1, b * 2 - 1,
    luma * 2 - 1,
    sat * 2 - 1,
    r - g,
    b - (r + g) / 2,
    contrast * 2 - 1,
  ];
}

export function encodeImagePixels(pixels: Pixels, dim: number): Float32Array {
  if (dim <= SHARED_DIMS) throw new Error(`image feature dim must exceed ${SHARED_DIMS}`);
  const n = pixels.width * pixels.height;
  let r = 0, g = 0, b = 0;
  for (let i = 0; i < n; i++) {
    r += pixels.data[i * 3];
    g += pixels.data[i * 3 + 1];
    b += pixels.data[i * 3 + 2];
  }
  r /= n * 255; g /= n * 255; b /= n * 255;
  let varLuma = 0;
  const meanLuma = 0.299 * r + 0.587 * g + 0.114 * b;
  for (let i = 0; i < n; i++) {
    const l = (0.299 * pixels.data[i * 3] + 0.587 * pixels.data[i * 3 + 1] +
               0.114 * pixels.data[i * 3 + 2]) / 255;
    varLuma += (l - meanLuma) ** 2;
  }
  const contrast = Math.sqrt(varLuma / n);

  const out = new Float32Array(dim);
  const shared = sharedFromRgb(r, g, b, contrast);
  for (let i = 0; i < SHARED_DIMS; i++) out[i] = shared[i] * SHARED_WEIGHT;

  // modality-specific tail: signed hashed projections of an 8x8 luma thumbnail
  const grid = 8;
  for (let gy = 0; gy < grid; gy++) {
    for (let gx = 0; gx < grid; gx++) {
      const px = Math.min(Math.floor((gx + 0.5) / grid * pixels.width), pixels.width - 1);
      const py = Math.min(Math.floor((gy + 0.5) / grid * pixels.height), pixels.height - 1);
      const idx = (py * pixels.width + px) * 3;
      const l = (0.299 * pixels.data[idx] + 0.587 * pixels.data[idx + 1] +
                 0.114 * pixels.data[idx + 2]) / 255;
      const cell = `cell:${gx}:${gy}`;
      const target = SHARED_DIMS + (hash32("imgtail", cell) % (dim - SHARED_DIMS));
      out[target] += hashSign("imgtail", cell) * (l - 0.5);
    }
  }
  return unitNormalize(out);
}

const COLOR_WORDS: Record<string, [number, number, number]> = {
  red: [0.85, 0.1, 0.1], crimson: [0.8, 0.05, 0.15], green: [0.1, 0.8, 0.1],
  olive: [0.5, 0.5, 0.1], blue: [0.1, 0.15, 0.85], navy: [0.05, 0.05, 0.5],
  yellow: [0.9, 0.9, 0.1], orange: [0.95, 0.55, 0.05], purple: [0.5, 0.1, 0.6],
  violet: [0.55, 0.2, 0.8], white: [0.95, 0.95, 0.95], black: [0.05, 0.05, 0.05],
  gray: [0.5, 0.5, 0.5], grey: [0.5, 0.5, 0.5], brown: [0.45, 0.3, 0.1],
  pink: [0.95, 0.6, 0.7], cyan: [0.1, 0.85, 0.85], teal: [0.1, 0.5, 0.5],
};

const TONE_WORDS: Record<string, { luma?: number; sat?: number; contrast?: number }> = {
  bright: { luma: 0.25 }, dark: { luma: -0.25 }, pale: { sat: -0.2, luma: 0.1 },
  vivid: { sat: 0.25 }, muted: { sat: -0.2 }, matte: { contrast: -0.15 },
  glossy: { contrast: 0.2 }, plain: { contrast: -0.1 },
};

export function tokenizeWords(text: string): string[] {
  return (text.toLowerCase().match(/[a-z0-9']+/g) ?? []);
}

/** Joint-space text encoder: color/tone words land in the shared block. */
export function encodeJointText(text: string, dim: number): Float32Array {
  if (dim <= SHARED_DIMS) throw new Error(`joint feature dim must exceed ${SHARED_DIMS}`);
  const words = tokenizeWords(text);
  const out = new Float32Array(dim);
  if (words.length === 0) return out;

  let r = 0, g = 0, b = 0, hits = 0;
  let luma = 0, sat = 0, contrast = 0.3;
  for (const word of words) {
    const rgb = COLOR_WORDS[word];
    if (rgb) {
      r += rgb[0]; g += rgb[1]; b += rgb[2]; hits++;
    }
    const tone = TONE_WORDS[word];
    if (tone) {
      luma += tone.luma ?? 0;
      sat += tone.sat ?? 0;
      contrast += tone.contrast ?? 0;
    }
  }
  if (hits > 0) {
    r /= hits; g /= hits; b /= hits;
    const mx = Math.max(r, g, b), mn = Math.min(r, g, b);
    const baseLuma = 0.299 * r + 0.587 * g + 0.114 * b;
    const baseSat = mx > 0 ? (mx - mn) / mx : 0;
    const shared = sharedFromRgb(
      r, g, b, Math.max(0, Math.min(1, contrast)));
    shared[3] = Math.max(-1, Math.min(1, (baseLuma + luma) * 2 - 1));
    shared[4] = Math.max(-1, Math.min(1, (baseSat + sat) * 2 - 1));
    for (let i = 0; i < SHARED_DIMS; i++) out[i] = shared[i] * SHARED_WEIGHT;
  }
  for (const word of words) {
    const target = SHARED_DIMS + (hash32("txttail", word) % (dim - SHARED_DIMS));
    out[target] += hashSign("txttail", word);
  }
  return unitNormalize(out);
}

/** Sentence-embedding stand-in for description features: hashed bag of words. */
export function encodeSentence(text: string, dim: number): Float32Array {
  const out = new Float32Array(dim);
  for (const word of tokenizeWords(text)) {
    out[hash32("sent", word) % dim] += hashSign("sent", word);
  }
  return unitNormalize(out);
}

export type ImageBackend = (pixels: Pixels, dim: number) => Float32Array;
export type TextBackend = (text: string, dim: number) => Float32Array;

export interface EncoderBackends {
  image: ImageBackend;
  jointText: TextBackend;
  sentence: TextBackend;
}

/**
 * Backend registry. "builtin" works offline; the pretrained contrastive
 * vision-language / sentence-encoder backends need model assets that this
 * environment cannot fetch, so selecting them raises with guidance.
 */
export function resolveBackend(name: string): EncoderBackends {
  if (name === "builtin") {
    return { image: encodeImagePixels, jointText: encodeJointText, sentence: encodeSentence };
  }
  if (name === "siglip" || name === "clip" || name === "sbert") {
    throw new Error(
      `backend "${name}" needs downloadable model weights; this environment is offline. ` +
      `Use --backend builtin, or run where the model assets are available.`);
  }
  throw new Error(`unknown encoder backend "${name}"`);
}
