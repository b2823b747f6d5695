/** Image decoding to an RGB pixel grid: binary PPM (P6) natively, PNG via pngjs. */

import { readFileSync } from "node:fs";
import { PNG } from "pngjs";

export interface Pixels {
  width: number;
  height: number;
  /** RGB triples, row-major, values 0..255 */
  data: Uint8Array;
}

export function decodePpm(blob: Buffer, source = "<ppm>"): Pixels {
  // header: "P6" <ws> width <ws> height <ws> maxval <single ws> raster
  if (blob.length < 2 || blob[0] !== 0x50 || blob[1] !== 0x36) {
    throw new Error(`${source}: not a binary PPM (P6) file`);
  }
  let off = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (off < blob.length && /\s/.test(String.fromCharCode(blob[off]))) off++;
    if (off < blob.length && blob[off] === 0x23) { // '#' comment
      while (off < blob.length && blob[off] !== 0x0a) off++;
      continue;
    }
    let start = off;
    while (off < blob.length && !/\s/.test(String.fromCharCode(blob[off]))) off++;
    const token = blob.subarray(start, off).toString("ascii");
    const value = Number(token);
    if (!Number.isInteger(value) || value <= 0) {
      throw new Error(`${source}: bad PPM header token "${token}"`);
    }
    fields.push(value);
  }
  off++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`${source}: only maxval 255 PPM supported`);
  const expect = width * height * 3;
  if (blob.length - off < expect) {
    throw new Error(`${source}: truncated raster, need ${expect} bytes`);
  }
  return { width, height, data: new Uint8Array(blob.subarray(off, off + expect)) };
}

export function decodePng(blob: Buffer, source = "<png>"): Pixels {
  let png: PNG;
  try {
    png = PNG.sync.read(blob);
  } catch (err) {
    throw new Error(`${source}: PNG decode failed: ${(err as Error).message}`);
  }
  const data = new Uint8Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    data[i * 3] = png.data[i * 4];
    data[i * 3 + 1] = png.data[i * 4 + 1];
    data[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { width: png.width, height: png.height, data };
}

export function decodeImage(path: string): Pixels {
  const blob = readFileSync(path);
  if (blob.length >= 8 && blob[0] === 0x89 && blob[1] === 0x50) {
    return decodePng(blob, path);
  }
  if (blob.length >= 2 && blob[0] === 0x50 && blob[1] === 0x36) {
    return decodePpm(blob, path);
  }
  throw new Error(`${path}: unsupported image format (PPM P6 and PNG supported)`);
}
