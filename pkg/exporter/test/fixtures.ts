/** Deterministic test fixtures: colored PPM images + matching descriptions. */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

export interface FixtureItem {
  itemId: string;
  title: string;
  brand: string;
  category: string;
  description: string;
  imageRef: string;
  rgb: [number, number, number];
}

const PALETTE: Array<{ name: string; rgb: [number, number, number]; tone: string }> = [
  { name: "red", rgb: [210, 30, 25], tone: "vivid" },
  { name: "green", rgb: [30, 200, 40], tone: "bright" },
  { name: "blue", rgb: [25, 40, 215], tone: "dark" },
  { name: "yellow", rgb: [230, 225, 30], tone: "bright" },
  { name: "orange", rgb: [240, 140, 15], tone: "vivid" },
  { name: "purple", rgb: [130, 25, 150], tone: "dark" },
  { name: "white", rgb: [245, 245, 245], tone: "pale" },
  { name: "black", rgb: [12, 12, 12], tone: "matte" },
  { name: "brown", rgb: [115, 75, 25], tone: "muted" },
  { name: "pink", rgb: [240, 150, 175], tone: "pale" },
  { name: "cyan", rgb: [25, 215, 215], tone: "glossy" },
  { name: "gray", rgb: [128, 128, 128], tone: "plain" },
];

const NOUNS = ["kettle", "lantern", "saddle", "vest", "speaker", "yarn", "whisk",
  "tent", "rotor", "hook", "bottle", "pad"];

function mulberry(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function ppmBytes(width: number, height: number,
                         rgbAt: (x: number, y: number) => [number, number, number]): Buffer {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  const raster = Buffer.alloc(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = rgbAt(x, y);
      const off = (y * width + x) * 3;
      raster[off] = r; raster[off + 1] = g; raster[off + 2] = b;
    }
  }
  return Buffer.concat([header, raster]);
}

/** n items with distinct dominant colors, PPM files on disk, aligned descriptions. */
export function makeFixtures(dir: string, n: number, seed = 41): FixtureItem[] {
  mkdirSync(join(dir, "images"), { recursive: true });
  const rand = mulberry(seed);
  const items: FixtureItem[] = [];
  for (let i = 0; i < n; i++) {
    const color = PALETTE[i % PALETTE.length];
    const accent = PALETTE[(i + 5) % PALETTE.length];
    const noun = NOUNS[i % NOUNS.length];
    const itemId = `fx${String(i).padStart(3, "0")}`;
    const imageRef = `${itemId}.ppm`;
    const img = ppmBytes(24, 24, (x, y) => {
      const base = (x + y * 0.5) / 36 < 0.75 ? color.rgb : accent.rgb;
      const jitter = Math.floor(rand() * 14) - 7;
      return [
        Math.max(0, Math.min(255, base[0] + jitter)),
        Math.max(0, Math.min(255, base[1] + jitter)),
        Math.max(0, Math.min(255, base[2] + jitter)),
      ];
    });
    writeFileSync(join(dir, "images", imageRef), img);
    const description =
      `a ${color.tone} ${color.name} ${noun} with ${accent.name} trim ` +
      `sturdy build for daily use item number ${i}`;
    items.push({
      itemId,
      title: `${color.name} ${noun} ${i}`,
      brand: `maker${i % 4}`,
      category: "fixtures",
      description,
      imageRef,
      rgb: color.rgb,
    });
  }
  return items;
}

export function writeMetadata(dir: string, items: FixtureItem[]): string {
  const path = join(dir, "items.tsv");
  const lines = items.map((it) =>
    [it.itemId, it.title, it.brand, it.category, it.description, it.imageRef].join("\t"));
  writeFileSync(path, lines.join("\n") + "\n");
  return path;
}
