/** Reader for the primary's item-metadata lines (6 tab-separated fields). */

import { readFileSync } from "node:fs";

export interface ItemRecord {
  itemId: string;
  title: string;
  brand: string;
  category: string;
  description: string;
  imageRef: string;
}

export function readMetadata(path: string): ItemRecord[] {
  const text = readFileSync(path, "utf-8");
  const items: ItemRecord[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i];
    if (!line) continue;
    const parts = line.split("\t");
    if (parts.length !== 6) {
      throw new Error(`${path}:${i + 1}: expected 6 tab-separated fields, got ${parts.length}`);
    }
    const [itemId, title, brand, category, description, imageRef] = parts;
    if (!itemId || !title) {
      throw new Error(`${path}:${i + 1}: item_id and title must be nonempty`);
    }
    items.push({ itemId, title, brand, category, description, imageRef });
  }
  return items;
}
