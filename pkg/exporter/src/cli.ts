#!/usr/bin/env node
/** CLI for exporting item features into the primary's feature-store format. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { resolveBackend } from "./encoders.js";
import { convertCfEmbeddings, exportImageFeatures, exportTextFeatures, writeManifest } from "./exporters.js";
import { readMetadata } from "./metadata.js";

function finish(manifest: ReturnType<typeof JSON.parse>, manifestPath?: string) {
  if (manifestPath) writeManifest(manifest, manifestPath);
  console.log(JSON.stringify(manifest, null, 2));
}

await yargs(hideBin(process.argv))
  .scriptName("ilrec-exporter")
  .command(
    "images",
    "encode item images into an Img feature file",
    (y) => y
      .option("metadata", { type: "string", demandOption: true, describe: "item metadata TSV" })
      .option("images-dir", { type: "string", demandOption: true, describe: "directory with image files" })
      .option("out", { type: "string", demandOption: true, describe: "output .feat path" })
      .option("dim", { type: "number", default: 32, describe: "feature dimension" })
      .option("backend", { type: "string", default: "builtin", describe: "encoder backend" })
      .option("manifest", { type: "string", describe: "manifest JSON path" }),
    (argv) => {
      const items = readMetadata(argv.metadata);
      const manifest = exportImageFeatures(items, {
        metadataPath: argv.metadata, imagesDir: argv["images-dir"], outPath: argv.out,
        dim: argv.dim, backendName: argv.backend, backends: resolveBackend(argv.backend),
      });
      finish(manifest, argv.manifest);
    })
  .command(
    "joint-text",
    "encode descriptions into the image-aligned JointText feature file",
    (y) => y
      .option("metadata", { type: "string", demandOption: true })
      .option("out", { type: "string", demandOption: true })
      .option("dim", { type: "number", default: 32 })
      .option("backend", { type: "string", default: "builtin" })
      .option("manifest", { type: "string" }),
    (argv) => {
      const items = readMetadata(argv.metadata);
      const manifest = exportTextFeatures(items, {
        metadataPath: argv.metadata, outPath: argv.out, dim: argv.dim,
        backendName: argv.backend, backends: resolveBackend(argv.backend),
        featureType: "JointText",
      });
      finish(manifest, argv.manifest);
    })
  .command(
    "text",
    "encode full descriptions into the Text (sentence-embedding) feature file",
    (y) => y
      .option("metadata", { type: "string", demandOption: true })
      .option("out", { type: "string", demandOption: true })
      .option("dim", { type: "number", default: 24 })
      .option("backend", { type: "string", default: "builtin" })
      .option("manifest", { type: "string" }),
    (argv) => {
      const items = readMetadata(argv.metadata);
      const manifest = exportTextFeatures(items, {
        metadataPath: argv.metadata, outPath: argv.out, dim: argv.dim,
        backendName: argv.backend, backends: resolveBackend(argv.backend),
        featureType: "Text",
      });
      finish(manifest, argv.manifest);
    })
  .command(
    "convert-cf",
    "reorder an external CF embedding CSV onto the catalog and write a CF feature file",
    (y) => y
      .option("metadata", { type: "string", demandOption: true })
      .option("embeddings", { type: "string", demandOption: true, describe: "CSV: item_id,v0,v1,..." })
      .option("out", { type: "string", demandOption: true })
      .option("manifest", { type: "string" }),
    (argv) => {
      const items = readMetadata(argv.metadata);
      const manifest = convertCfEmbeddings(items, {
        metadataPath: argv.metadata, embeddingsPath: argv.embeddings, outPath: argv.out,
      });
      finish(manifest, argv.manifest);
    })
  .demandCommand(1)
  .strict()
  .fail((msg, err) => {
    console.error(`error: ${msg ?? err?.message}`);
    process.exit(err && !msg ? 1 : 2);
  })
  .parse();
