#!/usr/bin/env node
/**
 * covrbench-bridge <command>
 *
 *   export-text  --captions captions.jsonl --out texts.tfcv --dim 64
 *   export-video --manifest clips.jsonl --out videos.tfcv --dim 64
 *                [--frames 12] [--kind frame_sequence|video]
 *   gen-mods     --pairs pairs.jsonl --out mods.jsonl --profile gym|diving
 *                [--offline] [--cache-dir .modgen-cache] [--in-context N]
 *
 * pairs.jsonl lines: {src_label, dst_label, src_caption, dst_caption[, change_kind]}
 */

import { promises as fs } from "node:fs";
import { parseArgs } from "node:util";

import { generateModifications, LabeledPair, PromptProfile } from "./llm.js";
import { exportTextEmbeddings, readCaptionsJsonl } from "./textExport.js";
import { exportVideoEmbeddings, readClipManifest } from "./videoExport.js";

function usage(): never {
  console.error(
    "usage: covrbench-bridge <export-text|export-video|gen-mods> [options]",
  );
  process.exit(2);
}

function required(value: string | undefined, flag: string): string {
  if (value === undefined) {
    console.error(`missing required ${flag}`);
    process.exit(2);
  }
  return value;
}

async function readPairsJsonl(path: string): Promise<LabeledPair[]> {
  const raw = await fs.readFile(path, "utf-8");
  const out: LabeledPair[] = [];
  for (const line of raw.split("\n")) {
    if (!line.trim()) continue;
    const obj = JSON.parse(line);
    out.push({
      srcLabel: String(obj.src_label),
      dstLabel: String(obj.dst_label),
      srcCaption: String(obj.src_caption),
      dstCaption: String(obj.dst_caption),
      changeKind: obj.change_kind === undefined ? undefined : String(obj.change_kind),
    });
  }
  return out;
}

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  if (!command) usage();

  if (command === "export-text") {
    const { values } = parseArgs({
      args: rest,
      options: {
        captions: { type: "string" },
        out: { type: "string" },
        dim: { type: "string", default: "64" },
      },
    });
    const captions = await readCaptionsJsonl(required(values.captions, "--captions"));
    const count = await exportTextEmbeddings(captions, {
      outPath: required(values.out, "--out"),
      dim: Number(values.dim),
    });
    console.log(`wrote ${count} text records to ${values.out}`);
    return;
  }

  if (command === "export-video") {
    const { values } = parseArgs({
      args: rest,
      options: {
        manifest: { type: "string" },
        out: { type: "string" },
        dim: { type: "string", default: "64" },
        frames: { type: "string", default: "12" },
        kind: { type: "string", default: "frame_sequence" },
      },
    });
    const kind = values.kind as "video" | "frame_sequence";
    if (kind !== "video" && kind !== "frame_sequence") {
      console.error(`bad --kind ${values.kind}`);
      process.exit(2);
    }
    const clips = await readClipManifest(required(values.manifest, "--manifest"));
    const summary = await exportVideoEmbeddings(clips, {
      outPath: required(values.out, "--out"),
      dim: Number(values.dim),
      framesPerClip: Number(values.frames),
      kind,
    });
    console.log(
      `wrote ${summary.written} clip records to ${values.out}` +
        (summary.skipped.length ? `, skipped ${summary.skipped.length}` : "") +
        (summary.padded.length ? `, padded ${summary.padded.length}` : ""),
    );
    return;
  }

  if (command === "gen-mods") {
    const { values } = parseArgs({
      args: rest,
      options: {
        pairs: { type: "string" },
        out: { type: "string" },
        profile: { type: "string", default: "gym" },
        offline: { type: "boolean", default: false },
        "cache-dir": { type: "string", default: ".modgen-cache" },
        "in-context": { type: "string" },
      },
    });
    const profile = values.profile as PromptProfile;
    if (profile !== "gym" && profile !== "diving") {
      console.error(`bad --profile ${values.profile}`);
      process.exit(2);
    }
    const pairs = await readPairsJsonl(required(values.pairs, "--pairs"));
    const mods = await generateModifications(pairs, {
      offline: Boolean(values.offline),
      cacheDir: String(values["cache-dir"]),
      profile,
      inContextCount: values["in-context"] ? Number(values["in-context"]) : undefined,
    });
    const lines = mods.map((m) =>
      JSON.stringify({
        src_label: m.srcLabel,
        dst_label: m.dstLabel,
        text: m.text,
        source: m.source,
        flagged: m.flagged,
      }),
    );
    await fs.writeFile(required(values.out, "--out"), lines.join("\n") + "\n");
    console.log(`wrote ${mods.length} modifications to ${values.out}`);
    return;
  }

  usage();
}

main().catch((err) => {
  console.error(String(err));
  process.exit(1);
});
