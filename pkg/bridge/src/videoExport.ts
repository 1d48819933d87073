/**
 * Clip media -> engine-readable video or frame-sequence embedding file.
 *
 * The decoder stage is pluggable. The default treats a media file as a
 * stream of fixed-size frame blocks and samples the requested number of
 * uniformly spaced blocks, which mirrors uniform frame sampling without a
 * codec dependency; a real decoder yielding pixel frames can be swapped in
 * behind the same function shape. Clips that decode to a single frame are
 * exported with that frame repeated (and flagged in the summary);
 * undecodable clips are skipped with a log line.
 */

import { promises as fs } from "node:fs";

import { EmbeddingRecord, writeTable } from "./binfmt.js";
import { FrameEncoder, HashFrameEncoder } from "./encoder.js";

export interface ClipEntry {
  id: string;
  path: string;
}

export interface VideoExportJob {
  outPath: string;
  dim: number;
  framesPerClip?: number; // default 12
  kind?: "video" | "frame_sequence";
  frameBlockBytes?: number;
  encoder?: FrameEncoder;
  log?: (msg: string) => void;
}

export interface VideoExportSummary {
  written: number;
  skipped: string[];
  padded: string[];
}

export const DEFAULT_FRAMES_PER_CLIP = 12;
const DEFAULT_FRAME_BLOCK = 1024;

/** Uniformly spaced indices over [0, available), classic linspace-rounding. */
export function sampleFrameIndices(available: number, wanted: number): number[] {
  if (available < 1 || wanted < 1) {
    throw new Error("frame counts must be positive");
  }
  if (wanted === 1) {
    return [Math.floor((available - 1) / 2)];
  }
  const out: number[] = [];
  for (let i = 0; i < wanted; i++) {
    out.push(Math.round((i * (available - 1)) / (wanted - 1)));
  }
  return out;
}

function splitBlocks(bytes: Buffer, blockSize: number): Buffer[] {
  const blocks: Buffer[] = [];
  for (let off = 0; off < bytes.length; off += blockSize) {
    blocks.push(bytes.subarray(off, Math.min(off + blockSize, bytes.length)));
  }
  return blocks;
}

export async function exportVideoEmbeddings(
  clips: ClipEntry[],
  job: VideoExportJob,
): Promise<VideoExportSummary> {
  const framesPerClip = job.framesPerClip ?? DEFAULT_FRAMES_PER_CLIP;
  if (framesPerClip < 1) {
    throw new Error("frames per clip must be >= 1");
  }
  const kind = job.kind ?? "frame_sequence";
  const blockSize = job.frameBlockBytes ?? DEFAULT_FRAME_BLOCK;
  const encoder = job.encoder ?? new HashFrameEncoder(job.dim);
  const log = job.log ?? ((msg: string) => console.error(msg));

  const records: EmbeddingRecord[] = [];
  const skipped: string[] = [];
  const padded: string[] = [];
  for (const clip of clips) {
    let bytes: Buffer;
    try {
      bytes = await fs.readFile(clip.path);
    } catch (err) {
      log(`skipping ${clip.id}: unreadable media (${String(err)})`);
      skipped.push(clip.id);
      continue;
    }
    if (bytes.length === 0) {
      log(`skipping ${clip.id}: empty media`);
      skipped.push(clip.id);
      continue;
    }
    const blocks = splitBlocks(bytes, blockSize);
    if (blocks.length === 1 && framesPerClip > 1) {
      padded.push(clip.id);
      log(`clip ${clip.id}: single frame repeated to ${framesPerClip}`);
    }
    const indices = sampleFrameIndices(blocks.length, framesPerClip);
    const rows = indices.map((i) => encoder.encodeFrame(blocks[i]));
    if (kind === "frame_sequence") {
      records.push({ id: clip.id, kind, rows });
    } else {
      const mean = new Float64Array(job.dim);
      for (const row of rows) {
        for (let j = 0; j < job.dim; j++) mean[j] += row[j];
      }
      const flat = new Float32Array(job.dim);
      for (let j = 0; j < job.dim; j++) flat[j] = mean[j] / rows.length;
      records.push({ id: clip.id, kind: "video", rows: [flat] });
    }
  }
  if (records.length === 0) {
    throw new Error("no clips survived export");
  }
  await writeTable(
    job.outPath,
    { dim: job.dim, records },
    { exporter: "bridge", kind, framesPerClip },
  );
  return { written: records.length, skipped, padded };
}

/** JSONL with {id|clip_id, path} per line. */
export async function readClipManifest(path: string): Promise<ClipEntry[]> {
  const raw = await fs.readFile(path, "utf-8");
  const out: ClipEntry[] = [];
  for (const line of raw.split("\n")) {
    if (!line.trim()) continue;
    const obj = JSON.parse(line);
    const id = obj.id ?? obj.clip_id;
    if (id === undefined || obj.path === undefined) {
      throw new Error(`clip line missing id/path: ${line.slice(0, 80)}`);
    }
    out.push({ id: String(id), path: String(obj.path) });
  }
  return out;
}
