/** Caption list -> engine-readable text embedding file. */

import { promises as fs } from "node:fs";

import { EmbeddingRecord, writeTable } from "./binfmt.js";
import { CaptionEncoder, HashCaptionEncoder } from "./encoder.js";

export interface CaptionEntry {
  id: string;
  text: string;
}

export interface TextExportJob {
  outPath: string;
  dim: number;
  encoder?: CaptionEncoder;
}

export async function exportTextEmbeddings(
  captions: CaptionEntry[],
  job: TextExportJob,
): Promise<number> {
  if (captions.length === 0) {
    throw new Error("caption list is empty");
  }
  const encoder = job.encoder ?? new HashCaptionEncoder(job.dim);
  if (encoder.dim !== job.dim) {
    throw new Error(`encoder dim ${encoder.dim} != job dim ${job.dim}`);
  }
  const records: EmbeddingRecord[] = captions.map((c) => ({
    id: c.id,
    kind: "text",
    rows: [encoder.encodeText(c.text)],
  }));
  await writeTable(job.outPath, { dim: job.dim, records }, { exporter: "bridge", kind: "text" });
  return records.length;
}

/** JSONL with {id|label_id, text|caption} per line. */
export async function readCaptionsJsonl(path: string): Promise<CaptionEntry[]> {
  const raw = await fs.readFile(path, "utf-8");
  const out: CaptionEntry[] = [];
  for (const line of raw.split("\n")) {
    if (!line.trim()) continue;
    const obj = JSON.parse(line);
    const id = obj.id ?? obj.label_id;
    const text = obj.text ?? obj.caption;
    if (id === undefined || text === undefined) {
      throw new Error(`caption line missing id/text: ${line.slice(0, 80)}`);
    }
    out.push({ id: String(id), text: String(text) });
  }
  return out;
}
