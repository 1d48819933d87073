/**
 * Reader/writer for the engine's binary embedding format.
 *
 * Layout (little-endian): magic "TFCV", u16 version (= 1), u32 dimension,
 * u64 record count, then per record: u16 id length + UTF-8 id, u8 kind
 * (0 video, 1 text, 2 frame_sequence), u32 frame count T (1 unless a
 * frame sequence), T * d float32 values row-major. A JSON manifest with
 * the same basename (".manifest.json") lists ids and kinds; the binary
 * file is authoritative.
 */

import { promises as fs } from "node:fs";

export const MAGIC = "TFCV";
export const FORMAT_VERSION = 1;

export type RecordKind = "video" | "text" | "frame_sequence";

const KIND_CODES: Record<RecordKind, number> = {
  video: 0,
  text: 1,
  frame_sequence: 2,
};
const CODE_KINDS: Record<number, RecordKind> = { 0: "video", 1: "text", 2: "frame_sequence" };

export interface EmbeddingRecord {
  id: string;
  kind: RecordKind;
  /** T rows of d values; exactly one row unless kind is frame_sequence. */
  rows: Float32Array[];
}

export interface EmbeddingFile {
  dim: number;
  records: EmbeddingRecord[];
}

export function validateRecord(rec: EmbeddingRecord, dim: number): void {
  if (rec.rows.length < 1) {
    throw new Error(`record ${rec.id}: needs at least one row`);
  }
  if (rec.kind !== "frame_sequence" && rec.rows.length !== 1) {
    throw new Error(`record ${rec.id}: kind ${rec.kind} requires exactly one row`);
  }
  for (const row of rec.rows) {
    if (row.length !== dim) {
      throw new Error(`record ${rec.id}: row length ${row.length} != dim ${dim}`);
    }
    let allZero = true;
    for (const v of row) {
      if (!Number.isFinite(v)) {
        throw new Error(`record ${rec.id}: non-finite value`);
      }
      if (v !== 0) allZero = false;
    }
    if (allZero) {
      throw new Error(`record ${rec.id}: zero vector`);
    }
  }
}

export function encodeTable(table: EmbeddingFile): Buffer {
  const seen = new Set<string>();
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(4 + 2 + 4 + 8);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt16LE(FORMAT_VERSION, 4);
  header.writeUInt32LE(table.dim, 6);
  header.writeBigUInt64LE(BigInt(table.records.length), 10);
  chunks.push(header);

  for (const rec of table.records) {
    if (seen.has(rec.id)) {
      throw new Error(`duplicate id ${rec.id}`);
    }
    seen.add(rec.id);
    validateRecord(rec, table.dim);
    const idBytes = Buffer.from(rec.id, "utf-8");
    if (idBytes.length > 0xffff) {
      throw new Error(`id too long: ${rec.id.slice(0, 40)}...`);
    }
    const head = Buffer.alloc(2 + idBytes.length + 1 + 4);
    head.writeUInt16LE(idBytes.length, 0);
    idBytes.copy(head, 2);
    head.writeUInt8(KIND_CODES[rec.kind], 2 + idBytes.length);
    head.writeUInt32LE(rec.rows.length, 3 + idBytes.length);
    chunks.push(head);
    for (const row of rec.rows) {
      const payload = Buffer.alloc(4 * row.length);
      for (let i = 0; i < row.length; i++) {
        payload.writeFloatLE(row[i], 4 * i);
      }
      chunks.push(payload);
    }
  }
  return Buffer.concat(chunks);
}

export function decodeTable(buf: Buffer): EmbeddingFile {
  if (buf.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new Error(`bad magic ${buf.subarray(0, 4).toString("ascii")}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const dim = buf.readUInt32LE(6);
  const count = Number(buf.readBigUInt64LE(10));
  let off = 18;
  const records: EmbeddingRecord[] = [];
  for (let r = 0; r < count; r++) {
    const idLen = buf.readUInt16LE(off);
    off += 2;
    const id = buf.subarray(off, off + idLen).toString("utf-8");
    off += idLen;
    const kind = CODE_KINDS[buf.readUInt8(off)];
    if (kind === undefined) {
      throw new Error(`record ${id}: unknown kind code`);
    }
    off += 1;
    const t = buf.readUInt32LE(off);
    off += 4;
    const rows: Float32Array[] = [];
    for (let i = 0; i < t; i++) {
      const row = new Float32Array(dim);
      for (let j = 0; j < dim; j++) {
        row[j] = buf.readFloatLE(off);
        off += 4;
      }
      rows.push(row);
    }
    records.push({ id, kind, rows });
  }
  if (off !== buf.length) {
    throw new Error("trailing bytes after last record");
  }
  return { dim, records };
}

export async function writeTable(
  filePath: string,
  table: EmbeddingFile,
  source: Record<string, unknown> = {},
): Promise<void> {
  await fs.writeFile(filePath, encodeTable(table));
  const manifest = {
    dim: table.dim,
    count: table.records.length,
    records: table.records.map((r) => ({ id: r.id, kind: r.kind, frames: r.rows.length })),
    source,
  };
  const base = filePath.replace(/\.[^./\\]*$/, "");
  const manifestPath = `${base}.manifest.json`;
  await fs.writeFile(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
}

export async function readTable(filePath: string): Promise<EmbeddingFile> {
  return decodeTable(await fs.readFile(filePath));
}

export function manifestPathFor(filePath: string): string {
  return `${filePath.replace(/\.[^./\\]*$/, "")}.manifest.json`;
}

/** Cosine in float64, matching the engine's accumulate-in-double rule. */
export function cosine(a: Float32Array, b: Float32Array): number {
  if (a.length !== b.length) {
    throw new Error("dimension mismatch");
  }
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na === 0 || nb === 0) {
    throw new Error("cosine undefined for zero vectors");
  }
  return dot / (Math.sqrt(na) * Math.sqrt(nb));
}
