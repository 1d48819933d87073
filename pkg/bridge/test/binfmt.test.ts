import { mkdtemp, readFile, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";
import { afterEach, beforeEach, describe, expect, it } from "vitest";

import {
  cosine,
  decodeTable,
  encodeTable,
  EmbeddingFile,
  manifestPathFor,
  readTable,
  writeTable,
} from "../src/binfmt.js";

function vec(...values: number[]): Float32Array {
  return Float32Array.from(values);
}

describe("binary table codec", () => {
  it("round-trips records exactly", () => {
    const table: EmbeddingFile = {
      dim: 3,
      records: [
        { id: "a", kind: "video", rows: [vec(1, 2, 3)] },
        { id: "b", kind: "text", rows: [vec(-0.5, 0.25, 8)] },
        { id: "c", kind: "frame_sequence", rows: [vec(1, 0, 0), vec(0, 1, 0)] },
      ],
    };
    const decoded = decodeTable(encodeTable(table));
    expect(decoded.dim).toBe(3);
    expect(decoded.records.map((r) => r.id)).toEqual(["a", "b", "c"]);
    expect(decoded.records[2].rows.length).toBe(2);
    expect(Array.from(decoded.records[1].rows[0])).toEqual([-0.5, 0.25, 8]);
  });

  it("rejects zero vectors", () => {
    const table: EmbeddingFile = {
      dim: 2,
      records: [{ id: "z", kind: "video", rows: [vec(0, 0)] }],
    };
    expect(() => encodeTable(table)).toThrow(/zero vector/);
  });

  it("rejects non-finite values", () => {
    const table: EmbeddingFile = {
      dim: 2,
      records: [{ id: "n", kind: "video", rows: [vec(1, Number.NaN)] }],
    };
    expect(() => encodeTable(table)).toThrow(/non-finite/);
  });

  it("rejects duplicate ids", () => {
    const table: EmbeddingFile = {
      dim: 1,
      records: [
        { id: "x", kind: "video", rows: [vec(1)] },
        { id: "x", kind: "video", rows: [vec(2)] },
      ],
    };
    expect(() => encodeTable(table)).toThrow(/duplicate/);
  });

  it("rejects multi-row records that are not frame sequences", () => {
    const table: EmbeddingFile = {
      dim: 1,
      records: [{ id: "x", kind: "video", rows: [vec(1), vec(2)] }],
    };
    expect(() => encodeTable(table)).toThrow(/exactly one row/);
  });

  it("rejects bad magic on decode", () => {
    expect(() => decodeTable(Buffer.from("JUNKJUNKJUNKJUNKJUNK"))).toThrow(/magic/);
  });
});

describe("file io", () => {
  let dir: string;
  beforeEach(async () => {
    dir = await mkdtemp(path.join(tmpdir(), "bridge-binfmt-"));
  });
  afterEach(async () => {
    await rm(dir, { recursive: true, force: true });
  });

  it("writes the manifest sidecar next to the table", async () => {
    const file = path.join(dir, "t.tfcv");
    await writeTable(
      file,
      { dim: 2, records: [{ id: "a", kind: "video", rows: [vec(1, 2)] }] },
      { note: "test" },
    );
    const manifest = JSON.parse(await readFile(manifestPathFor(file), "utf-8"));
    expect(manifest.count).toBe(1);
    expect(manifest.dim).toBe(2);
    expect(manifest.source.note).toBe("test");
    const loaded = await readTable(file);
    expect(loaded.records[0].id).toBe("a");
  });
});

describe("cosine", () => {
  it("matches the 3-4-5 case", () => {
    expect(cosine(vec(3, 0), vec(3, 4))).toBeCloseTo(0.6, 12);
  });

  it("rejects zero vectors", () => {
    expect(() => cosine(vec(0, 0), vec(1, 1))).toThrow(/zero/);
  });
});
