/**
 * Encoder interfaces plus the deterministic stand-in used by default.
 *
 * Real vision-language encoders are external to this bridge; anything that
 * can produce a fixed-dimension vector for a caption or a frame plugs in
 * here. The default implementation derives vectors from sha256 of the
 * content, which gives the properties the pipeline contracts need —
 * identical input, identical vector; distinct inputs, near-orthogonal
 * vectors — without any model weights. It is NOT semantic: use a real
 * encoder for real retrieval quality.
 */

import { createHash } from "node:crypto";

export interface CaptionEncoder {
  readonly dim: number;
  encodeText(text: string): Float32Array;
}

export interface FrameEncoder {
  readonly dim: number;
  encodeFrame(bytes: Buffer): Float32Array;
}

/** Expand sha256(domain || payload || counter) into a unit vector. */
export function hashVector(dim: number, payload: Buffer, domain: string): Float32Array {
  const out = new Float64Array(dim);
  let filled = 0;
  let counter = 0;
  while (filled < dim) {
    const digest = createHash("sha256")
      .update(domain)
      .update(payload)
      .update(String(counter))
      .digest();
    for (let off = 0; off + 4 <= digest.length && filled < dim; off += 4) {
      const u = digest.readUInt32LE(off);
      out[filled++] = (u / 0xffffffff) * 2 - 1;
    }
    counter++;
  }
  let norm = 0;
  for (const v of out) norm += v * v;
  norm = Math.sqrt(norm);
  const unit = new Float32Array(dim);
  for (let i = 0; i < dim; i++) unit[i] = out[i] / norm;
  return unit;
}

export class HashCaptionEncoder implements CaptionEncoder {
  constructor(readonly dim: number) {}

  encodeText(text: string): Float32Array {
    if (!text.trim()) {
      throw new Error("cannot encode an empty caption");
    }
    return hashVector(this.dim, Buffer.from(text, "utf-8"), "caption");
  }
}

export class HashFrameEncoder implements FrameEncoder {
  constructor(readonly dim: number) {}

  encodeFrame(bytes: Buffer): Float32Array {
    if (bytes.length === 0) {
      throw new Error("cannot encode an empty frame");
    }
    return hashVector(this.dim, bytes, "frame");
  }
}
