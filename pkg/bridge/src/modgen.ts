/**
 * Deterministic modification texts from caption deltas — the offline
 * generator. Mirrors the engine's templates exactly so offline runs are
 * interchangeable with it: count substitution ("show with 1 turn."),
 * apparatus substitution ("show on BB."), body-position substitution
 * ("show tucked with 1 turn."), and a flagged generic fallback.
 */

const APPARATUS_CODES: Record<string, string> = {
  VAULT: "VT",
  "FLOOR EXERCISE": "FX",
  "BALANCE BEAM": "BB",
  "UNEVEN BARS": "UB",
};

const GYM_TAG_RE = /^\(([^)]+)\)\s*(.*)$/;
const DIVING_TAG_RE = /^(Forward|Back|Reverse|Inward|Arm(?:\.\w+)?)\s*,\s*(.*)$/;
const NUMBER_RE = /^\d+(\.\d+)?$/;
const SOMS_RE = /^(\d+(?:\.\d+)?)\s+Soms\.(\w+)$/;
const TWISTS_RE = /^(\d+(?:\.\d+)?)\s+Twists?$/;

const GYM_UNITS = new Set([
  "turn", "turns", "twist", "twists", "salto", "saltos", "somersault", "somersaults",
]);
const GYM_POSITIONS = new Set(["stretched", "tucked", "piked", "layout", "free"]);

export interface Modification {
  text: string;
  rule: "count" | "apparatus" | "position" | "fallback";
  flagged: boolean;
}

export interface CaptionPair {
  srcCaption: string;
  dstCaption: string;
  /** "temporal" | "event"; inferred from the tags when omitted. */
  changeKind?: string;
}

export function parseEventTag(caption: string): { tag: string; remainder: string } {
  const trimmed = caption.trim();
  const gym = GYM_TAG_RE.exec(trimmed);
  if (gym) {
    const raw = gym[1].trim();
    return { tag: APPARATUS_CODES[raw.toUpperCase()] ?? raw, remainder: gym[2].trim() };
  }
  const dive = DIVING_TAG_RE.exec(trimmed);
  if (dive) {
    return { tag: dive[1], remainder: dive[2].trim() };
  }
  throw new Error(`caption has no recognizable event tag: ${caption}`);
}

function tokens(remainder: string): string[] {
  return remainder
    .split(/\s+/)
    .map((t) => t.replace(/^[.,]+|[.,]+$/g, ""))
    .filter((t) => t.length > 0);
}

function gymModification(srcRem: string, dstRem: string): Modification {
  const src = tokens(srcRem);
  const dst = tokens(dstRem);
  if (src.join(" ") === dst.join(" ")) {
    throw new Error("captions carry no delta");
  }

  if (src.length === dst.length) {
    const diff: number[] = [];
    for (let i = 0; i < src.length; i++) {
      if (src[i] !== dst[i]) diff.push(i);
    }
    const numIdx = diff.filter((i) => NUMBER_RE.test(dst[i]));
    const posIdx = diff.filter((i) => GYM_POSITIONS.has(dst[i].toLowerCase()));
    if (diff.length === 1 && numIdx.length === 1) {
      const i = diff[0];
      if (i + 1 < dst.length && GYM_UNITS.has(dst[i + 1].toLowerCase())) {
        return { text: `show with ${dst[i]} ${dst[i + 1]}.`, rule: "count", flagged: false };
      }
    }
    if (posIdx.length > 0 && diff.length <= 2 && numIdx.length === diff.length - 1) {
      const pos = dst[posIdx[0]];
      if (numIdx.length === 1) {
        const i = numIdx[0];
        const unit =
          i + 1 < dst.length && GYM_UNITS.has(dst[i + 1].toLowerCase()) ? dst[i + 1] : "";
        const suffix = unit ? ` with ${dst[i]} ${unit}` : ` with ${dst[i]}`;
        return { text: `show ${pos}${suffix}.`, rule: "position", flagged: false };
      }
      const next = posIdx[0] + 1 < dst.length ? dst[posIdx[0] + 1] : "";
      const tail = GYM_UNITS.has(next.toLowerCase()) ? ` ${next}` : "";
      return { text: `show ${pos}${tail}.`, rule: "position", flagged: false };
    }
  }

  let pre = 0;
  while (pre < Math.min(src.length, dst.length) && src[pre] === dst[pre]) pre++;
  let suf = 0;
  while (
    suf < Math.min(src.length, dst.length) - pre &&
    src[src.length - 1 - suf] === dst[dst.length - 1 - suf]
  ) {
    suf++;
  }
  let delta = dst.slice(pre, dst.length - suf);
  if (delta.length === 0) {
    delta = dst.slice();
  } else {
    if (pre > 0 && dst[pre - 1].toLowerCase() === "with") {
      delta = ["with", ...delta];
    }
    if (suf > 0 && GYM_UNITS.has(dst[dst.length - suf].toLowerCase())) {
      delta = [...delta, dst[dst.length - suf]];
    }
  }
  return { text: `show ${delta.join(" ")}.`, rule: "fallback", flagged: true };
}

interface DivingFields {
  twists: string | null;
  soms: string | null;
  position: string | null;
  other: string[];
}

function divingFields(remainder: string): DivingFields {
  const fields: DivingFields = { twists: null, soms: null, position: null, other: [] };
  for (const part of remainder.split(",").map((p) => p.trim()).filter(Boolean)) {
    const soms = SOMS_RE.exec(part);
    if (soms) {
      fields.soms = soms[1];
      fields.position = soms[2];
      continue;
    }
    const twists = TWISTS_RE.exec(part);
    if (twists) {
      fields.twists = twists[1];
      continue;
    }
    fields.other.push(part);
  }
  return fields;
}

function divingModification(srcRem: string, dstRem: string): Modification {
  if (srcRem === dstRem) {
    throw new Error("captions carry no delta");
  }
  const src = divingFields(srcRem);
  const dst = divingFields(dstRem);
  if (src.other.join("|") !== dst.other.join("|")) {
    return { text: `Show ${dstRem}.`, rule: "fallback", flagged: true };
  }
  const clauses: string[] = [];
  if (src.twists !== dst.twists && dst.twists !== null) {
    clauses.push(`${dst.twists} twists`);
  }
  if (src.soms !== dst.soms && dst.soms !== null) {
    let soms = `${dst.soms} somersaults`;
    if (src.position !== dst.position && dst.position !== null) {
      soms += ` ${dst.position}`;
    }
    clauses.push(soms);
  }
  if (clauses.length > 0) {
    return { text: `Show with ${clauses.join(" and ")}.`, rule: "count", flagged: false };
  }
  if (src.position !== dst.position && dst.position !== null) {
    return { text: `Show ${dst.position}.`, rule: "position", flagged: false };
  }
  return { text: `Show ${dstRem}.`, rule: "fallback", flagged: true };
}

export function generateModification(pair: CaptionPair): Modification {
  if (pair.srcCaption.trim() === pair.dstCaption.trim()) {
    throw new Error("identical captions: no delta exists");
  }
  const src = parseEventTag(pair.srcCaption);
  const dst = parseEventTag(pair.dstCaption);
  const isEvent =
    pair.changeKind === "event" || (pair.changeKind === undefined && src.tag !== dst.tag);
  if (isEvent) {
    return { text: `show on ${dst.tag}.`, rule: "apparatus", flagged: false };
  }
  if (DIVING_TAG_RE.test(pair.srcCaption.trim())) {
    return divingModification(src.remainder, dst.remainder);
  }
  return gymModification(src.remainder, dst.remainder);
}
