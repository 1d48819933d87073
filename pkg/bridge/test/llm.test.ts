import { mkdtemp, readdir, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { buildPrompt, generateModifications, pairCacheKey } from "../src/llm.js";

let dir: string;
beforeEach(async () => {
  dir = await mkdtemp(path.join(tmpdir(), "bridge-llm-"));
});
afterEach(async () => {
  await rm(dir, { recursive: true, force: true });
  vi.restoreAllMocks();
});

const TSUKAHARA = {
  srcLabel: "t2",
  dstLabel: "t1",
  srcCaption: "(VT) tsukahara stretched with 2 turn.",
  dstCaption: "(VT) tsukahara stretched with 1 turn.",
};
const LEAP = {
  srcLabel: "fx",
  dstLabel: "bb",
  srcCaption: "(FX) switch leap with 0.5 turn.",
  dstCaption: "(BB) switch leap with 0.5 turn.",
};

describe("offline mode", () => {
  it("produces the templated outputs with zero network calls", async () => {
    const fetchSpy = vi.spyOn(globalThis, "fetch");
    const mods = await generateModifications([TSUKAHARA, LEAP], {
      offline: true,
      cacheDir: path.join(dir, "cache"),
      profile: "gym",
      log: () => {},
    });
    expect(mods.map((m) => m.text)).toEqual(["show with 1 turn.", "show on BB."]);
    expect(mods.every((m) => m.source === "template")).toBe(true);
    expect(fetchSpy).not.toHaveBeenCalled();
  });
});

describe("cache", () => {
  it("hits on the second call and returns identical text", async () => {
    const cacheDir = path.join(dir, "cache");
    const first = await generateModifications([TSUKAHARA], {
      offline: true,
      cacheDir,
      profile: "gym",
      log: () => {},
    });
    expect(first[0].source).toBe("template");
    const files = await readdir(cacheDir);
    expect(files).toHaveLength(1);
    expect(files[0]).toBe(`${pairCacheKey("gym", TSUKAHARA)}.json`);

    const second = await generateModifications([TSUKAHARA], {
      offline: true,
      cacheDir,
      profile: "gym",
      log: () => {},
    });
    expect(second[0].source).toBe("cache");
    expect(second[0].text).toBe(first[0].text);
  });

  it("keys the cache by profile and both captions", () => {
    const a = pairCacheKey("gym", TSUKAHARA);
    const b = pairCacheKey("diving", TSUKAHARA);
    const c = pairCacheKey("gym", { ...TSUKAHARA, dstCaption: "(VT) other." });
    expect(a).not.toBe(b);
    expect(a).not.toBe(c);
  });
});

describe("online mode", () => {
  it("falls back to the template, flagged, when the service keeps failing", async () => {
    const fetchSpy = vi
      .spyOn(globalThis, "fetch")
      .mockResolvedValue(new Response("busy", { status: 500 }));
    const mods = await generateModifications([TSUKAHARA], {
      offline: false,
      cacheDir: path.join(dir, "cache"),
      profile: "gym",
      endpoint: "http://localhost:9/v1/chat/completions",
      model: "test-model",
      maxRetries: 1,
      log: () => {},
    });
    expect(fetchSpy).toHaveBeenCalledTimes(2); // initial + one retry
    expect(mods[0].text).toBe("show with 1 turn.");
    expect(mods[0].source).toBe("template");
    expect(mods[0].flagged).toBe(true);
  });

  it("uses the service response when it arrives", async () => {
    vi.spyOn(globalThis, "fetch").mockResolvedValue(
      new Response(
        JSON.stringify({ choices: [{ message: { content: "show with 1 turn." } }] }),
        { status: 200, headers: { "content-type": "application/json" } },
      ),
    );
    const mods = await generateModifications([TSUKAHARA], {
      offline: false,
      cacheDir: path.join(dir, "cache"),
      profile: "gym",
      endpoint: "http://example.invalid/chat",
      model: "test-model",
      log: () => {},
    });
    expect(mods[0].source).toBe("llm");
    expect(mods[0].text).toBe("show with 1 turn.");
  });
});

describe("prompt construction", () => {
  it("carries the requested number of in-context examples", () => {
    const full = buildPrompt("gym", TSUKAHARA);
    const trimmed = buildPrompt("gym", TSUKAHARA, 2);
    const count = (s: string) => (s.match(/Modification:/g) ?? []).length;
    expect(count(full)).toBeGreaterThan(count(trimmed));
    expect(count(trimmed)).toBe(3); // 2 examples + the query slot
    expect(full).toContain(TSUKAHARA.srcCaption);
  });
});
