import { describe, expect, it } from "vitest";

import { BACKGROUND_COLOR, regionColor } from "../src/palette.js";
import { computePointColors } from "../src/viewer.js";

const COLORS = [
  [1, 0, 0],
  [0, 1, 0],
  [0, 0, 1],
];
const LABELS = [0, 1, 2];

function expectRgb(actual: ArrayLike<number>, expected: readonly number[]): void {
  expect(actual).toHaveLength(expected.length);
  for (let i = 0; i < expected.length; i++) {
    // colors are stored as float32, so compare at that precision
    expect(actual[i]).toBeCloseTo(expected[i]!, 6);
  }
}

describe("point color computation", () => {
  it("passes scene colors through in rgb mode", () => {
    const out = computePointColors(COLORS, LABELS, "rgb", 3);
    expect(Array.from(out)).toEqual([1, 0, 0, 0, 1, 0, 0, 0, 1]);
  });

  it("uses only the palette in mask mode", () => {
    const out = computePointColors(COLORS, LABELS, "mask", 3);
    expectRgb(out.slice(0, 3), BACKGROUND_COLOR);
    expectRgb(out.slice(3, 6), regionColor(1));
    expectRgb(out.slice(6, 9), regionColor(2));
  });

  it("blends scene and mask colors in blended mode", () => {
    const out = computePointColors(COLORS, LABELS, "blended", 3);
    const w = 0.65;
    const expected = [1 * (1 - w) + regionColor(0)[0] * w];
    expect(out[0]).toBeCloseTo(expected[0]!, 6);
    // every channel lies between the two sources
    for (let i = 0; i < 3; i++) {
      const base = COLORS[i]!;
      const mask = regionColor(LABELS[i]!);
      for (let c = 0; c < 3; c++) {
        const lo = Math.min(base[c]!, mask[c]);
        const hi = Math.max(base[c]!, mask[c]);
        expect(out[i * 3 + c]).toBeGreaterThanOrEqual(lo - 1e-9);
        expect(out[i * 3 + c]).toBeLessThanOrEqual(hi + 1e-9);
      }
    }
  });

  it("falls back to neutral gray when the scene has no colors", () => {
    const out = computePointColors(null, [0], "rgb", 1);
    expectRgb(out, [0.7, 0.7, 0.7]);
  });

  it("treats missing labels as background", () => {
    const out = computePointColors(COLORS, [], "mask", 3);
    for (let i = 0; i < 3; i++) {
      expectRgb(out.slice(i * 3, i * 3 + 3), BACKGROUND_COLOR);
    }
  });
});
