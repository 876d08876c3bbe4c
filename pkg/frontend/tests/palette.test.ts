import { describe, expect, it } from "vitest";

import {
  BACKGROUND_COLOR,
  REGION_PALETTE,
  regionColor,
  regionColorCss,
} from "../src/palette.js";

describe("region palette", () => {
  it("has exactly ten region colors", () => {
    expect(REGION_PALETTE).toHaveLength(10);
  });

  it("maps background (region 0) to gray", () => {
    expect(regionColor(0)).toEqual(BACKGROUND_COLOR);
    const [r, g, b] = regionColor(0);
    expect(r).toBe(g);
    expect(g).toBe(b);
  });

  it("assigns each region a stable palette color", () => {
    for (let region = 1; region <= 10; region++) {
      expect(regionColor(region)).toEqual(REGION_PALETTE[region - 1]);
      // the same region always gets the same color
      expect(regionColor(region)).toEqual(regionColor(region));
    }
  });

  it("cycles the palette beyond ten regions", () => {
    expect(regionColor(11)).toEqual(REGION_PALETTE[0]);
    expect(regionColor(25)).toEqual(REGION_PALETTE[4]);
  });

  it("keeps all region colors distinct", () => {
    const seen = new Set(REGION_PALETTE.map((c) => c.join(",")));
    expect(seen.size).toBe(10);
    expect(seen.has(BACKGROUND_COLOR.join(","))).toBe(false);
  });

  it("renders css rgb() strings", () => {
    expect(regionColorCss(0)).toBe("rgb(140, 140, 140)");
    expect(regionColorCss(1)).toMatch(/^rgb\(\d+, \d+, \d+\)$/);
  });
});
