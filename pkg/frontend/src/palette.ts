/**
 * Region colors. Region 0 (background) is gray; regions 1..9 draw from a
 * fixed 10-color palette so a region keeps its color across rounds and
 * across the click markers / mask overlay / legend.
 */

export const BACKGROUND_COLOR: readonly [number, number, number] = [0.55, 0.55, 0.55];

/** Ten distinguishable colors, indexed by (region - 1) % 10. RGB in [0,1]. */
export const REGION_PALETTE: readonly (readonly [number, number, number])[] = [
  [0.894, 0.102, 0.11], // red
  [0.216, 0.494, 0.722], // blue
  [0.302, 0.686, 0.29], // green
  [0.596, 0.306, 0.639], // purple
  [1.0, 0.498, 0.0], // orange
  [0.969, 0.906, 0.118], // yellow
  [0.651, 0.337, 0.157], // brown
  [0.969, 0.506, 0.749], // pink
  [0.4, 0.761, 0.647], // teal
  [0.55, 0.827, 0.78], // mint
];

export function regionColor(region: number): readonly [number, number, number] {
  if (region <= 0) {
    return BACKGROUND_COLOR;
  }
  const entry = REGION_PALETTE[(region - 1) % REGION_PALETTE.length];
  return entry ?? BACKGROUND_COLOR;
}

export function regionColorCss(region: number): string {
  const [r, g, b] = regionColor(region);
  return `rgb(${Math.round(r * 255)}, ${Math.round(g * 255)}, ${Math.round(b * 255)})`;
}
