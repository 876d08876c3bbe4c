/**
 * Screen-space point picking.
 *
 * Projects every point through the camera and returns the index of the
 * point whose projected position is nearest to the cursor, provided it is
 * within the picking radius (in CSS pixels). Deterministic for a fixed
 * camera; ties break toward the lower point index.
 */

import * as THREE from "three";

export interface PickResult {
  index: number;
  distancePx: number;
}

export function pickPoint(
  points: number[][],
  camera: THREE.Camera,
  cursorX: number,
  cursorY: number,
  viewportWidth: number,
  viewportHeight: number,
  radiusPx: number,
): PickResult | null {
  camera.updateMatrixWorld();
  const projection = new THREE.Matrix4()
    .multiplyMatrices(camera.projectionMatrix, camera.matrixWorldInverse);
  const v = new THREE.Vector4();
  let best: PickResult | null = null;
  for (let i = 0; i < points.length; i++) {
    const p = points[i];
    if (p === undefined) {
      continue;
    }
    v.set(p[0] ?? 0, p[1] ?? 0, p[2] ?? 0, 1).applyMatrix4(projection);
    if (v.w <= 0) {
      continue; // behind the camera
    }
    const ndcX = v.x / v.w;
    const ndcY = v.y / v.w;
    const ndcZ = v.z / v.w;
    if (ndcZ < -1 || ndcZ > 1) {
      continue; // outside the clip volume
    }
    const sx = (ndcX + 1) * 0.5 * viewportWidth;
    const sy = (1 - ndcY) * 0.5 * viewportHeight;
    const d = Math.hypot(sx - cursorX, sy - cursorY);
    if (d <= radiusPx && (best === null || d < best.distancePx)) {
      best = { index: i, distancePx: d };
    }
  }
  return best;
}
