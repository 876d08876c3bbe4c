import * as THREE from "three";
import { beforeEach, describe, expect, it } from "vitest";

import { pickPoint } from "../src/picking.js";

const W = 800;
const H = 600;

describe("screen-space picking", () => {
  let camera: THREE.PerspectiveCamera;

  beforeEach(() => {
    camera = new THREE.PerspectiveCamera(50, W / H, 0.01, 100);
    camera.position.set(0, 0, 5);
    camera.lookAt(0, 0, 0);
    camera.updateMatrixWorld();
  });

  /** Independent projection oracle using three's own Vector3.project. */
  function screenPos(p: number[]): [number, number] {
    const v = new THREE.Vector3(p[0], p[1], p[2]).project(camera);
    return [((v.x + 1) / 2) * W, ((1 - v.y) / 2) * H];
  }

  it("picks the point whose projection is nearest the cursor", () => {
    const points = [
      [0, 0, 0],
      [0.5, 0.2, 0],
      [-0.4, -0.4, 1],
    ];
    for (const target of points) {
      const [sx, sy] = screenPos(target);
      const pick = pickPoint(points, camera, sx, sy, W, H, 10);
      expect(pick).not.toBeNull();
      expect(points[pick!.index]).toEqual(target);
      expect(pick!.distancePx).toBeLessThan(1e-6);
    }
  });

  it("returns null when nothing is within the radius", () => {
    const points = [[0, 0, 0]];
    const [sx, sy] = screenPos([0, 0, 0]);
    expect(pickPoint(points, camera, sx + 50, sy, W, H, 10)).toBeNull();
  });

  it("ignores points behind the camera", () => {
    const behind = [[0, 0, 10]]; // camera at z=5 looking toward -z
    expect(pickPoint(behind, camera, W / 2, H / 2, W, H, 1000)).toBeNull();
  });

  it("is deterministic and breaks ties toward the lower index", () => {
    const duplicated = [
      [0.3, 0.1, 0],
      [0.3, 0.1, 0],
    ];
    const [sx, sy] = screenPos([0.3, 0.1, 0]);
    for (let trial = 0; trial < 5; trial++) {
      const pick = pickPoint(duplicated, camera, sx, sy, W, H, 10);
      expect(pick!.index).toBe(0);
    }
  });

  it("matches a brute-force oracle on random clouds", () => {
    let seed = 42;
    const rand = () => {
      // deterministic LCG so failures are reproducible
      seed = (seed * 1664525 + 1013904223) % 4294967296;
      return seed / 4294967296;
    };
    for (let trial = 0; trial < 20; trial++) {
      const points = Array.from({ length: 50 }, () => [
        rand() * 2 - 1,
        rand() * 2 - 1,
        rand() * 2 - 1,
      ]);
      const cx = rand() * W;
      const cy = rand() * H;
      const radius = 150;

      let oracleIndex = -1;
      let oracleDist = Infinity;
      points.forEach((p, i) => {
        const v = new THREE.Vector3(p[0], p[1], p[2]).project(camera);
        if (v.z < -1 || v.z > 1) {
          return;
        }
        const d = Math.hypot(((v.x + 1) / 2) * W - cx, ((1 - v.y) / 2) * H - cy);
        if (d <= radius && d < oracleDist) {
          oracleDist = d;
          oracleIndex = i;
        }
      });

      const pick = pickPoint(points, camera, cx, cy, W, H, radius);
      if (oracleIndex === -1) {
        expect(pick).toBeNull();
      } else {
        expect(pick!.index).toBe(oracleIndex);
        expect(pick!.distancePx).toBeCloseTo(oracleDist, 6);
      }
    }
  });
});
