/**
 * three.js rendering of the point cloud, mask overlay, and click markers.
 *
 * Pure display: colors are recomputed from (point colors, server labels,
 * color mode), and click markers from the click list. Nothing here changes
 * session state.
 */

import * as THREE from "three";

import { regionColor } from "./palette.js";
import { CameraPose, ClickRecord, ColorMode } from "./state.js";

const BLEND_MASK_WEIGHT = 0.65;

/** Per-point RGB for a color mode; exported for testing. */
export function computePointColors(
  colors: number[][] | null,
  labels: number[],
  mode: ColorMode,
  count: number,
): Float32Array {
  const out = new Float32Array(count * 3);
  for (let i = 0; i < count; i++) {
    const rgb = colors?.[i] ?? [0.7, 0.7, 0.7];
    const base: [number, number, number] = [rgb[0] ?? 0.7, rgb[1] ?? 0.7, rgb[2] ?? 0.7];
    let value: readonly [number, number, number];
    if (mode === "rgb") {
      value = base;
    } else {
      const mask = regionColor(labels[i] ?? 0);
      if (mode === "mask") {
        value = mask;
      } else {
        value = [
          base[0] * (1 - BLEND_MASK_WEIGHT) + mask[0] * BLEND_MASK_WEIGHT,
          base[1] * (1 - BLEND_MASK_WEIGHT) + mask[1] * BLEND_MASK_WEIGHT,
          base[2] * (1 - BLEND_MASK_WEIGHT) + mask[2] * BLEND_MASK_WEIGHT,
        ];
      }
    }
    out[i * 3] = value[0];
    out[i * 3 + 1] = value[1];
    out[i * 3 + 2] = value[2];
  }
  return out;
}

export class Viewer {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private cloud: THREE.Points | null = null;
  private markers = new THREE.Group();
  private points: number[][] = [];
  private colors: number[][] | null = null;
  private labels: number[] = [];
  private clicks: ClickRecord[] = [];
  private mode: ColorMode = "blended";
  private pointSize = 3;

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(50, 1, 0.01, 100);
    this.camera.up.set(0, 0, 1);
    this.scene.background = new THREE.Color(0x15161a);
    this.scene.add(this.markers);
    this.resize();
  }

  resize(): void {
    const w = this.canvas.clientWidth || 800;
    const h = this.canvas.clientHeight || 600;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
  }

  setCamera(pose: CameraPose): void {
    this.camera.position.set(...pose.position);
    this.camera.lookAt(...pose.target);
  }

  setScene(points: number[][], colors: number[][] | null): void {
    this.points = points;
    this.colors = colors;
    if (this.cloud !== null) {
      this.scene.remove(this.cloud);
      this.cloud.geometry.dispose();
    }
    const geometry = new THREE.BufferGeometry();
    const positions = new Float32Array(points.length * 3);
    points.forEach((p, i) => {
      positions[i * 3] = p[0] ?? 0;
      positions[i * 3 + 1] = p[1] ?? 0;
      positions[i * 3 + 2] = p[2] ?? 0;
    });
    geometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
    geometry.setAttribute(
      "color",
      new THREE.BufferAttribute(new Float32Array(points.length * 3), 3),
    );
    const material = new THREE.PointsMaterial({
      size: this.pointSize,
      sizeAttenuation: false,
      vertexColors: true,
    });
    this.cloud = new THREE.Points(geometry, material);
    this.scene.add(this.cloud);
    this.refreshColors();
  }

  setMask(labels: number[], clicks: ClickRecord[]): void {
    this.labels = labels;
    this.clicks = clicks;
    this.refreshColors();
    this.refreshMarkers();
  }

  setColorMode(mode: ColorMode): void {
    this.mode = mode;
    this.refreshColors();
  }

  setPointSize(size: number): void {
    this.pointSize = size;
    if (this.cloud !== null) {
      (this.cloud.material as THREE.PointsMaterial).size = size;
    }
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }

  private refreshColors(): void {
    if (this.cloud === null) {
      return;
    }
    const attr = this.cloud.geometry.getAttribute("color") as THREE.BufferAttribute;
    (attr.array as Float32Array).set(
      computePointColors(this.colors, this.labels, this.mode, this.points.length),
    );
    attr.needsUpdate = true;
  }

  private refreshMarkers(): void {
    this.markers.clear();
    this.clicks.forEach((click, i) => {
      const newest = i === this.clicks.length - 1;
      const [r, g, b] = regionColor(click.region);
      const sphere = new THREE.Mesh(
        new THREE.SphereGeometry(0.02, 12, 12),
        new THREE.MeshBasicMaterial({ color: new THREE.Color(r, g, b) }),
      );
      sphere.position.set(click.x, click.y, click.z);
      this.markers.add(sphere);
      if (newest) {
        // The most recent click gets a red ring so the user can track it.
        const ring = new THREE.Mesh(
          new THREE.TorusGeometry(0.035, 0.004, 8, 32),
          new THREE.MeshBasicMaterial({ color: 0xff2222 }),
        );
        ring.position.copy(sphere.position);
        ring.lookAt(this.camera.position);
        this.markers.add(ring);
      }
    });
  }
}
