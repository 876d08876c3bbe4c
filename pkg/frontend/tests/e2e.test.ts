/**
 * End-to-end test against the real annotation service.
 *
 * Spawns `clickseg3d serve` with a freshly created checkpoint, then drives
 * the same client pipeline the browser uses (session controller + picking)
 * through the scripted workflow: Ctrl+click marks background (region 0),
 * pressing digit 3 and clicking marks region 3, each click refreshes the
 * mask from the server, and the exported labels must equal a direct service
 * export for the same click sequence.
 *
 * There is no browser in this environment, so DOM events are simulated at
 * the controller boundary: "Ctrl+click" means picking a point and placing
 * it with region 0, "digit-3+click" means setting the active region to 3
 * and placing the next pick with it -- exactly what main.ts does with real
 * events.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import * as THREE from "three";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationClient } from "../src/api.js";
import { pickPoint } from "../src/picking.js";
import { AnnotationSession, ClickRecord } from "../src/state.js";

const PORT = 8765 + (process.pid % 100);
const BASE = `http://127.0.0.1:${PORT}`;
const SCENE_ID = "synthetic-3";
const W = 800;
const H = 600;

let server: ChildProcess | null = null;
let workdir = "";

async function waitForHealthz(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/healthz`);
      if (resp.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("service did not become healthy in time");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "clickseg3d-e2e-"));
  const checkpoint = join(workdir, "model.npz");
  const made = spawnSync(
    "python3",
    [
      "-c",
      [
        "from clickseg3d.model import InteractiveSegmentationModel, ModelConfig",
        "cfg = ModelConfig(backbone_widths=(4, 8), backbone_dim=8, dim=16,",
        "                  num_heads=2, ffn_dim=32, num_layers=2,",
        "                  num_background_queries=4)",
        `InteractiveSegmentationModel(cfg, seed=0).save(${JSON.stringify(checkpoint)})`,
      ].join("\n"),
    ],
    { encoding: "utf8" },
  );
  if (made.status !== 0) {
    throw new Error(`checkpoint creation failed: ${made.stderr}`);
  }
  server = spawn(
    "python3",
    ["-m", "clickseg3d.cli", "serve", checkpoint, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForHealthz(60_000);
}, 90_000);

afterAll(() => {
  server?.kill();
  if (workdir !== "") {
    rmSync(workdir, { recursive: true, force: true });
  }
});

describe("scripted annotation workflow against the live service", () => {
  it(
    "Ctrl+click and digit-3+click refresh the mask and export consistently",
    { timeout: 120_000 },
    async () => {
      const client = new AnnotationClient(BASE);
      const maskRefreshes: number[][] = [];
      const errors: string[] = [];
      const session = new AnnotationSession(client, {
        onMask: (labels) => maskRefreshes.push(labels),
        onError: (message) => errors.push(message),
        onStats: () => {},
      });

      const info = await session.open({ scene_id: SCENE_ID });
      expect(info.num_points).toBeGreaterThan(0);
      expect(session.points).toHaveLength(info.num_points);
      expect(session.state.sessionId).toBe(info.session_id);
      const refreshesAfterLoad = maskRefreshes.length;

      // a fixed camera looking at the scene from above and to the side
      const camera = new THREE.PerspectiveCamera(50, W / H, 0.01, 100);
      camera.up.set(0, 0, 1);
      camera.position.set(2.5, -2.5, 2.0);
      camera.lookAt(0.8, 0.8, 0.2);
      camera.updateMatrixWorld();

      // pick two distinct on-screen points the way canvas clicks would
      const project = (p: number[]): [number, number] => {
        const v = new THREE.Vector3(p[0], p[1], p[2]).project(camera);
        return [((v.x + 1) / 2) * W, ((1 - v.y) / 2) * H];
      };
      const [c1x, c1y] = project(session.points[0]!);
      const [c2x, c2y] = project(session.points[session.points.length - 1]!);
      const pick1 = pickPoint(session.points, camera, c1x, c1y, W, H, 12);
      const pick2 = pickPoint(session.points, camera, c2x, c2y, W, H, 12);
      expect(pick1).not.toBeNull();
      expect(pick2).not.toBeNull();

      // Ctrl+click: modifier forces region 0 regardless of the active region
      const p1 = session.points[pick1!.index]!;
      session.placeClick([p1[0]!, p1[1]!, p1[2]!], 0);
      await session.settled();
      expect(maskRefreshes.length).toBe(refreshesAfterLoad + 1);

      // digit 3 sets the active region; the next click carries it
      session.state.activeRegion = 3;
      const p2 = session.points[pick2!.index]!;
      session.placeClick(
        [p2[0]!, p2[1]!, p2[2]!],
        session.state.activeRegion,
      );
      await session.settled();
      expect(maskRefreshes.length).toBe(refreshesAfterLoad + 2);
      expect(errors).toEqual([]);

      // server assigned consecutive timestamps to the two clicks
      expect(session.state.clicks.map((c: ClickRecord) => c.timestamp)).toEqual(
        [1, 2],
      );
      expect(session.state.clicks.map((c: ClickRecord) => c.region)).toEqual(
        [0, 3],
      );

      // the displayed mask is exactly the last server response
      const uiExport = await session.exportLabels();
      expect(uiExport.labels).toEqual(
        maskRefreshes[maskRefreshes.length - 1],
      );

      // a second session fed the same click sequence directly must export
      // identical labels (replay determinism across sessions)
      const direct = await client.createSession({ scene_id: SCENE_ID });
      await client.addClicks(direct.session_id, [
        { x: p1[0]!, y: p1[1]!, z: p1[2]!, region: 0 },
      ]);
      await client.addClicks(direct.session_id, [
        { x: p2[0]!, y: p2[1]!, z: p2[2]!, region: 3 },
      ]);
      const directExport = await client.exportJson(direct.session_id);

      expect(uiExport.labels).toEqual(directExport.labels);
      expect(uiExport.clicks).toEqual(directExport.clicks);
    },
  );

  it("export with no clicks labels every point background", { timeout: 60_000 }, async () => {
    const client = new AnnotationClient(BASE);
    const info = await client.createSession({ scene_id: SCENE_ID });
    const exported = await client.exportJson(info.session_id);
    expect(exported.labels).toHaveLength(info.num_points);
    expect(new Set(exported.labels)).toEqual(new Set([0]));
  });
});
