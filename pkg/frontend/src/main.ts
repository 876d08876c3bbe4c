/**
 * Browser entry point: wires keyboard/mouse input, the annotation session,
 * and the three.js viewer together.
 *
 * Controls:
 *   digits 1-9   set the active region
 *   click        annotate the point under the cursor with the active region
 *   Ctrl+click   annotate as background (region 0)
 *   u            undo the last click
 *   [ / ]        replay previous / next round
 *   m            cycle color mode (rgb -> mask -> blended)
 *   e            export labels as JSON
 */

import { AnnotationClient } from "./api.js";
import { pickPoint } from "./picking.js";
import { regionColorCss } from "./palette.js";
import { AnnotationSession, ColorMode, describeError } from "./state.js";
import { Viewer } from "./viewer.js";

const PICK_RADIUS_PX = 12;
const COLOR_MODES: ColorMode[] = ["rgb", "mask", "blended"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const banner = el<HTMLDivElement>("banner");
  const stats = el<HTMLDivElement>("stats");
  const regionBadge = el<HTMLSpanElement>("region");
  const hint = el<HTMLDivElement>("hint");

  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("service") ?? "http://127.0.0.1:8000";
  const sceneId = params.get("scene") ?? "synthetic-7";

  const viewer = new Viewer(canvas);
  const client = new AnnotationClient(baseUrl);

  const showError = (message: string): void => {
    banner.textContent = message;
    banner.style.display = "block";
    window.setTimeout(() => {
      banner.style.display = "none";
    }, 5000);
  };

  const session = new AnnotationSession(client, {
    onMask: (labels, clicks) => {
      viewer.setMask(labels, clicks);
      viewer.render();
    },
    onError: showError,
    onStats: (s) => {
      const decode =
        s.lastDecodeMs === null ? "-" : `${s.lastDecodeMs.toFixed(0)} ms`;
      const queued = s.queued > 0 ? ` | queued ${s.queued}` : "";
      stats.textContent =
        `${s.numPoints} pts | ${s.numVoxels} voxels | ` +
        `backbone ${s.backboneMs.toFixed(0)} ms | decode ${decode} | ` +
        `${s.numClicks} clicks${queued}`;
    },
  });

  const updateRegionBadge = (): void => {
    const region = session.state.activeRegion;
    regionBadge.textContent = region === 0 ? "background" : `region ${region}`;
    regionBadge.style.background = regionColorCss(region);
  };

  viewer.setCamera(session.state.camera);
  updateRegionBadge();

  session
    .open({ scene_id: sceneId })
    .then(() => {
      viewer.setScene(session.points, session.colors);
      viewer.render();
    })
    .catch((err) => showError(describeError(err)));

  canvas.addEventListener("click", (event) => {
    const rect = canvas.getBoundingClientRect();
    const pick = pickPoint(
      session.points,
      viewer.camera,
      event.clientX - rect.left,
      event.clientY - rect.top,
      rect.width,
      rect.height,
      PICK_RADIUS_PX,
    );
    if (pick === null) {
      hint.textContent = "no point under cursor";
      window.setTimeout(() => (hint.textContent = ""), 1500);
      return;
    }
    const point = session.points[pick.index];
    if (point === undefined) {
      return;
    }
    const region = event.ctrlKey ? 0 : session.state.activeRegion;
    session.placeClick([point[0] ?? 0, point[1] ?? 0, point[2] ?? 0], region);
  });

  window.addEventListener("keydown", (event) => {
    if (event.key >= "1" && event.key <= "9") {
      session.state.activeRegion = Number(event.key);
      updateRegionBadge();
    } else if (event.key === "0") {
      session.state.activeRegion = 0;
      updateRegionBadge();
    } else if (event.key === "u") {
      void session.undo();
    } else if (event.key === "m") {
      const current = COLOR_MODES.indexOf(session.state.colorMode);
      const next = COLOR_MODES[(current + 1) % COLOR_MODES.length] ?? "blended";
      session.state.colorMode = next;
      viewer.setColorMode(next);
      viewer.render();
    } else if (event.key === "[" || event.key === "]") {
      const total = session.state.rounds.length;
      const current = session.state.viewingRound ?? total - 1;
      const target = event.key === "[" ? current - 1 : current + 1;
      if (target >= 0 && target < total) {
        session.replayRound(target);
        viewer.render();
      }
    } else if (event.key === "e") {
      session
        .exportLabels()
        .then((data) => {
          const blob = new Blob([JSON.stringify(data)], {
            type: "application/json",
          });
          const link = document.createElement("a");
          link.href = URL.createObjectURL(blob);
          link.download = `${data.session_id}.json`;
          link.click();
          URL.revokeObjectURL(link.href);
        })
        .catch((err) => showError(describeError(err)));
    }
  });

  // Simple orbit: drag rotates around the target, wheel zooms.
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("mousedown", (event) => {
    if (event.button === 2) {
      dragging = true;
      lastX = event.clientX;
      lastY = event.clientY;
    }
  });
  canvas.addEventListener("contextmenu", (event) => event.preventDefault());
  window.addEventListener("mouseup", () => (dragging = false));
  window.addEventListener("mousemove", (event) => {
    if (!dragging) {
      return;
    }
    const pose = session.state.camera;
    const dx = (event.clientX - lastX) * 0.01;
    const dy = (event.clientY - lastY) * 0.01;
    lastX = event.clientX;
    lastY = event.clientY;
    const [tx, ty, tz] = pose.target;
    const rx = pose.position[0] - tx;
    const ry = pose.position[1] - ty;
    const rz = pose.position[2] - tz;
    const azimuth = Math.atan2(ry, rx) - dx;
    const horizontal = Math.hypot(rx, ry);
    const elevation = Math.min(
      1.5,
      Math.max(-1.5, Math.atan2(rz, horizontal) + dy),
    );
    const radius = Math.hypot(rx, ry, rz);
    pose.position = [
      tx + radius * Math.cos(elevation) * Math.cos(azimuth),
      ty + radius * Math.cos(elevation) * Math.sin(azimuth),
      tz + radius * Math.sin(elevation),
    ];
    viewer.setCamera(pose);
    viewer.render();
  });
  canvas.addEventListener("wheel", (event) => {
    event.preventDefault();
    const pose = session.state.camera;
    const scale = event.deltaY > 0 ? 1.1 : 0.9;
    const [tx, ty, tz] = pose.target;
    pose.position = [
      tx + (pose.position[0] - tx) * scale,
      ty + (pose.position[1] - ty) * scale,
      tz + (pose.position[2] - tz) * scale,
    ];
    viewer.setCamera(pose);
    viewer.render();
  });

  window.addEventListener("resize", () => {
    viewer.resize();
    viewer.render();
  });
}

main();
